//! Structure-aware alignment: inflection points, jump-capable DTW, and
//! synthetic split-join perturbation with ground-truth extrapolation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dtw::{self, AlignmentPath};
use crate::error::{Error, Result};
use crate::eval::GroundTruthMap;
use crate::features::{CrossSimilarityMatrix, FeatureSequence};

/// Half-extent of the landing neighbourhood around each subpath start.
pub const JUMP_WINDOW: usize = 5;

/// Ordered (performance frame, score frame) coordinates marking structural
/// jumps. Points alternate subpath-end (odd ordinal) and subpath-start
/// (even ordinal); performance coordinates strictly increase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InflectionPointSet {
    pub points: Vec<(usize, usize)>,
}

impl InflectionPointSet {
    pub fn new(points: Vec<(usize, usize)>) -> Result<Self> {
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidInflections(format!(
                    "performance coordinates must strictly increase: {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(InflectionPointSet { points })
    }

    pub fn empty() -> Self {
        InflectionPointSet { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// (subpath-end, subpath-start) pairs in order.
    pub fn pairs(&self) -> impl Iterator<Item = ((usize, usize), (usize, usize))> + '_ {
        self.points.chunks_exact(2).map(|c| (c[0], c[1]))
    }

    fn validate_for(&self, p: usize, q: usize) -> Result<()> {
        if self.points.len() % 2 != 0 {
            return Err(Error::InvalidInflections(format!(
                "inflection count must be even, got {}",
                self.points.len()
            )));
        }
        for &(a, b) in &self.points {
            if a >= p || b >= q {
                return Err(Error::InvalidInflections(format!(
                    "point ({a}, {b}) outside {p} x {q} matrix"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("inflection set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: InflectionPointSet = serde_json::from_str(text).map_err(|e| {
            Error::MalformedJson {
                path: "<inflection json>".into(),
                detail: e.to_string(),
            }
        })?;
        InflectionPointSet::new(parsed.points)
    }
}

/// One structural discontinuity: the performance continues at
/// `perf_split_frame` from score frame `score_target_frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpliceOp {
    pub kind: SpliceKind,
    pub perf_split_frame: usize,
    pub score_target_frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpliceKind {
    BackwardJump,
    ForwardJump,
}

/// A jump edge usable by the extended recurrence: from `source` (the end of
/// a synchronous subpath) into any in-bounds cell of the window centred on
/// `landing` (the start of the next subpath).
#[derive(Debug, Clone, Copy)]
struct JumpEdge {
    source: (usize, usize),
    landing: (usize, usize),
}

impl JumpEdge {
    /// A cell can take this edge iff it lies in the clipped window around
    /// `landing` and comes after `source` in row-major fill order, which
    /// keeps the single forward DP pass well defined and the performance
    /// axis monotone.
    fn applies_to(&self, m: usize, n: usize, p: usize, q: usize) -> bool {
        let (la, lb) = self.landing;
        let (sa, sb) = self.source;
        let row_ok = m + JUMP_WINDOW >= la && m <= la + JUMP_WINDOW && m < p;
        let col_ok = n + JUMP_WINDOW >= lb && n <= lb + JUMP_WINDOW && n < q;
        let causal = m > sa || (m == sa && n > sb);
        row_ok && col_ok && causal
    }
}

fn jump_edges(infl: &InflectionPointSet) -> Vec<JumpEdge> {
    infl.pairs()
        .map(|(end, start)| JumpEdge {
            source: end,
            landing: start,
        })
        .collect()
}

/// DTW with extra predecessors at inflection points: every cell in the
/// window around a subpath start may also continue from the matching
/// subpath end, at no edge cost beyond the landing cell's own.
///
/// With an empty inflection set this reduces exactly to [`dtw::dtw_align`].
pub fn jump_dtw_align(
    sim: &CrossSimilarityMatrix,
    infl: &InflectionPointSet,
) -> Result<AlignmentPath> {
    let (p, q) = (sim.rows(), sim.cols());
    infl.validate_for(p, q)?;
    if infl.is_empty() {
        return dtw::dtw_align(sim);
    }
    let edges = jump_edges(infl);

    let mut d = vec![0.0f64; p * q];
    for m in 0..p {
        for n in 0..q {
            let cost = sim.at(m, n);
            let mut best = match (m, n) {
                (0, 0) => 0.0,
                (0, _) => d[n - 1],
                (_, 0) => d[(m - 1) * q],
                _ => {
                    let diag = d[(m - 1) * q + n - 1];
                    let vert = d[m * q + n - 1];
                    let horiz = d[(m - 1) * q + n];
                    diag.min(vert).min(horiz)
                }
            };
            for e in &edges {
                if e.applies_to(m, n, p, q) {
                    best = best.min(d[e.source.0 * q + e.source.1]);
                }
            }
            d[m * q + n] = cost + best;
        }
    }

    // Backtrack, preferring diagonal, then score-advance, then
    // performance-advance, then jump edges; a jump is taken only when it
    // is strictly better than every standard predecessor.
    let mut rev: Vec<((usize, usize), bool)> = Vec::new();
    let (mut m, mut n) = (p - 1, q - 1);
    rev.push(((m, n), false));
    let mut fired = vec![false; edges.len()];
    while m > 0 || n > 0 {
        let mut candidates: Vec<((usize, usize), f64, Option<usize>)> = Vec::new();
        if m > 0 && n > 0 {
            candidates.push(((m - 1, n - 1), d[(m - 1) * q + n - 1], None));
        }
        if n > 0 {
            candidates.push(((m, n - 1), d[m * q + n - 1], None));
        }
        if m > 0 {
            candidates.push(((m - 1, n), d[(m - 1) * q + n], None));
        }
        for (k, e) in edges.iter().enumerate() {
            if e.applies_to(m, n, p, q) {
                candidates.push((e.source, d[e.source.0 * q + e.source.1], Some(k)));
            }
        }
        let min = candidates
            .iter()
            .map(|c| c.1)
            .fold(f64::INFINITY, f64::min);
        let chosen = candidates.iter().find(|c| c.1 == min).unwrap();
        if let Some(k) = chosen.2 {
            debug_assert!(!fired[k], "a jump pair fired twice on one path");
            fired[k] = true;
        }
        rev.push((chosen.0, chosen.2.is_some()));
        m = chosen.0 .0;
        n = chosen.0 .1;
    }
    rev.reverse();

    let mut points = Vec::with_capacity(rev.len());
    let mut jumps = Vec::new();
    for (k, (pt, _)) in rev.iter().enumerate() {
        // The flag marks the edge *into* the next point.
        if k > 0 && rev[k].1 {
            jumps.push(k);
        }
        points.push(*pt);
    }

    Ok(AlignmentPath {
        points,
        total_cost: d[(p - 1) * q + q - 1],
        jumps,
    })
}

/// Enumeration bound for the jump oracle.
pub const JUMP_BRUTE_FORCE_BOUND: usize = 14;

/// Exhaustive oracle over monotone paths augmented with optional
/// single-use jump edges. Rejects instances with `p + q > 14` or more
/// than one inflection pair.
pub fn jump_dtw_brute_force(
    sim: &CrossSimilarityMatrix,
    infl: &InflectionPointSet,
) -> Result<AlignmentPath> {
    let (p, q) = (sim.rows(), sim.cols());
    infl.validate_for(p, q)?;
    if p + q > JUMP_BRUTE_FORCE_BOUND {
        return Err(Error::OracleBound {
            detail: format!("p + q = {} exceeds {JUMP_BRUTE_FORCE_BOUND}", p + q),
        });
    }
    if infl.len() > 2 {
        return Err(Error::OracleBound {
            detail: format!("{} inflection points exceed the oracle's limit of 2", infl.len()),
        });
    }
    let edges = jump_edges(infl);

    struct Search<'a> {
        sim: &'a CrossSimilarityMatrix,
        edges: &'a [JumpEdge],
        best_cost: f64,
        best: Vec<((usize, usize), bool)>,
        current: Vec<((usize, usize), bool)>,
    }

    impl Search<'_> {
        fn recurse(&mut self, cost: f64, used: u32) {
            let (p, q) = (self.sim.rows(), self.sim.cols());
            let ((i, j), _) = *self.current.last().unwrap();
            if i == p - 1 && j == q - 1 {
                if cost < self.best_cost {
                    self.best_cost = cost;
                    self.best = self.current.clone();
                }
                return;
            }
            for (di, dj) in [(1, 1), (0, 1), (1, 0)] {
                let (ni, nj) = (i + di, j + dj);
                if ni < p && nj < q {
                    self.current.push(((ni, nj), false));
                    self.recurse(cost + self.sim.at(ni, nj), used);
                    self.current.pop();
                }
            }
            for (k, e) in self.edges.iter().enumerate() {
                if used & (1 << k) != 0 || e.source != (i, j) {
                    continue;
                }
                let (la, lb) = e.landing;
                for m in la.saturating_sub(JUMP_WINDOW)..=(la + JUMP_WINDOW).min(p - 1) {
                    for n in lb.saturating_sub(JUMP_WINDOW)..=(lb + JUMP_WINDOW).min(q - 1) {
                        if !e.applies_to(m, n, p, q) {
                            continue;
                        }
                        self.current.push(((m, n), true));
                        self.recurse(cost + self.sim.at(m, n), used | (1 << k));
                        self.current.pop();
                    }
                }
            }
        }
    }

    let mut search = Search {
        sim,
        edges: &edges,
        best_cost: f64::INFINITY,
        best: Vec::new(),
        current: vec![((0, 0), false)],
    };
    search.recurse(sim.at(0, 0), 0);

    let mut points = Vec::with_capacity(search.best.len());
    let mut jumps = Vec::new();
    for (k, (pt, via_jump)) in search.best.iter().enumerate() {
        if *via_jump {
            jumps.push(k);
        }
        points.push(*pt);
    }
    Ok(AlignmentPath {
        points,
        total_cost: search.best_cost,
        jumps,
    })
}

/// Everything produced by one synthetic perturbation.
#[derive(Debug, Clone)]
pub struct PerturbResult {
    pub features: FeatureSequence,
    pub ground_truth: GroundTruthMap,
    pub inflections: InflectionPointSet,
    pub splices: Vec<SpliceOp>,
    /// For each perturbed frame, the original frame it copies.
    pub frame_map: Vec<usize>,
}

/// Minimum frames per synchronous segment.
pub const MIN_SEGMENT_FRAMES: usize = 10;

/// Splits the sequence into `n_jumps + 1` segments and rejoins them with
/// backward (repeat) or forward (skip) jumps chosen by the seeded RNG.
/// Deterministic given (inputs, seed).
pub fn synth_perturb(
    seq: &FeatureSequence,
    gt: &GroundTruthMap,
    n_jumps: usize,
    seed: u64,
) -> Result<PerturbResult> {
    if !(1..=4).contains(&n_jumps) {
        return Err(Error::JumpCountOutOfRange(n_jumps));
    }
    let frames = seq.frames();
    let needed = 20 * n_jumps;
    if frames < needed {
        return Err(Error::SequenceTooShort {
            frames,
            jumps: n_jumps,
            needed,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Segment boundaries in original coordinates: n cuts, every chunk at
    // least MIN_SEGMENT_FRAMES long.
    let slack = frames - MIN_SEGMENT_FRAMES * (n_jumps + 1);
    let mut offsets: Vec<usize> = (0..n_jumps).map(|_| rng.gen_range(0..=slack)).collect();
    offsets.sort_unstable();
    let cuts: Vec<usize> = offsets
        .iter()
        .enumerate()
        .map(|(j, &u)| u + MIN_SEGMENT_FRAMES * (j + 1))
        .collect();

    let mut splices = Vec::with_capacity(n_jumps);
    let mut segment_starts = Vec::with_capacity(n_jumps + 1);
    segment_starts.push(0usize);
    let mut frame_map = Vec::new();
    let mut inflections = Vec::with_capacity(2 * n_jumps);

    let mut perf_pos = 0usize;
    for j in 0..n_jumps {
        let cut = cuts[j];
        let next_cut = if j + 1 < n_jumps { cuts[j + 1] } else { frames };
        let seg_start = segment_starts[j];
        frame_map.extend(seg_start..cut);
        perf_pos += cut - seg_start;

        let forward_feasible = next_cut >= cut + MIN_SEGMENT_FRAMES + 1;
        let backward = !forward_feasible || rng.gen_bool(0.5);
        let target = if backward {
            rng.gen_range(0..cut)
        } else {
            rng.gen_range(cut + 1..=next_cut - MIN_SEGMENT_FRAMES)
        };

        splices.push(SpliceOp {
            kind: if backward {
                SpliceKind::BackwardJump
            } else {
                SpliceKind::ForwardJump
            },
            perf_split_frame: perf_pos,
            score_target_frame: target,
        });
        inflections.push((perf_pos - 1, cut - 1));
        inflections.push((perf_pos, target));
        segment_starts.push(target);
    }
    frame_map.extend(segment_starts[n_jumps]..frames);

    let features = seq.reorder(&frame_map)?;
    let ground_truth = extrapolate_ground_truth(gt, &splices, seq.hop_seconds)?;
    let inflections = InflectionPointSet::new(inflections)?;

    Ok(PerturbResult {
        features,
        ground_truth,
        inflections,
        splices,
        frame_map,
    })
}

/// Re-indexes annotation events through the splice list: events inside a
/// repeated span appear once per pass at shifted performance times, and
/// events inside a skipped span are dropped.
pub fn extrapolate_ground_truth(
    gt: &GroundTruthMap,
    splices: &[SpliceOp],
    hop_seconds: f64,
) -> Result<GroundTruthMap> {
    if splices.is_empty() {
        return Ok(gt.clone());
    }
    if !(hop_seconds > 0.0) {
        return Err(Error::Invalid(format!(
            "hop_seconds must be positive, got {hop_seconds}"
        )));
    }

    // Segments of the original timeline: (orig_start, orig_end, perf_start),
    // all in frames; the final segment is unbounded above.
    let mut segments: Vec<(usize, Option<usize>, usize)> = Vec::new();
    let mut perf_prev = 0usize;
    let mut orig_prev = 0usize;
    for (idx, s) in splices.iter().enumerate() {
        if s.perf_split_frame <= perf_prev {
            return Err(Error::InvalidSplice(format!(
                "splice {idx} at performance frame {} does not advance past {}",
                s.perf_split_frame, perf_prev
            )));
        }
        let end = orig_prev + (s.perf_split_frame - perf_prev);
        match s.kind {
            SpliceKind::BackwardJump if s.score_target_frame >= end => {
                return Err(Error::InvalidSplice(format!(
                    "backward splice {idx} must land before frame {end}, got {}",
                    s.score_target_frame
                )))
            }
            SpliceKind::ForwardJump if s.score_target_frame <= end => {
                return Err(Error::InvalidSplice(format!(
                    "forward splice {idx} must land after frame {end}, got {}",
                    s.score_target_frame
                )))
            }
            _ => {}
        }
        segments.push((orig_prev, Some(end), perf_prev));
        perf_prev = s.perf_split_frame;
        orig_prev = s.score_target_frame;
    }
    segments.push((orig_prev, None, perf_prev));

    let mut events: Vec<(f64, f64)> = Vec::new();
    for &(orig_start, orig_end, perf_start) in &segments {
        let t0 = orig_start as f64 * hop_seconds;
        let t1 = orig_end.map(|e| e as f64 * hop_seconds);
        let shift = (perf_start as f64 - orig_start as f64) * hop_seconds;
        for &(perf_t, score_t) in &gt.events {
            if perf_t >= t0 && t1.map(|t| perf_t < t).unwrap_or(true) {
                events.push((perf_t + shift, score_t));
            }
        }
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    GroundTruthMap::new(events)
}
