//! Classic dynamic time warping: accumulated-cost recurrence, deterministic
//! backtracking, and an exhaustive oracle for testing.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::CrossSimilarityMatrix;

/// An ordered list of (performance frame, score frame) pairs.
///
/// `jumps` holds indices `k` such that the transition from `points[k-1]`
/// to `points[k]` was a structural jump edge rather than a DTW step; it is
/// empty for classic alignments.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    pub points: Vec<(usize, usize)>,
    pub total_cost: f64,
    pub jumps: Vec<usize>,
}

impl AlignmentPath {
    /// True when consecutive steps all lie in {(+1,0), (0,+1), (+1,+1)}.
    pub fn is_classic(&self) -> bool {
        self.jumps.is_empty()
            && self.points.windows(2).all(|w| {
                let (i0, j0) = w[0];
                let (i1, j1) = w[1];
                let di = i1 as i64 - i0 as i64;
                let dj = j1 as i64 - j0 as i64;
                matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
            })
    }
}

/// Accumulated-cost matrix `D` filled by the three-step recurrence.
#[derive(Debug, Clone)]
pub struct AccumulatedCostMatrix {
    values: Vec<f64>,
    p: usize,
    q: usize,
}

impl AccumulatedCostMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.q + j]
    }

    pub fn rows(&self) -> usize {
        self.p
    }

    pub fn cols(&self) -> usize {
        self.q
    }
}

pub(crate) fn accumulate(sim: &CrossSimilarityMatrix) -> AccumulatedCostMatrix {
    let (p, q) = (sim.rows(), sim.cols());
    let mut d = vec![0.0f64; p * q];
    for i in 0..p {
        for j in 0..q {
            let cost = sim.at(i, j);
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => d[j - 1],
                (_, 0) => d[(i - 1) * q],
                _ => {
                    let diag = d[(i - 1) * q + j - 1];
                    let vert = d[i * q + j - 1];
                    let horiz = d[(i - 1) * q + j];
                    diag.min(vert).min(horiz)
                }
            };
            d[i * q + j] = cost + best;
        }
    }
    AccumulatedCostMatrix { values: d, p, q }
}

/// Optimal classic DTW alignment of the given cost matrix.
///
/// Ties during backtracking prefer the diagonal step, then the
/// score-advance step, then the performance-advance step.
pub fn dtw_align(sim: &CrossSimilarityMatrix) -> Result<AlignmentPath> {
    let (p, q) = (sim.rows(), sim.cols());
    let d = accumulate(sim);

    let mut points = Vec::with_capacity(p + q);
    let (mut i, mut j) = (p - 1, q - 1);
    points.push((i, j));
    while i > 0 || j > 0 {
        let (ni, nj) = match (i, j) {
            (0, _) => (0, j - 1),
            (_, 0) => (i - 1, 0),
            _ => {
                let diag = d.at(i - 1, j - 1);
                let vert = d.at(i, j - 1);
                let horiz = d.at(i - 1, j);
                let m = diag.min(vert).min(horiz);
                if diag == m {
                    (i - 1, j - 1)
                } else if vert == m {
                    (i, j - 1)
                } else {
                    (i - 1, j)
                }
            }
        };
        points.push((ni, nj));
        i = ni;
        j = nj;
    }
    points.reverse();

    Ok(AlignmentPath {
        points,
        total_cost: d.at(p - 1, q - 1),
        jumps: Vec::new(),
    })
}

/// Bound on `p + q` above which exhaustive enumeration is refused.
pub const BRUTE_FORCE_BOUND: usize = 16;

/// Exhaustive minimum over every monotone path from (0,0) to (p-1,q-1).
/// Testing oracle only; rejects instances with `p + q > 16`.
pub fn dtw_brute_force(sim: &CrossSimilarityMatrix) -> Result<AlignmentPath> {
    let (p, q) = (sim.rows(), sim.cols());
    if p + q > BRUTE_FORCE_BOUND {
        return Err(Error::OracleBound {
            detail: format!("p + q = {} exceeds {BRUTE_FORCE_BOUND}", p + q),
        });
    }

    let mut best_cost = f64::INFINITY;
    let mut best_path: Vec<(usize, usize)> = Vec::new();
    let mut current = vec![(0usize, 0usize)];
    let mut cost_so_far = sim.at(0, 0);

    fn recurse(
        sim: &CrossSimilarityMatrix,
        current: &mut Vec<(usize, usize)>,
        cost_so_far: f64,
        best_cost: &mut f64,
        best_path: &mut Vec<(usize, usize)>,
    ) {
        let (i, j) = *current.last().unwrap();
        if i == sim.rows() - 1 && j == sim.cols() - 1 {
            if cost_so_far < *best_cost {
                *best_cost = cost_so_far;
                *best_path = current.clone();
            }
            return;
        }
        for (di, dj) in [(1, 1), (0, 1), (1, 0)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < sim.rows() && nj < sim.cols() {
                current.push((ni, nj));
                recurse(
                    sim,
                    current,
                    cost_so_far + sim.at(ni, nj),
                    best_cost,
                    best_path,
                );
                current.pop();
            }
        }
    }

    recurse(sim, &mut current, cost_so_far, &mut best_cost, &mut best_path);
    cost_so_far = best_cost;

    Ok(AlignmentPath {
        points: best_path,
        total_cost: cost_so_far,
        jumps: Vec::new(),
    })
}

/// For each performance frame, the first score frame paired with it.
pub fn path_to_score_indices(path: &AlignmentPath, p: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(p);
    for target in 0..p {
        let first = path
            .points
            .iter()
            .find(|&&(i, _)| i == target)
            .ok_or(Error::PathCoverage { frame: target })?;
        out.push(first.1);
    }
    Ok(out)
}

/// Writes the alignment CSV: `perf_frame,score_frame,perf_time_s,score_time_s`
/// with a trailing `jump` column when the path carries jump edges.
pub fn write_alignment_csv(
    path_obj: &AlignmentPath,
    perf_hop: f64,
    score_hop: f64,
    with_jump_column: bool,
    w: &mut impl Write,
) -> std::io::Result<()> {
    if with_jump_column {
        writeln!(w, "perf_frame,score_frame,perf_time_s,score_time_s,jump")?;
    } else {
        writeln!(w, "perf_frame,score_frame,perf_time_s,score_time_s")?;
    }
    for (k, &(i, j)) in path_obj.points.iter().enumerate() {
        let pt = i as f64 * perf_hop;
        let st = j as f64 * score_hop;
        if with_jump_column {
            let jump = if path_obj.jumps.contains(&k) { 1 } else { 0 };
            writeln!(w, "{i},{j},{pt},{st},{jump}")?;
        } else {
            writeln!(w, "{i},{j},{pt},{st}")?;
        }
    }
    Ok(())
}

/// Reads an alignment CSV produced by [`write_alignment_csv`]; `#` comment
/// lines are skipped. Returns the path and the (perf, score) hop seconds
/// inferred from the first row with nonzero frame indices.
pub fn read_alignment_csv(r: impl BufRead, path: &Path) -> Result<(AlignmentPath, f64, f64)> {
    let malformed = |line: usize, detail: String| Error::MalformedCsv {
        path: path.to_path_buf(),
        line,
        detail,
    };

    let mut points = Vec::new();
    let mut jumps = Vec::new();
    let mut times: Vec<(f64, f64)> = Vec::new();
    let mut saw_header = false;

    for (idx, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !saw_header {
            if !trimmed.starts_with("perf_frame,score_frame") {
                return Err(malformed(line_no, "missing alignment header".into()));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 && fields.len() != 5 {
            return Err(malformed(
                line_no,
                format!("expected 4 or 5 columns, found {}", fields.len()),
            ));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|_| malformed(line_no, format!("bad perf_frame `{}`", fields[0])))?;
        let j: usize = fields[1]
            .parse()
            .map_err(|_| malformed(line_no, format!("bad score_frame `{}`", fields[1])))?;
        let pt: f64 = fields[2]
            .parse()
            .map_err(|_| malformed(line_no, format!("bad perf_time_s `{}`", fields[2])))?;
        let st: f64 = fields[3]
            .parse()
            .map_err(|_| malformed(line_no, format!("bad score_time_s `{}`", fields[3])))?;
        if fields.len() == 5 && fields[4].trim() == "1" {
            jumps.push(points.len());
        }
        times.push((pt, st));
        points.push((i, j));
    }

    if points.is_empty() {
        return Err(Error::EmptyInput("alignment csv has no rows"));
    }

    let perf_hop = points
        .iter()
        .zip(&times)
        .find(|(&(i, _), _)| i > 0)
        .map(|(&(i, _), &(pt, _))| pt / i as f64)
        .unwrap_or(1.0);
    let score_hop = points
        .iter()
        .zip(&times)
        .find(|(&(_, j), _)| j > 0)
        .map(|(&(_, j), &(_, st))| st / j as f64)
        .unwrap_or(1.0);

    Ok((
        AlignmentPath {
            points,
            total_cost: 0.0,
            jumps,
        },
        perf_hop,
        score_hop,
    ))
}
