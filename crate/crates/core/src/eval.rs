//! Alignment-quality metrics: timing errors against annotations, accuracy
//! at fixed error margins, inflection-detection accuracy, and the
//! Diebold-Mariano paired significance test.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dtw::AlignmentPath;
use crate::error::{Error, Result};
use crate::structure::InflectionPointSet;

/// Annotated events as (performance time, score time) in seconds, sorted
/// strictly by performance time.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMap {
    pub events: Vec<(f64, f64)>,
}

impl GroundTruthMap {
    pub fn new(events: Vec<(f64, f64)>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::EmptyInput("ground truth has no events"));
        }
        for (k, w) in events.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Invalid(format!(
                    "ground-truth performance times must strictly increase (events {k} and {})",
                    k + 1
                )));
            }
        }
        if events
            .iter()
            .any(|&(a, b)| !a.is_finite() || !b.is_finite())
        {
            return Err(Error::Invalid("ground-truth times must be finite".into()));
        }
        Ok(GroundTruthMap { events })
    }
}

/// Error margins reported by the accuracy tables, in milliseconds.
pub const MARGINS_MS: [u32; 4] = [25, 50, 100, 200];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub thresholds_ms: Vec<u32>,
    pub accuracy_pct: Vec<f64>,
    pub n_events: usize,
}

/// Signed alignment errors, one per annotated event: estimated score time
/// minus reference score time, with the estimate read off the path by
/// linear interpolation in performance time.
pub fn alignment_errors(
    path: &AlignmentPath,
    perf_hop: f64,
    score_hop: f64,
    gt: &GroundTruthMap,
) -> Result<Vec<f64>> {
    if path.points.is_empty() {
        return Err(Error::EmptyInput("alignment path is empty"));
    }
    // Collapse vertical runs: keep the first score frame per performance
    // frame, matching the first-pairing rule used for index sequences.
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(path.points.len());
    for &(i, j) in &path.points {
        let pt = i as f64 * perf_hop;
        let st = j as f64 * score_hop;
        if knots.last().map(|&(t, _)| t == pt).unwrap_or(false) {
            continue;
        }
        knots.push((pt, st));
    }

    let start = knots.first().unwrap().0;
    let end = knots.last().unwrap().0;
    let mut errors = Vec::with_capacity(gt.events.len());
    for &(perf_t, score_ref) in &gt.events {
        if perf_t < start || perf_t > end {
            return Err(Error::EventOutsideSpan {
                time_s: perf_t,
                start_s: start,
                end_s: end,
            });
        }
        let idx = knots.partition_point(|&(t, _)| t <= perf_t);
        let estimated = if idx == knots.len() {
            knots[knots.len() - 1].1
        } else {
            let (t0, s0) = knots[idx - 1];
            let (t1, s1) = knots[idx];
            s0 + (s1 - s0) * (perf_t - t0) / (t1 - t0)
        };
        errors.push(estimated - score_ref);
    }
    Ok(errors)
}

/// Percentage of events whose absolute error falls strictly below each
/// margin in [`MARGINS_MS`].
pub fn accuracy_at_margins(errors: &[f64]) -> Result<AccuracyReport> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("no alignment errors to score"));
    }
    let n = errors.len() as f64;
    let accuracy_pct = MARGINS_MS
        .iter()
        .map(|&ms| {
            let tau = ms as f64 / 1000.0;
            100.0 * errors.iter().filter(|e| e.abs() < tau).count() as f64 / n
        })
        .collect();
    Ok(AccuracyReport {
        thresholds_ms: MARGINS_MS.to_vec(),
        accuracy_pct,
        n_events: errors.len(),
    })
}

/// Greedy in-order one-to-one matching of predicted against ground-truth
/// inflection points; a prediction matches when both coordinates lie
/// within `tol_frames` of an unmatched ground-truth point.
pub fn inflection_accuracy(
    pred: &InflectionPointSet,
    gt: &InflectionPointSet,
    tol_frames: usize,
) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 100.0;
    }
    let denom = pred.len().max(gt.len());
    let mut taken = vec![false; gt.len()];
    let mut matched = 0usize;
    for &(pa, pb) in &pred.points {
        for (k, &(ga, gb)) in gt.points.iter().enumerate() {
            if taken[k] {
                continue;
            }
            let da = pa.abs_diff(ga);
            let db = pb.abs_diff(gb);
            if da <= tol_frames && db <= tol_frames {
                taken[k] = true;
                matched += 1;
                break;
            }
        }
    }
    100.0 * matched as f64 / denom as f64
}

/// Outcome of the Diebold-Mariano test on squared-error loss
/// differentials, with the small-sample correction at horizon 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmTest {
    pub n: usize,
    /// None when the loss differential has zero variance.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
}

impl DmTest {
    pub fn is_degenerate(&self) -> bool {
        self.statistic.is_none()
    }
}

/// Paired comparison of two error sequences over the same events.
pub fn diebold_mariano(errors_a: &[f64], errors_b: &[f64]) -> Result<DmTest> {
    if errors_a.len() != errors_b.len() {
        return Err(Error::ShapeMismatch(format!(
            "paired error lists differ in length: {} vs {}",
            errors_a.len(),
            errors_b.len()
        )));
    }
    let n = errors_a.len();
    if n < 8 {
        return Err(Error::Invalid(format!(
            "Diebold-Mariano needs at least 8 paired events, got {n}"
        )));
    }
    let d: Vec<f64> = errors_a
        .iter()
        .zip(errors_b)
        .map(|(a, b)| a * a - b * b)
        .collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf;
    if var == 0.0 {
        return Ok(DmTest {
            n,
            statistic: None,
            p_value: None,
        });
    }
    // Harvey-Leybourne-Newbold correction at horizon h = 1.
    let h = 1.0;
    let correction = ((nf + 1.0 - 2.0 * h + h * (h - 1.0) / nf) / nf).sqrt();
    let statistic = correction * mean / (var / nf).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| Error::Invalid(format!("t distribution: {e}")))?;
    let p_value = 2.0 * (1.0 - t.cdf(statistic.abs()));
    Ok(DmTest {
        n,
        statistic: Some(statistic),
        p_value: Some(p_value),
    })
}

/// One piece's evaluation, as serialized into report JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PieceReport {
    pub name: String,
    pub n_events: usize,
    pub thresholds_ms: Vec<u32>,
    pub accuracy_pct: Vec<f64>,
    pub mean_abs_error_s: f64,
}

impl PieceReport {
    pub fn from_errors(name: &str, errors: &[f64]) -> Result<Self> {
        let acc = accuracy_at_margins(errors)?;
        Ok(PieceReport {
            name: name.to_string(),
            n_events: errors.len(),
            thresholds_ms: acc.thresholds_ms,
            accuracy_pct: acc.accuracy_pct,
            mean_abs_error_s: errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64,
        })
    }
}

/// Aggregates per-piece accuracies: the mean of per-piece percentages by
/// default, or event-pooled percentages when `pool` is set.
pub fn aggregate_accuracy(pieces: &[PieceReport], pool: bool) -> Result<AccuracyReport> {
    if pieces.is_empty() {
        return Err(Error::EmptyInput("no pieces to aggregate"));
    }
    let k = MARGINS_MS.len();
    let mut accuracy_pct = vec![0.0f64; k];
    let total_events: usize = pieces.iter().map(|p| p.n_events).sum();
    for piece in pieces {
        for (i, &pct) in piece.accuracy_pct.iter().enumerate() {
            if pool {
                accuracy_pct[i] += pct * piece.n_events as f64;
            } else {
                accuracy_pct[i] += pct;
            }
        }
    }
    for slot in accuracy_pct.iter_mut() {
        *slot /= if pool {
            total_events as f64
        } else {
            pieces.len() as f64
        };
    }
    Ok(AccuracyReport {
        thresholds_ms: MARGINS_MS.to_vec(),
        accuracy_pct,
        n_events: total_events,
    })
}

/// Ground-truth CSV: a `perf_time_s,score_time_s` header then one event
/// per row. `#` comment lines are skipped.
pub fn write_ground_truth_csv(gt: &GroundTruthMap, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "perf_time_s,score_time_s")?;
    for &(p, s) in &gt.events {
        writeln!(w, "{p},{s}")?;
    }
    Ok(())
}

pub fn read_ground_truth_csv(r: impl BufRead, path: &Path) -> Result<GroundTruthMap> {
    let malformed = |line: usize, detail: String| Error::MalformedCsv {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut events = Vec::new();
    let mut saw_header = false;
    for (idx, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !saw_header {
            if trimmed != "perf_time_s,score_time_s" {
                return Err(malformed(line_no, "missing ground-truth header".into()));
            }
            saw_header = true;
            continue;
        }
        let (a, b) = trimmed
            .split_once(',')
            .ok_or_else(|| malformed(line_no, "expected two columns".into()))?;
        let pt: f64 = a
            .trim()
            .parse()
            .map_err(|_| malformed(line_no, format!("bad perf_time_s `{a}`")))?;
        let st: f64 = b
            .trim()
            .parse()
            .map_err(|_| malformed(line_no, format!("bad score_time_s `{b}`")))?;
        events.push((pt, st));
    }
    GroundTruthMap::new(events)
}

pub fn load_ground_truth_csv(path: impl AsRef<Path>) -> Result<GroundTruthMap> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ground_truth_csv(std::io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diagonal_path(n: usize) -> AlignmentPath {
        AlignmentPath {
            points: (0..n).map(|i| (i, i)).collect(),
            total_cost: 0.0,
            jumps: Vec::new(),
        }
    }

    #[test]
    fn exact_alignment_has_zero_errors() {
        let path = diagonal_path(50);
        let gt = GroundTruthMap::new((0..10).map(|k| (k as f64 * 0.4, k as f64 * 0.4)).collect())
            .unwrap();
        let errors = alignment_errors(&path, 0.1, 0.1, &gt).unwrap();
        assert!(errors.iter().all(|&e| e.abs() < 1e-12));
    }

    #[test]
    fn constant_offset_is_recovered() {
        // Path maps perf frame i to score frame i + 1 at hop 0.1: every
        // estimate is 0.1 s late.
        let path = AlignmentPath {
            points: (0..40).map(|i| (i, i + 1)).collect(),
            total_cost: 0.0,
            jumps: Vec::new(),
        };
        let gt =
            GroundTruthMap::new((0..8).map(|k| (0.3 + k as f64 * 0.4, 0.3 + k as f64 * 0.4)).collect())
                .unwrap();
        let errors = alignment_errors(&path, 0.1, 0.1, &gt).unwrap();
        for e in errors {
            assert!((e - 0.1).abs() < 1e-9, "error {e}");
        }
    }

    #[test]
    fn endpoint_events_are_included() {
        let path = diagonal_path(11);
        let gt = GroundTruthMap::new(vec![(0.0, 0.0), (1.0, 1.0)]).unwrap();
        let errors = alignment_errors(&path, 0.1, 0.1, &gt).unwrap();
        assert_eq!(errors.len(), 2);
        let outside = GroundTruthMap::new(vec![(1.5, 1.5)]).unwrap();
        assert!(matches!(
            alignment_errors(&path, 0.1, 0.1, &outside),
            Err(Error::EventOutsideSpan { .. })
        ));
    }

    #[test]
    fn margins_hand_count() {
        let report = accuracy_at_margins(&[0.03, 0.07, 0.15, 0.30]).unwrap();
        assert_eq!(report.accuracy_pct, vec![0.0, 25.0, 50.0, 75.0]);
    }

    #[test]
    fn margins_all_zero_is_perfect() {
        let report = accuracy_at_margins(&[0.0; 7]).unwrap();
        assert_eq!(report.accuracy_pct, vec![100.0; 4]);
    }

    #[test]
    fn margin_boundary_is_strict() {
        let report = accuracy_at_margins(&[0.05]).unwrap();
        // Exactly 50 ms: excluded at 50 ms, included at 100 ms.
        assert_eq!(report.accuracy_pct, vec![0.0, 0.0, 100.0, 100.0]);
    }

    #[test]
    fn margins_monotone() {
        let errors = [0.01, 0.03, 0.06, 0.11, 0.19, 0.25, 0.4];
        let report = accuracy_at_margins(&errors).unwrap();
        for w in report.accuracy_pct.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn inflection_accuracy_cases() {
        let gt = InflectionPointSet::new(vec![(10, 20), (30, 5)]).unwrap();
        assert_eq!(inflection_accuracy(&gt, &gt, 0), 100.0);
        assert_eq!(inflection_accuracy(&InflectionPointSet::empty(), &gt, 5), 0.0);
        let pred = InflectionPointSet::new(vec![(11, 21), (90, 90)]).unwrap();
        assert_eq!(inflection_accuracy(&pred, &gt, 5), 50.0);
        assert_eq!(
            inflection_accuracy(&InflectionPointSet::empty(), &InflectionPointSet::empty(), 5),
            100.0
        );
    }

    #[test]
    fn dm_degenerate_on_equal_errors() {
        let e: Vec<f64> = (0..20).map(|k| k as f64 * 0.01).collect();
        let out = diebold_mariano(&e, &e).unwrap();
        assert!(out.is_degenerate());
    }

    #[test]
    fn dm_antisymmetric() {
        let a: Vec<f64> = (0..16).map(|k| 0.02 + (k as f64 * 0.37).sin().abs() * 0.1).collect();
        let b: Vec<f64> = (0..16).map(|k| 0.05 + (k as f64 * 0.91).cos().abs() * 0.08).collect();
        let ab = diebold_mariano(&a, &b).unwrap();
        let ba = diebold_mariano(&b, &a).unwrap();
        let (s_ab, s_ba) = (ab.statistic.unwrap(), ba.statistic.unwrap());
        assert!((s_ab + s_ba).abs() < 1e-12);
        assert!((ab.p_value.unwrap() - ba.p_value.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dm_detects_uniformly_larger_errors() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut significant = 0;
        for _ in 0..50 {
            let b: Vec<f64> = (0..50).map(|_| rng.gen_range(0.01..0.05)).collect();
            let a: Vec<f64> = b.iter().map(|x| x * 2.0).collect();
            let out = diebold_mariano(&a, &b).unwrap();
            assert!(out.statistic.unwrap() > 0.0);
            if out.p_value.unwrap() < 0.05 {
                significant += 1;
            }
        }
        // Doubling every error is detected essentially always.
        assert!(significant >= 48, "only {significant}/50 significant");
    }

    #[test]
    fn dm_invariant_under_joint_permutation() {
        let a: Vec<f64> = (0..12).map(|k| 0.01 * (k as f64 + 1.0)).collect();
        let b: Vec<f64> = (0..12).map(|k| 0.015 * (12.0 - k as f64)).collect();
        let base = diebold_mariano(&a, &b).unwrap();
        let perm: Vec<usize> = vec![5, 2, 9, 0, 11, 7, 1, 3, 10, 4, 8, 6];
        let pa: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
        let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
        let permuted = diebold_mariano(&pa, &pb).unwrap();
        assert!((base.statistic.unwrap() - permuted.statistic.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn ground_truth_csv_round_trip() {
        let gt = GroundTruthMap::new(vec![(0.0, 0.1), (1.5, 1.4), (2.75, 2.9)]).unwrap();
        let mut buf = Vec::new();
        write_ground_truth_csv(&gt, &mut buf).unwrap();
        let back = read_ground_truth_csv(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, gt);
    }

    #[test]
    fn aggregate_mean_vs_pool() {
        let a = PieceReport {
            name: "a".into(),
            n_events: 10,
            thresholds_ms: MARGINS_MS.to_vec(),
            accuracy_pct: vec![100.0; 4],
            mean_abs_error_s: 0.0,
        };
        let b = PieceReport {
            name: "b".into(),
            n_events: 30,
            thresholds_ms: MARGINS_MS.to_vec(),
            accuracy_pct: vec![0.0; 4],
            mean_abs_error_s: 1.0,
        };
        let mean = aggregate_accuracy(&[a.clone(), b.clone()], false).unwrap();
        assert_eq!(mean.accuracy_pct, vec![50.0; 4]);
        let pooled = aggregate_accuracy(&[a, b], true).unwrap();
        assert_eq!(pooled.accuracy_pct, vec![25.0; 4]);
    }
}
