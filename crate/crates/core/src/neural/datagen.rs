//! Synthetic datasets for the toy regressors, derived from random feature
//! sequences pushed through the split-join perturbation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::eval::GroundTruthMap;
use crate::features::{cross_similarity, CrossSimilarityMatrix, FeatureSequence, Origin};
use crate::structure::{synth_perturb, InflectionPointSet};

/// Toy grid extent shared by both tasks.
pub const GRID: usize = 64;

/// A smooth random walk on the unit sphere: consecutive frames stay
/// similar, so cross-similarity matrices show a broad low-cost valley
/// along the true alignment that survives grid resampling.
pub fn random_feature_sequence(frames: usize, bins: usize, rng: &mut impl Rng) -> FeatureSequence {
    let mut current: Vec<f64> = (0..bins).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut current);
    let rows = (0..frames)
        .map(|_| {
            for v in current.iter_mut() {
                *v += rng.gen_range(-0.35..0.35);
            }
            normalize(&mut current);
            current.clone()
        })
        .collect();
    FeatureSequence::from_rows(rows, 0.1, Origin::External).expect("non-empty")
}

fn normalize(row: &mut [f64]) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    row.iter_mut().for_each(|v| *v /= norm);
}

fn identity_ground_truth(frames: usize, hop: f64) -> GroundTruthMap {
    GroundTruthMap::new(
        (0..frames)
            .map(|i| ((i as f64 + 0.5) * hop, (i as f64 + 0.5) * hop))
            .collect(),
    )
    .expect("non-empty")
}

/// One inflection-detection instance: splices a random sequence, computes
/// the cross-similarity against the original, resamples to the toy grid
/// and rescales the inflection coordinates accordingly.
pub fn inflection_instance(
    seed: u64,
) -> Result<(CrossSimilarityMatrix, InflectionPointSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.gen_range(70..110);
    let seq = random_feature_sequence(frames, 12, &mut rng);
    let gt = identity_ground_truth(frames, seq.hop_seconds);
    let n_jumps = rng.gen_range(1..=2);
    let out = synth_perturb(&seq, &gt, n_jumps, rng.gen())?;

    let sim = cross_similarity(&out.features, &seq)?;
    let (p, q) = (sim.rows(), sim.cols());
    let resampled = sim.resample(GRID, GRID)?;

    let scaled: Vec<(usize, usize)> = out
        .inflections
        .points
        .iter()
        .map(|&(a, b)| (a * GRID / p, b * GRID / q))
        .collect();
    // Grid rescaling can collapse neighbouring coordinates; nudge the
    // performance axis forward to keep it strictly increasing.
    let mut fixed = Vec::with_capacity(scaled.len());
    let mut prev: Option<usize> = None;
    for (a, b) in scaled {
        let a = match prev {
            Some(p) if a <= p => (p + 1).min(GRID - 1),
            _ => a,
        };
        prev = Some(a);
        fixed.push((a, b));
    }
    Ok((resampled, InflectionPointSet::new(fixed)?))
}

/// The inflection training set for a run seed.
pub fn inflection_dataset(
    n: usize,
    seed: u64,
) -> Result<Vec<(CrossSimilarityMatrix, InflectionPointSet)>> {
    (0..n)
        .map(|k| inflection_instance(seed.wrapping_mul(1_000_003).wrapping_add(k as u64)))
        .collect()
}

/// One monotone alignment instance: a random warp of a random score
/// against itself, with the true score index per performance frame as the
/// target.
pub fn path_instance(seed: u64) -> Result<(CrossSimilarityMatrix, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let score = random_feature_sequence(GRID, 12, &mut rng);

    // Monotone warp from performance frames onto score frames: cumulative
    // random increments rescaled to span [0, GRID - 1] exactly.
    let mut cum = Vec::with_capacity(GRID);
    let mut acc = 0.0f64;
    for k in 0..GRID {
        if k > 0 {
            acc += rng.gen_range(0.05f64..1.0);
        }
        cum.push(acc);
    }
    let max = *cum.last().unwrap();
    let warp: Vec<usize> = cum
        .iter()
        .map(|&c| ((c / max) * (GRID - 1) as f64).round() as usize)
        .collect();

    let perf = score.reorder(&warp)?;
    let sim = cross_similarity(&perf, &score)?;
    let target = warp.iter().map(|&v| v as f64).collect();
    Ok((sim, target))
}

pub fn path_dataset(n: usize, seed: u64) -> Result<Vec<(CrossSimilarityMatrix, Vec<f64>)>> {
    (0..n)
        .map(|k| path_instance(seed.wrapping_mul(7_777_777).wrapping_add(k as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inflection_instances_are_deterministic_and_on_grid() {
        let (sim_a, infl_a) = inflection_instance(5).unwrap();
        let (sim_b, infl_b) = inflection_instance(5).unwrap();
        assert_eq!(sim_a.as_slice(), sim_b.as_slice());
        assert_eq!(infl_a, infl_b);
        assert_eq!((sim_a.rows(), sim_a.cols()), (GRID, GRID));
        assert!(!infl_a.is_empty() && infl_a.len() % 2 == 0);
        for &(a, b) in &infl_a.points {
            assert!(a < GRID && b < GRID);
        }
    }

    #[test]
    fn path_instances_have_monotone_targets() {
        let (sim, target) = path_instance(9).unwrap();
        assert_eq!((sim.rows(), sim.cols()), (GRID, GRID));
        assert_eq!(target.len(), GRID);
        for w in target.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_eq!(target[0], 0.0);
        assert_eq!(target[GRID - 1], (GRID - 1) as f64);
        // The warp's zero-cost cells sit exactly on the target.
        for (i, &t) in target.iter().enumerate() {
            assert!(sim.at(i, t as usize) < 1e-12);
        }
    }
}
