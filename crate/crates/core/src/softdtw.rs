//! Smoothed dynamic time warping over scalar index sequences: the soft
//! minimum accumulation, its normalized divergence, and analytic gradients
//! with respect to the predicted sequence.

use crate::error::{Error, Result};

/// Local cost between two scalar indices. Squared distance is the default
/// (differentiable everywhere); absolute distance is available for
/// parity with hard-DTW evaluation at zero smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    #[default]
    SquaredEuclidean,
    Absolute,
}

impl CostKind {
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            CostKind::SquaredEuclidean => (a - b) * (a - b),
            CostKind::Absolute => (a - b).abs(),
        }
    }
}

/// Real-valued score-index sequence; ground-truth instances hold integer
/// values.
pub type IndexSequence = [f64];

fn check_sequence(name: &'static str, values: &IndexSequence) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyInput(name));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSample { index });
    }
    Ok(())
}

/// Smoothed minimum: the hard minimum at `lambda = 0`, otherwise
/// `-lambda * ln(sum_i exp(-m_i / lambda))` computed with a max shift.
pub fn soft_min(values: &[f64], lambda: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("soft_min over an empty list"));
    }
    if lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    Ok(soft_min_unchecked(values, lambda))
}

fn soft_min_unchecked(values: &[f64], lambda: f64) -> f64 {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    if lambda == 0.0 || !m.is_finite() {
        return m;
    }
    let sum: f64 = values.iter().map(|&v| (-(v - m) / lambda).exp()).sum();
    m - lambda * sum.ln()
}

/// Accumulated soft costs for one (pred, target) pair. `r` is the
/// (p+1) x (q+1) table with `r[0][0] = 0` and an infinite first row and
/// column; at `lambda = 0` its interior equals the hard-DTW table.
pub struct SoftDtwWorkspace {
    r: Vec<f64>,
    p: usize,
    q: usize,
    lambda: f64,
    cost: CostKind,
}

impl SoftDtwWorkspace {
    pub fn forward(
        pred: &IndexSequence,
        target: &IndexSequence,
        lambda: f64,
        cost: CostKind,
    ) -> Result<Self> {
        check_sequence("pred sequence is empty", pred)?;
        check_sequence("target sequence is empty", target)?;
        if lambda < 0.0 {
            return Err(Error::NegativeLambda(lambda));
        }
        let (p, q) = (pred.len(), target.len());
        let w = q + 1;
        let mut r = vec![f64::INFINITY; (p + 1) * w];
        r[0] = 0.0;
        for a in 1..=p {
            for b in 1..=q {
                let e = cost.eval(pred[a - 1], target[b - 1]);
                let candidates = [r[a * w + b - 1], r[(a - 1) * w + b], r[(a - 1) * w + b - 1]];
                r[a * w + b] = e + soft_min_unchecked(&candidates, lambda);
            }
        }
        Ok(SoftDtwWorkspace {
            r,
            p,
            q,
            lambda,
            cost,
        })
    }

    fn r_at(&self, a: usize, b: usize) -> f64 {
        self.r[a * (self.q + 1) + b]
    }

    pub fn value(&self) -> f64 {
        self.r_at(self.p, self.q)
    }

    /// Backward accumulation of alignment weights: `weights[i][j]` is the
    /// sensitivity of the final value to the cost of cell (i, j).
    fn alignment_weights(&self, pred: &IndexSequence, target: &IndexSequence) -> Vec<f64> {
        let (p, q) = (self.p, self.q);
        let w = q + 1;
        let lambda = self.lambda;
        let mut e_grid = vec![0.0f64; (p + 2) * (q + 2)];
        let ew = q + 2;
        for a in 1..=p {
            for b in 1..=q {
                e_grid[a * ew + b] = self.cost.eval(pred[a - 1], target[b - 1]);
            }
        }
        let mut weights = vec![0.0f64; (p + 1) * w];
        weights[p * w + q] = 1.0;
        for a in (1..=p).rev() {
            for b in (1..=q).rev() {
                if a == p && b == q {
                    continue;
                }
                let mut acc = 0.0;
                if b + 1 <= q {
                    let delta = self.r_at(a, b + 1) - self.r_at(a, b) - e_grid[a * ew + b + 1];
                    acc += (delta / lambda).exp() * weights[a * w + b + 1];
                }
                if a + 1 <= p {
                    let delta = self.r_at(a + 1, b) - self.r_at(a, b) - e_grid[(a + 1) * ew + b];
                    acc += (delta / lambda).exp() * weights[(a + 1) * w + b];
                }
                if a + 1 <= p && b + 1 <= q {
                    let delta =
                        self.r_at(a + 1, b + 1) - self.r_at(a, b) - e_grid[(a + 1) * ew + b + 1];
                    acc += (delta / lambda).exp() * weights[(a + 1) * w + b + 1];
                }
                weights[a * w + b] = acc;
            }
        }
        weights
    }
}

/// Soft-DTW distance over the full cost grid between two index sequences.
/// At `lambda = 0` this equals the hard DTW total cost on the same grid.
pub fn soft_dtw(pred: &IndexSequence, target: &IndexSequence, lambda: f64) -> Result<f64> {
    soft_dtw_with_cost(pred, target, lambda, CostKind::default())
}

pub fn soft_dtw_with_cost(
    pred: &IndexSequence,
    target: &IndexSequence,
    lambda: f64,
    cost: CostKind,
) -> Result<f64> {
    Ok(SoftDtwWorkspace::forward(pred, target, lambda, cost)?.value())
}

/// Gradient of [`soft_dtw`] with respect to every `pred[t]`, via the
/// backward weight recursion composed with the squared-distance derivative.
pub fn soft_dtw_grad(pred: &IndexSequence, target: &IndexSequence, lambda: f64) -> Result<Vec<f64>> {
    if lambda <= 0.0 {
        return Err(Error::NonPositiveLambda(lambda));
    }
    let ws = SoftDtwWorkspace::forward(pred, target, lambda, CostKind::SquaredEuclidean)?;
    let weights = ws.alignment_weights(pred, target);
    let (p, q) = (pred.len(), target.len());
    let w = q + 1;
    let mut grad = vec![0.0f64; p];
    for (a, g) in grad.iter_mut().enumerate() {
        for b in 0..q {
            *g += weights[(a + 1) * w + b + 1] * 2.0 * (pred[a] - target[b]);
        }
    }
    Ok(grad)
}

/// Gradient of `soft_dtw(x, y)` with respect to every `y[u]`.
fn soft_dtw_grad_second(pred: &IndexSequence, target: &IndexSequence, lambda: f64) -> Result<Vec<f64>> {
    let ws = SoftDtwWorkspace::forward(pred, target, lambda, CostKind::SquaredEuclidean)?;
    let weights = ws.alignment_weights(pred, target);
    let (p, q) = (pred.len(), target.len());
    let w = q + 1;
    let mut grad = vec![0.0f64; q];
    for (b, g) in grad.iter_mut().enumerate() {
        for a in 0..p {
            *g -= weights[(a + 1) * w + b + 1] * 2.0 * (pred[a] - target[b]);
        }
    }
    Ok(grad)
}

/// The normalized divergence: the raw soft distance minus half of each
/// self-distance. Non-negative, and exactly zero when `pred == target`.
pub fn soft_dtw_divergence(
    pred: &IndexSequence,
    target: &IndexSequence,
    lambda: f64,
) -> Result<f64> {
    if lambda <= 0.0 {
        return Err(Error::NonPositiveLambda(lambda));
    }
    let cross = soft_dtw(pred, target, lambda)?;
    let self_p = soft_dtw(pred, pred, lambda)?;
    let self_t = soft_dtw(target, target, lambda)?;
    Ok(cross - 0.5 * (self_p + self_t))
}

/// Gradient of the divergence with respect to `pred`, accounting for the
/// predicted sequence appearing in both slots of its self-term.
pub fn soft_dtw_divergence_grad(
    pred: &IndexSequence,
    target: &IndexSequence,
    lambda: f64,
) -> Result<Vec<f64>> {
    if lambda <= 0.0 {
        return Err(Error::NonPositiveLambda(lambda));
    }
    let cross = soft_dtw_grad(pred, target, lambda)?;
    let self_first = soft_dtw_grad(pred, pred, lambda)?;
    let self_second = soft_dtw_grad_second(pred, pred, lambda)?;
    Ok(cross
        .iter()
        .zip(self_first.iter().zip(&self_second))
        .map(|(c, (s1, s2))| c - 0.5 * (s1 + s2))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtw::dtw_brute_force;
    use crate::features::CrossSimilarityMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hard_dtw_oracle(pred: &[f64], target: &[f64]) -> f64 {
        let cost: Vec<f64> = pred
            .iter()
            .flat_map(|a| target.iter().map(move |b| (a - b) * (a - b)))
            .collect();
        let sim = CrossSimilarityMatrix::from_flat(cost, pred.len(), target.len()).unwrap();
        dtw_brute_force(&sim).unwrap().total_cost
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut grad = Vec::with_capacity(x.len());
        let mut probe = x.to_vec();
        for t in 0..x.len() {
            probe[t] = x[t] + h;
            let up = f(&probe);
            probe[t] = x[t] - h;
            let down = f(&probe);
            probe[t] = x[t];
            grad.push((up - down) / (2.0 * h));
        }
        grad
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn soft_min_examples() {
        assert_eq!(soft_min(&[3.0, 1.0, 2.0], 0.0).unwrap(), 1.0);
        assert!(soft_min(&[0.0], 1.0).unwrap().abs() < 1e-15);
        let two_ones = soft_min(&[1.0, 1.0], 1.0).unwrap();
        assert!((two_ones - (1.0 - 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn soft_min_rejects_bad_input() {
        assert!(matches!(soft_min(&[], 1.0), Err(Error::EmptyInput(_))));
        assert!(matches!(
            soft_min(&[1.0], -0.5),
            Err(Error::NegativeLambda(_))
        ));
    }

    #[test]
    fn soft_min_bounded_by_min() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let values: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let hard = values.iter().copied().fold(f64::INFINITY, f64::min);
            let mut prev_gap = f64::INFINITY;
            for lambda in [1.0, 0.1, 0.01, 0.001] {
                let soft = soft_min(&values, lambda).unwrap();
                assert!(soft <= hard + 1e-12);
                let gap = hard - soft;
                assert!(gap <= prev_gap + 1e-12);
                prev_gap = gap;
            }
            assert!(prev_gap < 1e-2);
        }
    }

    #[test]
    fn zero_lambda_equals_hard_dtw() {
        assert_eq!(soft_dtw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0.0).unwrap(), 0.0);
        assert_eq!(soft_dtw(&[0.0, 1.0], &[0.0, 2.0], 0.0).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..40 {
            let p = rng.gen_range(1..=6);
            let q = rng.gen_range(1..=6);
            let pred: Vec<f64> = (0..p).map(|_| rng.gen_range(0..8) as f64).collect();
            let target: Vec<f64> = (0..q).map(|_| rng.gen_range(0..8) as f64).collect();
            let soft = soft_dtw(&pred, &target, 0.0).unwrap();
            assert_eq!(soft, hard_dtw_oracle(&pred, &target));
        }
    }

    #[test]
    fn small_lambda_close_to_hard_and_gap_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let pred: Vec<f64> = (0..5).map(|_| rng.gen_range(0..6) as f64).collect();
            let target: Vec<f64> = (0..5).map(|_| rng.gen_range(0..6) as f64).collect();
            let hard = hard_dtw_oracle(&pred, &target);
            let mut prev_gap = f64::INFINITY;
            for lambda in [1.0, 0.1, 0.01, 0.001] {
                let soft = soft_dtw(&pred, &target, lambda).unwrap();
                let gap = (soft - hard).abs();
                assert!(gap <= prev_gap + 1e-12);
                prev_gap = gap;
            }
            assert!(prev_gap <= 1e-2, "gap {prev_gap}");
        }
    }

    #[test]
    fn grad_zero_at_identity() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let grad = soft_dtw_grad(&x, &x, 1e-3).unwrap();
        for g in grad {
            assert!(g.abs() <= 1e-6, "component {g}");
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..25 {
            let pred: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let target: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let analytic = soft_dtw_grad(&pred, &target, 0.1).unwrap();
            let numeric = central_diff(
                |x| soft_dtw(x, &target, 0.1).unwrap(),
                &pred,
                1e-4,
            );
            assert!(max_rel_err(&analytic, &numeric) < 1e-4);
        }
    }

    #[test]
    fn grad_under_input_scaling_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pred: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scaled_pred: Vec<f64> = pred.iter().map(|v| v * 2.0).collect();
        let scaled_target: Vec<f64> = target.iter().map(|v| v * 2.0).collect();
        let analytic = soft_dtw_grad(&scaled_pred, &scaled_target, 0.1).unwrap();
        let numeric = central_diff(
            |x| soft_dtw(x, &scaled_target, 0.1).unwrap(),
            &scaled_pred,
            1e-4,
        );
        assert!(max_rel_err(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn grad_rejects_zero_lambda() {
        assert!(matches!(
            soft_dtw_grad(&[1.0], &[1.0], 0.0),
            Err(Error::NonPositiveLambda(_))
        ));
    }

    #[test]
    fn divergence_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let n = rng.gen_range(1..=7);
            let m = rng.gen_range(1..=7);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let d_ab = soft_dtw_divergence(&a, &b, 0.1).unwrap();
            let d_ba = soft_dtw_divergence(&b, &a, 0.1).unwrap();
            assert!(d_ab >= -1e-9, "divergence {d_ab}");
            assert!((d_ab - d_ba).abs() < 1e-9);
            let d_aa = soft_dtw_divergence(&a, &a, 0.1).unwrap();
            assert!(d_aa.abs() <= 1e-9);
        }
    }

    #[test]
    fn divergence_positive_off_identity() {
        let a = [0.0, 1.0, 2.0];
        let b = [0.0, 1.0, 2.5];
        assert!(soft_dtw_divergence(&a, &b, 0.1).unwrap() > 0.0);
        // The raw self-distance is biased negative; the divergence fixes it.
        let self_raw = soft_dtw(&a, &a, 1.0).unwrap();
        assert!(self_raw < 0.0);
    }

    #[test]
    fn divergence_grad_zero_at_minimum() {
        let x = [0.5, 1.5, 3.0, 3.5];
        let grad = soft_dtw_divergence_grad(&x, &x, 0.1).unwrap();
        for g in grad {
            assert!(g.abs() <= 1e-5, "component {g}");
        }
    }

    #[test]
    fn divergence_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..25 {
            let pred: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let target: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let analytic = soft_dtw_divergence_grad(&pred, &target, 0.1).unwrap();
            let numeric = central_diff(
                |x| soft_dtw_divergence(x, &target, 0.1).unwrap(),
                &pred,
                1e-4,
            );
            assert!(max_rel_err(&analytic, &numeric) < 1e-4);
        }
    }

    #[test]
    fn descent_decreases_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let target: Vec<f64> = (0..6).map(|k| k as f64).collect();
        let mut pred: Vec<f64> = target
            .iter()
            .map(|v| v + rng.gen_range(-0.5..0.5))
            .collect();
        let mut prev = soft_dtw_divergence(&pred, &target, 0.1).unwrap();
        for _ in 0..50 {
            let grad = soft_dtw_divergence_grad(&pred, &target, 0.1).unwrap();
            for (p, g) in pred.iter_mut().zip(&grad) {
                *p -= 0.05 * g;
            }
            let now = soft_dtw_divergence(&pred, &target, 0.1).unwrap();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn absolute_cost_flag() {
        let v = soft_dtw_with_cost(&[0.0, 1.0], &[0.0, 3.0], 0.0, CostKind::Absolute).unwrap();
        // |0-0| + min path ... cells: (0,0)=0, diag (1,1)=2.
        assert_eq!(v, 2.0);
    }
}
