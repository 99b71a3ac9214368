//! Central finite-difference verification of every analytic gradient in
//! the crate, from single layers to the full toy networks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::SasaLayer;
use super::conv::{conv2d_backward, conv2d_forward, Conv2dLayer};
use super::dense::DenseLayer;
use super::loss::{contrastive_loss, contrastive_loss_grad, mse_padded_loss, mse_padded_loss_grad};
use super::pool::{max_pool2d, max_pool2d_backward, max_unpool2d, max_unpool2d_backward};
use super::tensor::Tensor;
use super::train::{InflectionNet, PathHeadKind, PathLossKind, PathNet};
use crate::error::Result;
use crate::softdtw::{soft_dtw, soft_dtw_divergence, soft_dtw_divergence_grad, soft_dtw_grad};

pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub n_params: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }
}

/// Relative error with the denominator floored at 1, so near-zero
/// components are compared absolutely.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares an analytic gradient against central differences of `f` over
/// `params`, perturbing one coordinate at a time by `h`.
pub fn finite_diff_check(
    name: &str,
    tolerance: f64,
    params: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    h: f64,
) -> Result<GradCheckCase> {
    assert_eq!(params.len(), analytic.len());
    let mut probe = params.to_vec();
    let mut max_rel_err = 0.0f64;
    for t in 0..params.len() {
        probe[t] = params[t] + h;
        let up = f(&probe)?;
        probe[t] = params[t] - h;
        let down = f(&probe)?;
        probe[t] = params[t];
        let numeric = (up - down) / (2.0 * h);
        max_rel_err = max_rel_err.max(rel_err(analytic[t], numeric));
    }
    Ok(GradCheckCase {
        name: name.to_string(),
        max_rel_err,
        tolerance,
        passed: max_rel_err < tolerance,
        n_params: params.len(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dense(rng: &mut ChaCha8Rng) -> Result<GradCheckCase> {
    let layer = DenseLayer::new(6, 4, rng);
    let input = Tensor::uniform(&[6], -1.0, 1.0, rng);
    let proj = Tensor::uniform(&[4], -1.0, 1.0, rng);

    let (di, dw, db) = layer.backward(&input, &proj)?;
    let mut params = layer.weights.data().to_vec();
    params.extend_from_slice(layer.bias.data());
    params.extend_from_slice(input.data());
    let mut analytic = dw.into_data();
    analytic.extend(db.into_data());
    analytic.extend(di.into_data());

    let (nw, nb) = (layer.weights.len(), layer.bias.len());
    finite_diff_check(
        "dense",
        1e-5,
        &params.clone(),
        &analytic,
        |flat| {
            let mut l = layer.clone();
            l.weights = Tensor::from_vec(&[4, 6], flat[..nw].to_vec())?;
            l.bias = Tensor::from_vec(&[4], flat[nw..nw + nb].to_vec())?;
            let x = Tensor::from_vec(&[6], flat[nw + nb..].to_vec())?;
            Ok(dot(l.forward(&x)?.data(), proj.data()))
        },
        DEFAULT_STEP,
    )
}

fn check_conv(dilation: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckCase> {
    let eff = super::conv::effective_kernel_size(3, dilation);
    let side = eff + 2;
    let layer = Conv2dLayer::new(2, 2, 3, dilation, rng);
    let input = Tensor::uniform(&[2, side, side], -1.0, 1.0, rng);
    let out = conv2d_forward(&input, &layer)?;
    let proj = Tensor::uniform(out.shape(), -1.0, 1.0, rng);

    let (di, dk, db) = conv2d_backward(&input, &layer, &proj)?;
    let mut params = layer.kernels.data().to_vec();
    params.extend_from_slice(layer.bias.data());
    params.extend_from_slice(input.data());
    let mut analytic = dk.into_data();
    analytic.extend(db.into_data());
    analytic.extend(di.into_data());

    let (nk, nb) = (layer.kernels.len(), layer.bias.len());
    let kshape = layer.kernels.shape().to_vec();
    let ishape = input.shape().to_vec();
    finite_diff_check(
        &format!("conv2d_d{dilation}"),
        1e-4,
        &params.clone(),
        &analytic,
        |flat| {
            let mut l = layer.clone();
            l.kernels = Tensor::from_vec(&kshape, flat[..nk].to_vec())?;
            l.bias = Tensor::from_vec(&[2], flat[nk..nk + nb].to_vec())?;
            let x = Tensor::from_vec(&ishape, flat[nk + nb..].to_vec())?;
            Ok(dot(conv2d_forward(&x, &l)?.data(), proj.data()))
        },
        DEFAULT_STEP,
    )
}

fn check_sasa(rng: &mut ChaCha8Rng) -> Result<GradCheckCase> {
    let layer = SasaLayer::new(8, 4, 1, rng)?;
    let input = Tensor::uniform(&[8, 6, 6], -1.0, 1.0, rng);
    let proj = Tensor::uniform(&[8, 6, 6], -1.0, 1.0, rng);

    let (out, cache) = layer.forward(&input)?;
    debug_assert_eq!(out.shape(), input.shape());
    let (di, grads) = layer.backward(&input, &cache, &proj)?;

    let mut params = Vec::new();
    let mut analytic = Vec::new();
    for (w, g) in layer
        .w_q
        .iter()
        .chain(&layer.w_k)
        .chain(&layer.w_v)
        .zip(grads.w_q.iter().chain(&grads.w_k).chain(&grads.w_v))
    {
        params.extend_from_slice(w.data());
        analytic.extend_from_slice(g.data());
    }
    params.extend_from_slice(layer.row_embed.data());
    analytic.extend_from_slice(grads.row_embed.data());
    params.extend_from_slice(layer.col_embed.data());
    analytic.extend_from_slice(grads.col_embed.data());
    params.extend_from_slice(input.data());
    analytic.extend_from_slice(di.data());

    finite_diff_check(
        "sasa",
        1e-4,
        &params.clone(),
        &analytic,
        |flat| {
            let mut l = layer.clone();
            let mut pos = 0;
            let g = l.group();
            for w in l.w_q.iter_mut().chain(&mut l.w_k).chain(&mut l.w_v) {
                *w = Tensor::from_vec(&[g, g], flat[pos..pos + g * g].to_vec())?;
                pos += g * g;
            }
            let ne = l.row_embed.len();
            l.row_embed = Tensor::from_vec(&[3, g / 2], flat[pos..pos + ne].to_vec())?;
            pos += ne;
            l.col_embed = Tensor::from_vec(&[3, g / 2], flat[pos..pos + ne].to_vec())?;
            pos += ne;
            let x = Tensor::from_vec(&[8, 6, 6], flat[pos..].to_vec())?;
            Ok(dot(l.forward(&x)?.0.data(), proj.data()))
        },
        DEFAULT_STEP,
    )
}

fn check_pool_unpool(rng: &mut ChaCha8Rng) -> Result<GradCheckCase> {
    let input = Tensor::uniform(&[2, 4, 4], -1.0, 1.0, rng);
    let proj = Tensor::uniform(&[2, 4, 4], -1.0, 1.0, rng);

    let (pooled, mask) = max_pool2d(&input)?;
    let _ = max_unpool2d(&pooled, &mask)?;
    let d_pooled = max_unpool2d_backward(&mask, pooled.shape(), &proj)?;
    let di = max_pool2d_backward(&mask, &d_pooled)?;

    finite_diff_check(
        "pool_unpool",
        1e-4,
        input.data(),
        di.data(),
        |flat| {
            let x = Tensor::from_vec(&[2, 4, 4], flat.to_vec())?;
            let (p, m) = max_pool2d(&x)?;
            Ok(dot(max_unpool2d(&p, &m)?.data(), proj.data()))
        },
        DEFAULT_STEP,
    )
}

fn check_losses(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckCase>> {
    let mut cases = Vec::new();

    let pred = Tensor::uniform(&[6], -2.0, 2.0, rng);
    let target = Tensor::uniform(&[6], -2.0, 2.0, rng);
    let analytic = mse_padded_loss_grad(&pred, &target)?;
    cases.push(finite_diff_check(
        "mse_padded",
        1e-4,
        pred.data(),
        analytic.data(),
        |flat| {
            let p = Tensor::from_vec(&[6], flat.to_vec())?;
            mse_padded_loss(&p, &target)
        },
        DEFAULT_STEP,
    )?);

    for (label, d_w) in [(0u8, 0.4f64), (1, 0.6), (1, 1.7)] {
        let analytic = [contrastive_loss_grad(d_w, label, 1.0)?];
        cases.push(finite_diff_check(
            &format!("contrastive_y{label}_d{d_w}"),
            1e-4,
            &[d_w],
            &analytic,
            |flat| contrastive_loss(flat[0], label, 1.0),
            1e-6,
        )?);
    }
    Ok(cases)
}

fn check_soft_dtw_instances(
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GradCheckCase>> {
    let lambdas = [0.05, 0.1, 0.5];
    let mut cases = Vec::with_capacity(2 * n);
    for k in 0..n {
        let lambda = lambdas[k % lambdas.len()];
        let len = rng.gen_range(3..=8);
        let pred: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let analytic = soft_dtw_grad(&pred, &target, lambda)?;
        cases.push(finite_diff_check(
            &format!("soft_dtw[{k}]_lambda{lambda}"),
            1e-4,
            &pred,
            &analytic,
            |x| soft_dtw(x, &target, lambda),
            DEFAULT_STEP,
        )?);

        let analytic = soft_dtw_divergence_grad(&pred, &target, lambda)?;
        cases.push(finite_diff_check(
            &format!("soft_dtw_divergence[{k}]_lambda{lambda}"),
            1e-4,
            &pred,
            &analytic,
            |x| soft_dtw_divergence(x, &target, lambda),
            DEFAULT_STEP,
        )?);
    }
    Ok(cases)
}

fn check_inflection_net(rng: &mut ChaCha8Rng) -> Result<GradCheckCase> {
    let mut net_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let net = InflectionNet::new(26, 4, (1, 2, 3), 8, 6, &mut net_rng)?;
    let input = Tensor::uniform(&[1, 26, 26], -1.0, 1.0, rng);
    let target: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();

    let (_, analytic) = net.loss_and_grad(&input, &target)?;
    let params = net.params_flat();
    finite_diff_check(
        "inflection_net",
        1e-3,
        &params,
        &analytic,
        |flat| {
            let mut n = net.clone();
            n.set_params_flat(flat)?;
            Ok(n.loss_and_grad(&input, &target)?.0)
        },
        DEFAULT_STEP,
    )
}

fn check_path_net(head: PathHeadKind, rng: &mut ChaCha8Rng) -> Result<GradCheckCase> {
    let mut net_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let net = PathNet::new(
        40,
        8,
        8,
        6,
        head,
        PathLossKind::Divergence { lambda: 0.1 },
        &mut net_rng,
    )?;
    let input = Tensor::uniform(&[1, 40, 40], -1.0, 1.0, rng);
    let mut target: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
    target.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let (_, analytic) = net.loss_and_grad(&input, &target)?;
    let params = net.params_flat();
    let name = match head {
        PathHeadKind::Sasa => "path_net_sasa",
        PathHeadKind::Conv => "path_net_conv",
    };
    finite_diff_check(
        name,
        1e-3,
        &params,
        &analytic,
        |flat| {
            let mut n = net.clone();
            n.set_params_flat(flat)?;
            Ok(n.loss_and_grad(&input, &target)?.0)
        },
        DEFAULT_STEP,
    )
}

/// The standard gradient-check suite: soft-DTW and divergence instances,
/// every layer kind, the losses, and both full toy networks.
pub fn gradcheck_suite(seed: u64, soft_dtw_instances: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    cases.extend(check_soft_dtw_instances(soft_dtw_instances, &mut rng)?);
    cases.push(check_dense(&mut rng)?);
    for d in [1, 2, 3] {
        cases.push(check_conv(d, &mut rng)?);
    }
    cases.push(check_sasa(&mut rng)?);
    cases.push(check_pool_unpool(&mut rng)?);
    cases.extend(check_losses(&mut rng)?);
    cases.push(check_inflection_net(&mut rng)?);
    cases.push(check_path_net(PathHeadKind::Sasa, &mut rng)?);
    cases.push(check_path_net(PathHeadKind::Conv, &mut rng)?);
    Ok(GradCheckReport { cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_layer_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let case = check_dense(&mut rng).unwrap();
        assert!(case.passed, "max rel err {}", case.max_rel_err);
        assert!(case.max_rel_err < 1e-5);
    }

    #[test]
    fn dilated_convs_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for d in [1, 2, 3] {
            let case = check_conv(d, &mut rng).unwrap();
            assert!(case.passed, "d={d}: max rel err {}", case.max_rel_err);
        }
    }

    #[test]
    fn sasa_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let case = check_sasa(&mut rng).unwrap();
        assert!(case.passed, "max rel err {}", case.max_rel_err);
    }

    #[test]
    fn full_networks_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let case = check_inflection_net(&mut rng).unwrap();
        assert!(case.passed, "inflection: {}", case.max_rel_err);
        let case = check_path_net(PathHeadKind::Sasa, &mut rng).unwrap();
        assert!(case.passed, "path sasa: {}", case.max_rel_err);
    }
}
