//! The two toy regressors and their SGD training loops.
//!
//! Both networks consume 64 x 64 cross-similarity matrices. The inflection
//! regressor stacks progressively dilated convolutions and regresses
//! sentinel-padded inflection coordinates under MSE; the path regressor is
//! a conv/pool encoder with max-unpooling, a two-layer stand-alone
//! self-attention block and a dense head, trained on the soft-DTW
//! divergence (or MSE for the ablation).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{SasaCache, SasaLayer};
use super::conv::{conv2d_backward, conv2d_forward, Conv2dLayer};
use super::dense::{relu_backward, relu_forward, DenseLayer};
use super::loss::{mse_padded_loss, mse_padded_loss_grad};
use super::pool::{max_pool2d, max_pool2d_backward, max_unpool2d, max_unpool2d_backward, PoolMask};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::features::CrossSimilarityMatrix;
use crate::softdtw::{soft_dtw_divergence, soft_dtw_divergence_grad};
use crate::structure::InflectionPointSet;

/// Shared training configuration. Coordinates and sentinel are expressed
/// in grid frames; targets are normalized by `grid` internally.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Toy input extent (matrices are grid x grid).
    pub grid: usize,
    /// Output vector length.
    pub output_len: usize,
    pub channels: usize,
    pub hidden: usize,
    /// Sentinel emitted for unused inflection slots, in frames. Scales the
    /// paper-sized 4096 down to 4 x grid at toy scale.
    pub padding_value: f64,
    /// Smoothing factor for the divergence loss.
    pub lambda: f64,
    /// Fraction of the dataset held out for validation.
    pub val_fraction: f64,
}

impl TrainConfig {
    pub fn inflection_default(seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            epochs: 40,
            grid: 64,
            output_len: 8,
            channels: 4,
            hidden: 64,
            padding_value: 256.0,
            lambda: 0.1,
            val_fraction: 0.2,
        }
    }

    pub fn path_default(seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            epochs: 30,
            grid: 64,
            output_len: 64,
            channels: 8,
            hidden: 64,
            padding_value: 256.0,
            lambda: 0.1,
            val_fraction: 0.2,
        }
    }
}

/// Progress log returned next to a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss before any update.
    pub initial_loss: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation metric in frames (mean coordinate error or mean |y - y'|).
    pub val_metric_frames: f64,
    pub n_train: usize,
    pub n_val: usize,
}

fn flatten_tensors(tensors: &[&Tensor]) -> Vec<f64> {
    let mut out = Vec::new();
    for t in tensors {
        out.extend_from_slice(t.data());
    }
    out
}

fn scatter_params(tensors: &mut [&mut Tensor], flat: &[f64]) -> Result<()> {
    let total: usize = tensors.iter().map(|t| t.len()).sum();
    if total != flat.len() {
        return Err(Error::ShapeMismatch(format!(
            "model holds {total} parameters, got {}",
            flat.len()
        )));
    }
    let mut pos = 0;
    for t in tensors {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[pos..pos + n]);
        pos += n;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Inflection regressor
// ---------------------------------------------------------------------

/// conv(d=1) -> pool -> conv(d2) -> conv(d3) -> dense -> dense, regressing
/// normalized inflection coordinates with a learned padding sentinel.
#[derive(Debug, Clone)]
pub struct InflectionNet {
    pub conv1: Conv2dLayer,
    pub conv2: Conv2dLayer,
    pub conv3: Conv2dLayer,
    pub dense1: DenseLayer,
    pub dense2: DenseLayer,
    pub grid: usize,
    pub dilations: (usize, usize, usize),
}

struct InflectionCache {
    input: Tensor,
    c1: Tensor,
    p1: Tensor,
    mask1: PoolMask,
    c2: Tensor,
    r2: Tensor,
    c3: Tensor,
    flat: Tensor,
    d1: Tensor,
}

impl InflectionNet {
    pub fn new(
        grid: usize,
        channels: usize,
        dilations: (usize, usize, usize),
        hidden: usize,
        output_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<InflectionNet> {
        let conv1 = Conv2dLayer::new(1, channels, 3, dilations.0, rng);
        let conv2 = Conv2dLayer::new(channels, channels, 3, dilations.1, rng);
        let conv3 = Conv2dLayer::new(channels, channels, 3, dilations.2, rng);
        let e1 = grid
            .checked_sub(super::conv::effective_kernel_size(3, dilations.0) - 1)
            .ok_or_else(|| Error::ShapeMismatch("grid too small for conv1".into()))?;
        if e1 % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv1 output extent {e1} must be even for pooling"
            )));
        }
        let p1 = e1 / 2;
        let e2 = p1
            .checked_sub(super::conv::effective_kernel_size(3, dilations.1) - 1)
            .filter(|&v| v >= 1)
            .ok_or_else(|| Error::ShapeMismatch("grid too small for conv2".into()))?;
        let e3 = e2
            .checked_sub(super::conv::effective_kernel_size(3, dilations.2) - 1)
            .filter(|&v| v >= 1)
            .ok_or_else(|| Error::ShapeMismatch("grid too small for conv3".into()))?;
        let flat = channels * e3 * e3;
        Ok(InflectionNet {
            conv1,
            conv2,
            conv3,
            dense1: DenseLayer::new(flat, hidden, rng),
            dense2: DenseLayer::new(hidden, output_len, rng),
            grid,
            dilations,
        })
    }

    pub fn output_len(&self) -> usize {
        self.dense2.out_dim()
    }

    fn forward_full(&self, input: &Tensor) -> Result<(Tensor, InflectionCache)> {
        let c1 = conv2d_forward(input, &self.conv1)?;
        let r1 = relu_forward(&c1);
        let (p1, mask1) = max_pool2d(&r1)?;
        let c2 = conv2d_forward(&p1, &self.conv2)?;
        let r2 = relu_forward(&c2);
        let c3 = conv2d_forward(&r2, &self.conv3)?;
        let r3 = relu_forward(&c3);
        let flat = r3.clone().reshape(&[self.dense1.in_dim()])?;
        let d1 = self.dense1.forward(&flat)?;
        let rd = relu_forward(&d1);
        let out = self.dense2.forward(&rd)?;
        Ok((
            out,
            InflectionCache {
                input: input.clone(),
                c1,
                p1,
                mask1,
                c2,
                r2,
                c3,
                flat,
                d1,
            },
        ))
    }

    fn backward(&self, cache: &InflectionCache, d_out: &Tensor) -> Result<Vec<f64>> {
        let rd = relu_forward(&cache.d1);
        let (d_rd, dw2, db2) = self.dense2.backward(&rd, d_out)?;
        let d_d1 = relu_backward(&cache.d1, &d_rd);
        let (d_flat, dw1, db1) = self.dense1.backward(&cache.flat, &d_d1)?;
        let d_r3 = d_flat.reshape(cache.c3.shape())?;
        let d_c3 = relu_backward(&cache.c3, &d_r3);
        let (d_r2, dk3, dbc3) = conv2d_backward(&cache.r2, &self.conv3, &d_c3)?;
        let d_c2 = relu_backward(&cache.c2, &d_r2);
        let (d_p1, dk2, dbc2) = conv2d_backward(&cache.p1, &self.conv2, &d_c2)?;
        let d_r1 = max_pool2d_backward(&cache.mask1, &d_p1)?;
        let d_c1 = relu_backward(&cache.c1, &d_r1);
        let (_, dk1, dbc1) = conv2d_backward(&cache.input, &self.conv1, &d_c1)?;
        Ok(flatten_tensors(&[
            &dk1, &dbc1, &dk2, &dbc2, &dk3, &dbc3, &dw1, &db1, &dw2, &db2,
        ]))
    }

    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_full(input)?.0)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten_tensors(&[
            &self.conv1.kernels,
            &self.conv1.bias,
            &self.conv2.kernels,
            &self.conv2.bias,
            &self.conv3.kernels,
            &self.conv3.bias,
            &self.dense1.weights,
            &self.dense1.bias,
            &self.dense2.weights,
            &self.dense2.bias,
        ])
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        scatter_params(
            &mut [
                &mut self.conv1.kernels,
                &mut self.conv1.bias,
                &mut self.conv2.kernels,
                &mut self.conv2.bias,
                &mut self.conv3.kernels,
                &mut self.conv3.bias,
                &mut self.dense1.weights,
                &mut self.dense1.bias,
                &mut self.dense2.weights,
                &mut self.dense2.bias,
            ],
            flat,
        )
    }

    /// MSE loss over normalized targets and its parameter gradient.
    pub fn loss_and_grad(&self, input: &Tensor, target_norm: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (out, cache) = self.forward_full(input)?;
        let target = Tensor::from_vec(&[target_norm.len()], target_norm.to_vec())?;
        let loss = mse_padded_loss(&out, &target)?;
        let d_out = mse_padded_loss_grad(&out, &target)?;
        Ok((loss, self.backward(&cache, &d_out)?))
    }

    fn loss_only(&self, input: &Tensor, target_norm: &[f64]) -> Result<f64> {
        let out = self.predict(input)?;
        let target = Tensor::from_vec(&[target_norm.len()], target_norm.to_vec())?;
        mse_padded_loss(&out, &target)
    }
}

// ---------------------------------------------------------------------
// Path regressor
// ---------------------------------------------------------------------

/// Decoder block between the unpooled map and the dense head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathHeadKind {
    /// Two stand-alone self-attention layers.
    Sasa,
    /// Two plain convolutions of the same width (ablation).
    Conv,
}

/// Loss used to train the path regressor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathLossKind {
    Divergence { lambda: f64 },
    Mse,
}

#[derive(Debug, Clone)]
pub struct PathNet {
    pub conv1: Conv2dLayer,
    pub conv2: Conv2dLayer,
    pub conv3: Conv2dLayer,
    pub head: PathHead,
    pub dense1: DenseLayer,
    pub dense2: DenseLayer,
    pub grid: usize,
    pub loss: PathLossKind,
}

#[derive(Debug, Clone)]
pub enum PathHead {
    Sasa(SasaLayer, SasaLayer),
    Conv(Conv2dLayer, Conv2dLayer),
}

struct PathCache {
    input: Tensor,
    c1: Tensor,
    p1: Tensor,
    mask1: PoolMask,
    c2: Tensor,
    p2: Tensor,
    mask2: PoolMask,
    c3: Tensor,
    p3: Tensor,
    mask3: PoolMask,
    unpooled: Tensor,
    head: PathHeadCache,
    flat: Tensor,
    d1: Tensor,
}

enum PathHeadCache {
    Sasa {
        s1: Tensor,
        cache1: SasaCache,
        cache2: SasaCache,
    },
    Conv {
        h1: Tensor,
        r1_out: Tensor,
        h2: Tensor,
    },
}

impl PathNet {
    pub fn new(
        grid: usize,
        channels: usize,
        hidden: usize,
        output_len: usize,
        head_kind: PathHeadKind,
        loss: PathLossKind,
        rng: &mut ChaCha8Rng,
    ) -> Result<PathNet> {
        let c1_ch = (channels / 2).max(1);
        let conv1 = Conv2dLayer::new(1, c1_ch, 5, 1, rng);
        let conv2 = Conv2dLayer::new(c1_ch, channels, 3, 1, rng);
        let conv3 = Conv2dLayer::new(channels, channels, 3, 1, rng);

        let check_even = |v: usize, stage: &str| -> Result<usize> {
            if v == 0 || v % 2 != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "{stage} extent {v} is not poolable"
                )));
            }
            Ok(v / 2)
        };
        let e1 = grid
            .checked_sub(4)
            .ok_or_else(|| Error::ShapeMismatch("grid too small for conv1".into()))?;
        let p1 = check_even(e1, "conv1")?;
        let e2 = p1
            .checked_sub(2)
            .ok_or_else(|| Error::ShapeMismatch("grid too small for conv2".into()))?;
        let p2 = check_even(e2, "conv2")?;
        let e3 = p2
            .checked_sub(2)
            .ok_or_else(|| Error::ShapeMismatch("grid too small for conv3".into()))?;
        check_even(e3, "conv3")?;
        // The third pool is undone by the unpool, so the head sees e3.

        let (head, head_extent) = match head_kind {
            PathHeadKind::Sasa => {
                let s1 = SasaLayer::new(channels, 4, 1, rng)?;
                let s2 = SasaLayer::new(channels, 4, 1, rng)?;
                (PathHead::Sasa(s1, s2), e3)
            }
            PathHeadKind::Conv => {
                let h1 = Conv2dLayer::new(channels, channels, 3, 1, rng);
                let h2 = Conv2dLayer::new(channels, channels, 3, 1, rng);
                let he = e3
                    .checked_sub(4)
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| Error::ShapeMismatch("grid too small for conv head".into()))?;
                (PathHead::Conv(h1, h2), he)
            }
        };
        let flat = channels * head_extent * head_extent;
        Ok(PathNet {
            conv1,
            conv2,
            conv3,
            head,
            dense1: DenseLayer::new(flat, hidden, rng),
            dense2: DenseLayer::new(hidden, output_len, rng),
            grid,
            loss,
        })
    }

    pub fn head_kind(&self) -> PathHeadKind {
        match self.head {
            PathHead::Sasa(..) => PathHeadKind::Sasa,
            PathHead::Conv(..) => PathHeadKind::Conv,
        }
    }

    pub fn output_len(&self) -> usize {
        self.dense2.out_dim()
    }

    fn forward_full(&self, input: &Tensor) -> Result<(Tensor, PathCache)> {
        let c1 = conv2d_forward(input, &self.conv1)?;
        let r1 = relu_forward(&c1);
        let (p1, mask1) = max_pool2d(&r1)?;
        let c2 = conv2d_forward(&p1, &self.conv2)?;
        let r2 = relu_forward(&c2);
        let (p2, mask2) = max_pool2d(&r2)?;
        let c3 = conv2d_forward(&p2, &self.conv3)?;
        let r3 = relu_forward(&c3);
        let (p3, mask3) = max_pool2d(&r3)?;
        let unpooled = max_unpool2d(&p3, &mask3)?;

        let (head_out, head_cache) = match &self.head {
            PathHead::Sasa(l1, l2) => {
                let (s1, cache1) = l1.forward(&unpooled)?;
                let (s2, cache2) = l2.forward(&s1)?;
                (s2, PathHeadCache::Sasa { s1, cache1, cache2 })
            }
            PathHead::Conv(l1, l2) => {
                let h1 = conv2d_forward(&unpooled, l1)?;
                let r1_out = relu_forward(&h1);
                let h2 = conv2d_forward(&r1_out, l2)?;
                let r2_out = relu_forward(&h2);
                (r2_out, PathHeadCache::Conv { h1, r1_out, h2 })
            }
        };

        let flat = head_out.clone().reshape(&[self.dense1.in_dim()])?;
        let d1 = self.dense1.forward(&flat)?;
        let rd = relu_forward(&d1);
        let out = self.dense2.forward(&rd)?;
        Ok((
            out,
            PathCache {
                input: input.clone(),
                c1,
                p1,
                mask1,
                c2,
                p2,
                mask2,
                c3,
                p3,
                mask3,
                unpooled,
                head: head_cache,
                flat,
                d1,
            },
        ))
    }

    fn backward(&self, cache: &PathCache, d_out: &Tensor) -> Result<Vec<f64>> {
        let rd = relu_forward(&cache.d1);
        let (d_rd, dw2, db2) = self.dense2.backward(&rd, d_out)?;
        let d_d1 = relu_backward(&cache.d1, &d_rd);
        let (d_flat, dw1, db1) = self.dense1.backward(&cache.flat, &d_d1)?;

        let mut head_grads: Vec<f64> = Vec::new();
        let d_unpooled = match (&self.head, &cache.head) {
            (PathHead::Sasa(l1, l2), PathHeadCache::Sasa { s1, cache1, cache2 }) => {
                let d_s2 = d_flat.reshape(s1.shape())?;
                let (d_s1, g2) = l2.backward(s1, cache2, &d_s2)?;
                let (d_u, g1) = l1.backward(&cache.unpooled, cache1, &d_s1)?;
                for g in [&g1, &g2] {
                    for t in g.w_q.iter().chain(&g.w_k).chain(&g.w_v) {
                        head_grads.extend_from_slice(t.data());
                    }
                    head_grads.extend_from_slice(g.row_embed.data());
                    head_grads.extend_from_slice(g.col_embed.data());
                }
                d_u
            }
            (PathHead::Conv(l1, l2), PathHeadCache::Conv { h1, r1_out, h2 }) => {
                let d_r2 = d_flat.reshape(h2.shape())?;
                let d_h2 = relu_backward(h2, &d_r2);
                let (d_r1, dk2, db2c) = conv2d_backward(r1_out, l2, &d_h2)?;
                let d_h1 = relu_backward(h1, &d_r1);
                let (d_u, dk1, db1c) = conv2d_backward(&cache.unpooled, l1, &d_h1)?;
                head_grads.extend_from_slice(dk1.data());
                head_grads.extend_from_slice(db1c.data());
                head_grads.extend_from_slice(dk2.data());
                head_grads.extend_from_slice(db2c.data());
                d_u
            }
            _ => unreachable!("head cache matches head kind"),
        };

        let d_p3 = max_unpool2d_backward(&cache.mask3, cache.p3.shape(), &d_unpooled)?;
        let d_r3 = max_pool2d_backward(&cache.mask3, &d_p3)?;
        let d_c3 = relu_backward(&cache.c3, &d_r3);
        let (d_p2, dk3, dbc3) = conv2d_backward(&cache.p2, &self.conv3, &d_c3)?;
        let d_r2 = max_pool2d_backward(&cache.mask2, &d_p2)?;
        let d_c2 = relu_backward(&cache.c2, &d_r2);
        let (d_p1, dk2, dbc2) = conv2d_backward(&cache.p1, &self.conv2, &d_c2)?;
        let d_r1 = max_pool2d_backward(&cache.mask1, &d_p1)?;
        let d_c1 = relu_backward(&cache.c1, &d_r1);
        let (_, dk1, dbc1) = conv2d_backward(&cache.input, &self.conv1, &d_c1)?;

        let mut flat_grads = flatten_tensors(&[&dk1, &dbc1, &dk2, &dbc2, &dk3, &dbc3]);
        flat_grads.extend_from_slice(&head_grads);
        flat_grads.extend(flatten_tensors(&[&dw1, &db1, &dw2, &db2]));
        Ok(flat_grads)
    }

    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_full(input)?.0)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = flatten_tensors(&[
            &self.conv1.kernels,
            &self.conv1.bias,
            &self.conv2.kernels,
            &self.conv2.bias,
            &self.conv3.kernels,
            &self.conv3.bias,
        ]);
        match &self.head {
            PathHead::Sasa(l1, l2) => {
                for l in [l1, l2] {
                    for t in l.w_q.iter().chain(&l.w_k).chain(&l.w_v) {
                        out.extend_from_slice(t.data());
                    }
                    out.extend_from_slice(l.row_embed.data());
                    out.extend_from_slice(l.col_embed.data());
                }
            }
            PathHead::Conv(l1, l2) => {
                for l in [l1, l2] {
                    out.extend_from_slice(l.kernels.data());
                    out.extend_from_slice(l.bias.data());
                }
            }
        }
        out.extend(flatten_tensors(&[
            &self.dense1.weights,
            &self.dense1.bias,
            &self.dense2.weights,
            &self.dense2.bias,
        ]));
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut tensors: Vec<&mut Tensor> = vec![
            &mut self.conv1.kernels,
            &mut self.conv1.bias,
            &mut self.conv2.kernels,
            &mut self.conv2.bias,
            &mut self.conv3.kernels,
            &mut self.conv3.bias,
        ];
        match &mut self.head {
            PathHead::Sasa(l1, l2) => {
                for l in [l1, l2] {
                    for t in l.w_q.iter_mut().chain(&mut l.w_k).chain(&mut l.w_v) {
                        tensors.push(t);
                    }
                    tensors.push(&mut l.row_embed);
                    tensors.push(&mut l.col_embed);
                }
            }
            PathHead::Conv(l1, l2) => {
                for l in [l1, l2] {
                    tensors.push(&mut l.kernels);
                    tensors.push(&mut l.bias);
                }
            }
        }
        tensors.push(&mut self.dense1.weights);
        tensors.push(&mut self.dense1.bias);
        tensors.push(&mut self.dense2.weights);
        tensors.push(&mut self.dense2.bias);
        scatter_params(&mut tensors, flat)
    }

    pub fn loss_and_grad(&self, input: &Tensor, target_norm: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (out, cache) = self.forward_full(input)?;
        let (loss, d_out) = match self.loss {
            PathLossKind::Divergence { lambda } => {
                // Per-position scaling keeps the gradient magnitude
                // comparable with the MSE ablation.
                let scale = 1.0 / target_norm.len() as f64;
                let loss = scale * soft_dtw_divergence(out.data(), target_norm, lambda)?;
                let mut grad = soft_dtw_divergence_grad(out.data(), target_norm, lambda)?;
                grad.iter_mut().for_each(|g| *g *= scale);
                (loss, Tensor::from_vec(out.shape(), grad)?)
            }
            PathLossKind::Mse => {
                let target = Tensor::from_vec(&[target_norm.len()], target_norm.to_vec())?;
                (
                    mse_padded_loss(&out, &target)?,
                    mse_padded_loss_grad(&out, &target)?,
                )
            }
        };
        Ok((loss, self.backward(&cache, &d_out)?))
    }

    fn loss_only(&self, input: &Tensor, target_norm: &[f64]) -> Result<f64> {
        let out = self.predict(input)?;
        match self.loss {
            PathLossKind::Divergence { lambda } => Ok(soft_dtw_divergence(
                out.data(),
                target_norm,
                lambda,
            )? / target_norm.len() as f64),
            PathLossKind::Mse => {
                let target = Tensor::from_vec(&[target_norm.len()], target_norm.to_vec())?;
                mse_padded_loss(&out, &target)
            }
        }
    }
}

// ---------------------------------------------------------------------
// Shared training loop
// ---------------------------------------------------------------------

/// A trained toy model of either architecture.
#[derive(Debug, Clone)]
pub enum ToyModel {
    Inflection(InflectionNet),
    Path(PathNet),
}

impl ToyModel {
    pub fn params_flat(&self) -> Vec<f64> {
        match self {
            ToyModel::Inflection(n) => n.params_flat(),
            ToyModel::Path(n) => n.params_flat(),
        }
    }
}

/// Turns a similarity matrix into a standardized [1, grid, grid] tensor.
pub fn matrix_to_input(sim: &CrossSimilarityMatrix, grid: usize) -> Result<Tensor> {
    if sim.rows() != grid || sim.cols() != grid {
        return Err(Error::ShapeMismatch(format!(
            "expected a {grid} x {grid} matrix, got {} x {}",
            sim.rows(),
            sim.cols()
        )));
    }
    let mut t = Tensor::from_vec(&[1, grid, grid], sim.as_slice().to_vec())?;
    t.standardize();
    Ok(t)
}

/// Sentinel-padded inflection targets in frames, in chronological
/// (a, b) coordinate order.
pub fn inflection_targets(
    infl: &InflectionPointSet,
    output_len: usize,
    padding_value: f64,
) -> Result<Vec<f64>> {
    if infl.len() * 2 > output_len {
        return Err(Error::ShapeMismatch(format!(
            "{} inflection points exceed {} output slots",
            infl.len(),
            output_len / 2
        )));
    }
    let mut out = Vec::with_capacity(output_len);
    for &(a, b) in &infl.points {
        out.push(a as f64);
        out.push(b as f64);
    }
    out.resize(output_len, padding_value);
    Ok(out)
}

struct Split {
    train: Vec<usize>,
    val: Vec<usize>,
}

fn split_dataset(n: usize, val_fraction: f64, rng: &mut ChaCha8Rng) -> Split {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = indices.split_off(n - n_val);
    Split {
        train: indices,
        val,
    }
}

fn run_sgd<F, G>(
    n_params: usize,
    train_idx: &[usize],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut loss_and_grad: F,
    mut apply: G,
) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<(f64, Vec<f64>)>,
    G: FnMut(&[f64]) -> Result<()>,
{
    let mut velocity = vec![0.0f64; n_params];
    let mut update = vec![0.0f64; n_params];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = train_idx.to_vec();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            update.iter_mut().for_each(|v| *v = 0.0);
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (loss, grad) = loss_and_grad(idx)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_no,
                    });
                }
                batch_loss += loss;
                for (u, g) in update.iter_mut().zip(&grad) {
                    *u += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            epoch_loss += batch_loss;
            for (v, u) in velocity.iter_mut().zip(&update) {
                *v = config.momentum * *v - config.learning_rate * *u * scale;
            }
            apply(&velocity)?;
        }
        epoch_losses.push(epoch_loss / order.len() as f64);
    }
    Ok(epoch_losses)
}

/// Trains the progressively dilated inflection regressor. The `dilations`
/// default to (1, 2, 3); passing (1, 1, 1) gives the undilated ablation.
pub fn train_inflection_regressor(
    dataset: &[(CrossSimilarityMatrix, InflectionPointSet)],
    dilations: (usize, usize, usize),
    config: &TrainConfig,
) -> Result<(ToyModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("inflection training set is empty"));
    }
    let grid = config.grid;
    let inputs: Vec<Tensor> = dataset
        .iter()
        .map(|(sim, _)| matrix_to_input(sim, grid))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = dataset
        .iter()
        .map(|(_, infl)| {
            let frames = inflection_targets(infl, config.output_len, config.padding_value)?;
            Ok(frames.iter().map(|v| v / grid as f64).collect())
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = InflectionNet::new(
        grid,
        config.channels,
        dilations,
        config.hidden,
        config.output_len,
        &mut rng,
    )?;
    let split = split_dataset(dataset.len(), config.val_fraction, &mut rng);

    // Start the output layer at the per-slot training means so the early
    // epochs refine input-dependent structure instead of fitting
    // constants through the whole stack.
    for slot in 0..config.output_len {
        let mean = split
            .train
            .iter()
            .map(|&i| targets[i][slot])
            .sum::<f64>()
            / split.train.len() as f64;
        net.dense2.bias.data_mut()[slot] = mean;
    }

    let initial_loss = mean_loss(&split.train, |i| net.loss_only(&inputs[i], &targets[i]))?;

    let mut params = net.params_flat();
    let epoch_losses = {
        let net_cell = std::cell::RefCell::new(&mut net);
        run_sgd(
            params.len(),
            &split.train,
            config,
            &mut rng,
            |i| net_cell.borrow().loss_and_grad(&inputs[i], &targets[i]),
            |velocity| {
                for (p, v) in params.iter_mut().zip(velocity) {
                    *p += v;
                }
                net_cell.borrow_mut().set_params_flat(&params)
            },
        )?
    };

    let sentinel_norm = config.padding_value / grid as f64;
    let val_metric_frames = {
        let mut total = 0.0;
        let mut count = 0usize;
        for &i in &split.val {
            let pred = net.predict(&inputs[i])?;
            for (p, t) in pred.data().iter().zip(&targets[i]) {
                if (*t - sentinel_norm).abs() < 1e-9 {
                    continue;
                }
                total += (p - t).abs() * grid as f64;
                count += 1;
            }
        }
        total / count.max(1) as f64
    };

    Ok((
        ToyModel::Inflection(net),
        TrainReport {
            initial_loss,
            epoch_losses,
            val_metric_frames,
            n_train: split.train.len(),
            n_val: split.val.len(),
        },
    ))
}

/// Trains the convolutional-attentional path regressor (or its conv/MSE
/// ablations) on (matrix, index-sequence) pairs.
pub fn train_path_regressor(
    dataset: &[(CrossSimilarityMatrix, Vec<f64>)],
    head_kind: PathHeadKind,
    use_divergence_loss: bool,
    config: &TrainConfig,
) -> Result<(ToyModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("path training set is empty"));
    }
    let grid = config.grid;
    let inputs: Vec<Tensor> = dataset
        .iter()
        .map(|(sim, _)| matrix_to_input(sim, grid))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = dataset
        .iter()
        .map(|(_, seq)| {
            if seq.len() != config.output_len {
                return Err(Error::ShapeMismatch(format!(
                    "target length {} != output length {}",
                    seq.len(),
                    config.output_len
                )));
            }
            Ok(seq.iter().map(|v| v / grid as f64).collect())
        })
        .collect::<Result<_>>()?;

    let loss = if use_divergence_loss {
        PathLossKind::Divergence {
            lambda: config.lambda,
        }
    } else {
        PathLossKind::Mse
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = PathNet::new(
        grid,
        config.channels,
        config.hidden,
        config.output_len,
        head_kind,
        loss,
        &mut rng,
    )?;
    let split = split_dataset(dataset.len(), config.val_fraction, &mut rng);

    let initial_loss = mean_loss(&split.train, |i| net.loss_only(&inputs[i], &targets[i]))?;

    let mut params = net.params_flat();
    let epoch_losses = {
        let net_cell = std::cell::RefCell::new(&mut net);
        run_sgd(
            params.len(),
            &split.train,
            config,
            &mut rng,
            |i| net_cell.borrow().loss_and_grad(&inputs[i], &targets[i]),
            |velocity| {
                for (p, v) in params.iter_mut().zip(velocity) {
                    *p += v;
                }
                net_cell.borrow_mut().set_params_flat(&params)
            },
        )?
    };

    let val_metric_frames = {
        let mut total = 0.0;
        let mut count = 0usize;
        for &i in &split.val {
            let pred = net.predict(&inputs[i])?;
            for (p, t) in pred.data().iter().zip(&targets[i]) {
                total += (p - t).abs() * grid as f64;
                count += 1;
            }
        }
        total / count.max(1) as f64
    };

    Ok((
        ToyModel::Path(net),
        TrainReport {
            initial_loss,
            epoch_losses,
            val_metric_frames,
            n_train: split.train.len(),
            n_val: split.val.len(),
        },
    ))
}

fn mean_loss<F>(indices: &[usize], mut f: F) -> Result<f64>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut total = 0.0;
    for &i in indices {
        total += f(i)?;
    }
    Ok(total / indices.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::datagen;

    #[test]
    fn inflection_training_descends_and_is_deterministic() {
        let dataset = datagen::inflection_dataset(60, 4242).unwrap();
        let mut config = TrainConfig::inflection_default(7);
        config.epochs = 2;
        let (_, report_a) =
            train_inflection_regressor(&dataset, (1, 2, 3), &config).unwrap();
        let (_, report_b) =
            train_inflection_regressor(&dataset, (1, 2, 3), &config).unwrap();
        assert!(report_a.epoch_losses[0] < report_a.initial_loss);
        assert_eq!(report_a.epoch_losses, report_b.epoch_losses);
        assert_eq!(report_a.val_metric_frames, report_b.val_metric_frames);
    }

    #[test]
    fn path_training_descends() {
        let dataset = datagen::path_dataset(40, 99).unwrap();
        let mut config = TrainConfig::path_default(3);
        config.epochs = 2;
        let (model, report) =
            train_path_regressor(&dataset, PathHeadKind::Sasa, true, &config).unwrap();
        assert!(report.epoch_losses[1] < report.initial_loss);
        match model {
            ToyModel::Path(net) => assert_eq!(net.head_kind(), PathHeadKind::Sasa),
            _ => panic!("expected a path model"),
        }
    }

    #[test]
    fn inflection_targets_pad_with_sentinel() {
        let infl = InflectionPointSet::new(vec![(10, 20), (11, 5)]).unwrap();
        let t = inflection_targets(&infl, 8, 256.0).unwrap();
        assert_eq!(t, vec![10.0, 20.0, 11.0, 5.0, 256.0, 256.0, 256.0, 256.0]);
    }
}
