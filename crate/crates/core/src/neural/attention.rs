//! Stand-alone self-attention over local pixel neighbourhoods with
//! relative row/column offset embeddings, replacing spatial convolution.
//!
//! Per pixel, queries attend over the in-bounds part of the window of
//! spatial extent `k` centred on it; the channel dimension is split
//! depthwise into four head groups, each with its own projections, and
//! the head outputs are concatenated.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SasaLayer {
    pub heads: usize,
    /// Neighbourhood half-extent; the window spans `2k + 1` per axis.
    pub spatial_extent: usize,
    /// Per-head projections, each [group, group].
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
    /// Row offset embeddings [2k + 1, group / 2], shared across heads.
    pub row_embed: Tensor,
    /// Column offset embeddings [2k + 1, group / 2], shared across heads.
    pub col_embed: Tensor,
    channels: usize,
}

/// Per-head parameter gradients, shaped like the layer's own tensors.
#[derive(Debug, Clone)]
pub struct SasaGrads {
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
    pub row_embed: Tensor,
    pub col_embed: Tensor,
}

/// Activations kept from the forward pass for the backward pass.
pub struct SasaCache {
    /// Per head: [h * w * group] query/key/value maps.
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Per head: [h * w * window_area] attention weights, zero outside
    /// the in-bounds neighbourhood subset.
    alpha: Vec<Vec<f64>>,
    width: usize,
}

impl SasaCache {
    /// Attention weights for one pixel and head over the full window grid.
    pub fn weights(&self, head: usize, i: usize, j: usize, window: usize) -> &[f64] {
        let area = window * window;
        let pix = i * self.width + j;
        &self.alpha[head][pix * area..(pix + 1) * area]
    }
}

impl SasaLayer {
    pub fn new(channels: usize, heads: usize, spatial_extent: usize, rng: &mut impl Rng) -> Result<SasaLayer> {
        if channels % heads != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{channels} channels do not split into {heads} heads"
            )));
        }
        let group = channels / heads;
        if group % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "head group {group} must be even to host row/col embeddings"
            )));
        }
        let window = 2 * spatial_extent + 1;
        let mut mk = |_: usize| Tensor::randn_scaled(&[group, group], group, rng);
        let w_q: Vec<Tensor> = (0..heads).map(&mut mk).collect();
        let w_k: Vec<Tensor> = (0..heads).map(&mut mk).collect();
        let w_v: Vec<Tensor> = (0..heads).map(&mut mk).collect();
        Ok(SasaLayer {
            heads,
            spatial_extent,
            w_q,
            w_k,
            w_v,
            row_embed: Tensor::uniform(&[window, group / 2], -0.1, 0.1, rng),
            col_embed: Tensor::uniform(&[window, group / 2], -0.1, 0.1, rng),
            channels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn group(&self) -> usize {
        self.channels / self.heads
    }

    pub fn window(&self) -> usize {
        2 * self.spatial_extent + 1
    }

    pub fn zero_grads(&self) -> SasaGrads {
        SasaGrads {
            w_q: self.w_q.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            w_k: self.w_k.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            w_v: self.w_v.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            row_embed: Tensor::zeros(self.row_embed.shape()),
            col_embed: Tensor::zeros(self.col_embed.shape()),
        }
    }

    /// Projects the head group of `input` at every pixel through `w`,
    /// producing a [pixels * group] map.
    fn project(&self, input: &Tensor, w: &Tensor, head: usize) -> Vec<f64> {
        let (h, wd) = (input.shape()[1], input.shape()[2]);
        let g = self.group();
        let base = head * g;
        let wm = w.data();
        let mut out = vec![0.0; h * wd * g];
        for i in 0..h {
            for j in 0..wd {
                let pix = i * wd + j;
                for r in 0..g {
                    let mut acc = 0.0;
                    for c in 0..g {
                        acc += wm[r * g + c] * input.at3(base + c, i, j);
                    }
                    out[pix * g + r] = acc;
                }
            }
        }
        out
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, SasaCache)> {
        let shape = input.shape();
        if shape.len() != 3 || shape[0] != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "expected [{}, h, w] input, got {shape:?}",
                self.channels
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        let g = self.group();
        let k = self.spatial_extent as i64;
        let window = self.window();
        let area = window * window;

        let mut out = Tensor::zeros(&[self.channels, h, w]);
        let mut cache = SasaCache {
            q: Vec::with_capacity(self.heads),
            k: Vec::with_capacity(self.heads),
            v: Vec::with_capacity(self.heads),
            alpha: Vec::with_capacity(self.heads),
            width: w,
        };

        for head in 0..self.heads {
            let qm = self.project(input, &self.w_q[head], head);
            let km = self.project(input, &self.w_k[head], head);
            let vm = self.project(input, &self.w_v[head], head);
            let mut alpha = vec![0.0f64; h * w * area];

            for i in 0..h {
                for j in 0..w {
                    let pix = i * w + j;
                    let q = &qm[pix * g..(pix + 1) * g];
                    // Logits over the in-bounds neighbourhood subset.
                    let mut logits = [0.0f64; 0].to_vec();
                    logits.reserve(area);
                    let mut slots = Vec::with_capacity(area);
                    for da in -k..=k {
                        let a = i as i64 + da;
                        if a < 0 || a >= h as i64 {
                            continue;
                        }
                        for db in -k..=k {
                            let b = j as i64 + db;
                            if b < 0 || b >= w as i64 {
                                continue;
                            }
                            let npix = a as usize * w + b as usize;
                            let key = &km[npix * g..(npix + 1) * g];
                            let mut logit = 0.0;
                            for c in 0..g {
                                logit += q[c] * key[c];
                            }
                            let ri = (da + k) as usize;
                            let ci = (db + k) as usize;
                            for c in 0..g / 2 {
                                logit += q[c] * self.row_embed.data()[ri * (g / 2) + c];
                                logit += q[g / 2 + c] * self.col_embed.data()[ci * (g / 2) + c];
                            }
                            logits.push(logit);
                            slots.push((ri * window + ci, npix));
                        }
                    }
                    // Softmax with max shift.
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut denom = 0.0;
                    for l in logits.iter_mut() {
                        *l = (*l - max).exp();
                        denom += *l;
                    }
                    for (weight, &(slot, npix)) in logits.iter().zip(&slots) {
                        let a = weight / denom;
                        alpha[pix * area + slot] = a;
                        let val = &vm[npix * g..(npix + 1) * g];
                        for c in 0..g {
                            let idx = out.idx3(head * g + c, i, j);
                            out.data_mut()[idx] += a * val[c];
                        }
                    }
                }
            }

            cache.q.push(qm);
            cache.k.push(km);
            cache.v.push(vm);
            cache.alpha.push(alpha);
        }
        Ok((out, cache))
    }

    /// Returns (d_input, parameter gradients).
    pub fn backward(
        &self,
        input: &Tensor,
        cache: &SasaCache,
        d_out: &Tensor,
    ) -> Result<(Tensor, SasaGrads)> {
        let shape = input.shape();
        let (h, w) = (shape[1], shape[2]);
        if d_out.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} does not match input {shape:?}",
                d_out.shape()
            )));
        }
        let g = self.group();
        let half = g / 2;
        let k = self.spatial_extent as i64;
        let window = self.window();
        let area = window * window;

        let mut d_input = Tensor::zeros(shape);
        let mut grads = self.zero_grads();

        for head in 0..self.heads {
            let qm = &cache.q[head];
            let km = &cache.k[head];
            let vm = &cache.v[head];
            let alpha = &cache.alpha[head];

            let mut dq = vec![0.0f64; h * w * g];
            let mut dk = vec![0.0f64; h * w * g];
            let mut dv = vec![0.0f64; h * w * g];

            for i in 0..h {
                for j in 0..w {
                    let pix = i * w + j;
                    let q = &qm[pix * g..(pix + 1) * g];
                    let dy: Vec<f64> =
                        (0..g).map(|c| d_out.at3(head * g + c, i, j)).collect();

                    // Collect the same in-bounds neighbourhood.
                    let mut slots: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(area);
                    for da in -k..=k {
                        let a = i as i64 + da;
                        if a < 0 || a >= h as i64 {
                            continue;
                        }
                        for db in -k..=k {
                            let b = j as i64 + db;
                            if b < 0 || b >= w as i64 {
                                continue;
                            }
                            let ri = (da + k) as usize;
                            let ci = (db + k) as usize;
                            slots.push((ri * window + ci, a as usize * w + b as usize, ri, ci));
                        }
                    }

                    // d_alpha and the softmax Jacobian.
                    let mut d_alpha = Vec::with_capacity(slots.len());
                    let mut inner = 0.0;
                    for &(slot, npix, _, _) in &slots {
                        let a = alpha[pix * area + slot];
                        let val = &vm[npix * g..(npix + 1) * g];
                        let da_ = (0..g).map(|c| dy[c] * val[c]).sum::<f64>();
                        inner += a * da_;
                        d_alpha.push(da_);
                    }
                    for (&(slot, npix, ri, ci), da_) in slots.iter().zip(&d_alpha) {
                        let a = alpha[pix * area + slot];
                        let dlogit = a * (da_ - inner);
                        // dV from the weighted sum.
                        for c in 0..g {
                            dv[npix * g + c] += a * dy[c];
                        }
                        // dQ from keys and offsets, dK from the query.
                        let key = &km[npix * g..(npix + 1) * g];
                        for c in 0..g {
                            dq[pix * g + c] += dlogit * key[c];
                            dk[npix * g + c] += dlogit * q[c];
                        }
                        for c in 0..half {
                            dq[pix * g + c] += dlogit * self.row_embed.data()[ri * half + c];
                            dq[pix * g + half + c] +=
                                dlogit * self.col_embed.data()[ci * half + c];
                            grads.row_embed.data_mut()[ri * half + c] += dlogit * q[c];
                            grads.col_embed.data_mut()[ci * half + c] += dlogit * q[half + c];
                        }
                    }
                }
            }

            // Push projection gradients back to inputs and weights.
            let base = head * g;
            for (dmap, wmat, dwmat) in [
                (&dq, &self.w_q[head], &mut grads.w_q[head]),
                (&dk, &self.w_k[head], &mut grads.w_k[head]),
                (&dv, &self.w_v[head], &mut grads.w_v[head]),
            ] {
                let wm = wmat.data();
                let dw = dwmat.data_mut();
                for i in 0..h {
                    for j in 0..w {
                        let pix = i * w + j;
                        for r in 0..g {
                            let gval = dmap[pix * g + r];
                            if gval == 0.0 {
                                continue;
                            }
                            for c in 0..g {
                                dw[r * g + c] += gval * input.at3(base + c, i, j);
                                let idx = d_input.idx3(base + c, i, j);
                                d_input.data_mut()[idx] += gval * wm[r * g + c];
                            }
                        }
                    }
                }
            }
        }
        Ok((d_input, grads))
    }
}
