//! Dilated valid 2-D convolution with explicit forward and backward passes.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Effective kernel extent once dilation spreads the taps apart:
/// `m + (d - 1) * (m - 1)`.
pub fn effective_kernel_size(m: usize, d: usize) -> usize {
    m + (d - 1) * (m - 1)
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    /// [out_ch, in_ch, m, m]
    pub kernels: Tensor,
    /// [out_ch]
    pub bias: Tensor,
    pub dilation: usize,
}

impl Conv2dLayer {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Conv2dLayer {
        assert!(kernel >= 1 && dilation >= 1);
        let fan_in = in_ch * kernel * kernel;
        Conv2dLayer {
            kernels: Tensor::randn_scaled(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
            bias: Tensor::zeros(&[out_ch]),
            dilation,
        }
    }

    pub fn out_ch(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_ch(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let eff = effective_kernel_size(self.kernel_size(), self.dilation);
        if h < eff || w < eff {
            return Err(Error::ShapeMismatch(format!(
                "effective kernel {eff} exceeds input {h} x {w}"
            )));
        }
        Ok((h - eff + 1, w - eff + 1))
    }
}

/// Valid convolution (no padding): output extent shrinks by the effective
/// kernel size minus one. Taps accumulate in kernel row-major order so a
/// zero-interleaved kernel at dilation 1 reproduces the dilated result
/// bit for bit.
pub fn conv2d_forward(input: &Tensor, layer: &Conv2dLayer) -> Result<Tensor> {
    let shape = input.shape();
    if shape.len() != 3 || shape[0] != layer.in_ch() {
        return Err(Error::ShapeMismatch(format!(
            "expected [{}, h, w] input, got {shape:?}",
            layer.in_ch()
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let (oh, ow) = layer.output_extent(h, w)?;
    let (out_ch, in_ch, m, d) = (
        layer.out_ch(),
        layer.in_ch(),
        layer.kernel_size(),
        layer.dilation,
    );

    let mut out = Tensor::zeros(&[out_ch, oh, ow]);
    let kdata = layer.kernels.data();
    let idata = input.data();
    let odata = out.data_mut();
    for oc in 0..out_ch {
        let bias = layer.bias.data()[oc];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias;
                for ic in 0..in_ch {
                    let kbase = ((oc * in_ch) + ic) * m * m;
                    let ibase = ic * h * w;
                    for u in 0..m {
                        let row = ibase + (i + d * u) * w + j;
                        let krow = kbase + u * m;
                        for v in 0..m {
                            acc += idata[row + d * v] * kdata[krow + v];
                        }
                    }
                }
                odata[(oc * oh + i) * ow + j] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss through the convolution: returns
/// (d_input, d_kernels, d_bias) given the upstream gradient d_out.
pub fn conv2d_backward(
    input: &Tensor,
    layer: &Conv2dLayer,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let shape = input.shape();
    let (h, w) = (shape[1], shape[2]);
    let (oh, ow) = layer.output_extent(h, w)?;
    if d_out.shape() != [layer.out_ch(), oh, ow] {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?} does not match output [{}, {oh}, {ow}]",
            d_out.shape(),
            layer.out_ch()
        )));
    }
    let (out_ch, in_ch, m, d) = (
        layer.out_ch(),
        layer.in_ch(),
        layer.kernel_size(),
        layer.dilation,
    );

    let mut d_input = Tensor::zeros(&[in_ch, h, w]);
    let mut d_kernels = Tensor::zeros(layer.kernels.shape());
    let mut d_bias = Tensor::zeros(&[out_ch]);

    let kdata = layer.kernels.data();
    let idata = input.data();
    let gdata = d_out.data();
    let di = d_input.data_mut();
    let dk = d_kernels.data_mut();
    let db = d_bias.data_mut();

    for oc in 0..out_ch {
        for i in 0..oh {
            for j in 0..ow {
                let g = gdata[(oc * oh + i) * ow + j];
                db[oc] += g;
                for ic in 0..in_ch {
                    let kbase = ((oc * in_ch) + ic) * m * m;
                    let ibase = ic * h * w;
                    for u in 0..m {
                        let row = ibase + (i + d * u) * w + j;
                        let krow = kbase + u * m;
                        for v in 0..m {
                            dk[krow + v] += g * idata[row + d * v];
                            di[row + d * v] += g * kdata[krow + v];
                        }
                    }
                }
            }
        }
    }
    Ok((d_input, d_kernels, d_bias))
}

/// Expands a kernel for dilation `d` into its explicit zero-interleaved
/// form usable at dilation 1.
pub fn zero_interleave_kernel(layer: &Conv2dLayer) -> Conv2dLayer {
    let (out_ch, in_ch, m, d) = (
        layer.out_ch(),
        layer.in_ch(),
        layer.kernel_size(),
        layer.dilation,
    );
    let me = effective_kernel_size(m, d);
    let mut kernels = Tensor::zeros(&[out_ch, in_ch, me, me]);
    let src = layer.kernels.data();
    let dst = kernels.data_mut();
    for oc in 0..out_ch {
        for ic in 0..in_ch {
            for u in 0..m {
                for v in 0..m {
                    let s = (((oc * in_ch) + ic) * m + u) * m + v;
                    let t = (((oc * in_ch) + ic) * me + d * u) * me + d * v;
                    dst[t] = src[s];
                }
            }
        }
    }
    Conv2dLayer {
        kernels,
        bias: layer.bias.clone(),
        dilation: 1,
    }
}
