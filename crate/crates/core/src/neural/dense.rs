//! Fully connected layer.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// [out, in]
    pub weights: Tensor,
    /// [out]
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> DenseLayer {
        DenseLayer {
            weights: Tensor::randn_scaled(&[out_dim, in_dim], in_dim, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.len() != self.in_dim() {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects {} inputs, got {}",
                self.in_dim(),
                input.len()
            )));
        }
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        let w = self.weights.data();
        let x = input.data();
        let mut out = Tensor::zeros(&[out_dim]);
        for (o, slot) in out.data_mut().iter_mut().enumerate() {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            *slot = self.bias.data()[o]
                + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(out)
    }

    /// Returns (d_input, d_weights, d_bias).
    pub fn backward(&self, input: &Tensor, d_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        if d_out.len() != self.out_dim() {
            return Err(Error::ShapeMismatch(format!(
                "dense layer emits {} outputs, gradient has {}",
                self.out_dim(),
                d_out.len()
            )));
        }
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        let w = self.weights.data();
        let x = input.data();
        let g = d_out.data();

        let mut d_input = Tensor::zeros(&[in_dim]);
        let mut d_weights = Tensor::zeros(&[out_dim, in_dim]);
        let di = d_input.data_mut();
        let dw = d_weights.data_mut();
        for o in 0..out_dim {
            let go = g[o];
            for i in 0..in_dim {
                dw[o * in_dim + i] = go * x[i];
                di[i] += go * w[o * in_dim + i];
            }
        }
        let d_bias = Tensor::from_vec(&[out_dim], g.to_vec())?;
        Ok((d_input, d_weights, d_bias))
    }
}

/// Rectified linear unit, elementwise.
pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Gradient mask: passes upstream gradient where the input was positive.
pub fn relu_backward(input: &Tensor, d_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = DenseLayer::new(2, 2, &mut rng);
        layer.weights = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        layer.bias = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let out = layer
            .forward(&Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(out.data(), &[3.5, 6.5]);
    }

    #[test]
    fn relu_masks_gradient() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = Tensor::from_vec(&[3], vec![5.0, 5.0, 5.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let dx = relu_backward(&x, &g);
        assert_eq!(dx.data(), &[0.0, 0.0, 5.0]);
    }
}
