//! Losses: the contrastive metric-learning objective, Euclidean embedding
//! distance, and mean squared error over sentinel-padded targets.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Contrastive loss. Matching pairs (label 0) pay half the squared
/// distance; non-matching pairs (label 1) pay half the squared hinge on
/// the margin, so pairs already further apart than the margin contribute
/// nothing.
pub fn contrastive_loss(d_w: f64, label: u8, margin: f64) -> Result<f64> {
    if d_w < 0.0 {
        return Err(Error::NegativeDistance(d_w));
    }
    if !(margin > 0.0) {
        return Err(Error::Invalid(format!("margin must be positive, got {margin}")));
    }
    Ok(match label {
        0 => 0.5 * d_w * d_w,
        1 => {
            let hinge = (margin - d_w).max(0.0);
            0.5 * hinge * hinge
        }
        other => {
            return Err(Error::Invalid(format!(
                "contrastive label must be 0 or 1, got {other}"
            )))
        }
    })
}

/// d(loss)/d(d_w) for [`contrastive_loss`].
pub fn contrastive_loss_grad(d_w: f64, label: u8, margin: f64) -> Result<f64> {
    if d_w < 0.0 {
        return Err(Error::NegativeDistance(d_w));
    }
    Ok(match label {
        0 => d_w,
        1 => {
            if d_w < margin {
                d_w - margin
            } else {
                0.0
            }
        }
        other => {
            return Err(Error::Invalid(format!(
                "contrastive label must be 0 or 1, got {other}"
            )))
        }
    })
}

/// Euclidean distance between two flattened embeddings.
pub fn embedding_distance(e1: &Tensor, e2: &Tensor) -> Result<f64> {
    if e1.shape() != e2.shape() {
        return Err(Error::ShapeMismatch(format!(
            "embedding shapes differ: {:?} vs {:?}",
            e1.shape(),
            e2.shape()
        )));
    }
    Ok(e1
        .data()
        .iter()
        .zip(e2.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Mean squared error where unused target slots hold the padding
/// sentinel. Every position contributes: the network is expected to learn
/// to emit the sentinel for unused slots rather than having them masked.
pub fn mse_padded_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction length {} vs target length {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Gradient of [`mse_padded_loss`] with respect to the prediction.
pub fn mse_padded_loss_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction length {} vs target length {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Tensor::from_vec(pred.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrastive_examples() {
        assert_eq!(contrastive_loss(0.0, 0, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive_loss(1.5, 1, 1.0).unwrap(), 0.0);
        assert!((contrastive_loss(0.5, 1, 1.0).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn contrastive_continuous_at_margin() {
        let below = contrastive_loss(1.0 - 1e-9, 1, 1.0).unwrap();
        let at = contrastive_loss(1.0, 1, 1.0).unwrap();
        let above = contrastive_loss(1.0 + 1e-9, 1, 1.0).unwrap();
        assert!(below < 1e-15);
        assert_eq!(at, 0.0);
        assert_eq!(above, 0.0);
    }

    #[test]
    fn contrastive_rejects_bad_input() {
        assert!(contrastive_loss(-0.1, 0, 1.0).is_err());
        assert!(contrastive_loss(0.1, 2, 1.0).is_err());
    }

    #[test]
    fn contrastive_grad_finite_difference() {
        let h = 1e-6;
        for &(d, label) in &[(0.3, 0u8), (0.7, 1), (1.4, 1)] {
            let analytic = contrastive_loss_grad(d, label, 1.0).unwrap();
            let up = contrastive_loss(d + h, label, 1.0).unwrap();
            let down = contrastive_loss(d - h, label, 1.0).unwrap();
            let numeric = (up - down) / (2.0 * h);
            assert!((analytic - numeric).abs() < 1e-6);
        }
    }

    #[test]
    fn embedding_distance_cases() {
        let a = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        assert_eq!(embedding_distance(&a, &a).unwrap(), 0.0);
        assert!((embedding_distance(&a, &b).unwrap() - 2.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(
            embedding_distance(&a, &b).unwrap(),
            embedding_distance(&b, &a).unwrap()
        );
        let c = Tensor::zeros(&[3]);
        assert!(embedding_distance(&a, &c).is_err());
    }

    #[test]
    fn mse_padded_examples() {
        let t = Tensor::from_vec(&[2], vec![12.0, 4096.0]).unwrap();
        let p = Tensor::from_vec(&[2], vec![10.0, 4096.0]).unwrap();
        assert_eq!(mse_padded_loss(&p, &t).unwrap(), 2.0);
        assert_eq!(mse_padded_loss(&t, &t).unwrap(), 0.0);
        let all_pad = Tensor::from_vec(&[3], vec![4096.0; 3]).unwrap();
        assert_eq!(mse_padded_loss(&all_pad, &all_pad).unwrap(), 0.0);
    }
}
