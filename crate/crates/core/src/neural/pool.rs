//! 2x2 max pooling with recorded argmax masks and the matching unpooling
//! that places each value back at its recorded location.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Argmax locations recorded per pooling window, as flat indices into the
/// pre-pool tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolMask {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Window 2x2, stride 2. Ties resolve to the lowest flat index, so
/// repeated runs are deterministic.
pub fn max_pool2d(input: &Tensor) -> Result<(Tensor, PoolMask)> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected [ch, h, w] input, got {shape:?}"
        )));
    }
    let (ch, h, w) = (shape[0], shape[1], shape[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pooling needs even spatial extents, got {h} x {w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[ch, oh, ow]);
    let mut argmax = Vec::with_capacity(ch * oh * ow);
    let idata = input.data();
    let odata = out.data_mut();
    for c in 0..ch {
        for i in 0..oh {
            for j in 0..ow {
                let mut best_idx = (c * h + 2 * i) * w + 2 * j;
                let mut best = idata[best_idx];
                for (du, dv) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (c * h + 2 * i + du) * w + 2 * j + dv;
                    if idata[idx] > best {
                        best = idata[idx];
                        best_idx = idx;
                    }
                }
                odata[(c * oh + i) * ow + j] = best;
                argmax.push(best_idx);
            }
        }
    }
    Ok((
        out,
        PoolMask {
            input_shape: shape.to_vec(),
            argmax,
        },
    ))
}

/// Routes the upstream gradient back to the recorded argmax positions.
pub fn max_pool2d_backward(mask: &PoolMask, d_out: &Tensor) -> Result<Tensor> {
    if d_out.len() != mask.argmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "pool gradient has {} values, mask recorded {}",
            d_out.len(),
            mask.argmax.len()
        )));
    }
    let mut d_input = Tensor::zeros(&mask.input_shape);
    let di = d_input.data_mut();
    for (&idx, &g) in mask.argmax.iter().zip(d_out.data()) {
        di[idx] += g;
    }
    Ok(d_input)
}

/// Places each pooled value at its recorded argmax coordinate; every other
/// cell is zero. The output has the pre-pool shape.
pub fn max_unpool2d(input: &Tensor, mask: &PoolMask) -> Result<Tensor> {
    if input.len() != mask.argmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "unpool input has {} values, mask recorded {}",
            input.len(),
            mask.argmax.len()
        )));
    }
    let mut out = Tensor::zeros(&mask.input_shape);
    let odata = out.data_mut();
    for (&idx, &v) in mask.argmax.iter().zip(input.data()) {
        odata[idx] = v;
    }
    Ok(out)
}

/// Gradient of the unpooling: reads the upstream gradient back off the
/// recorded positions.
pub fn max_unpool2d_backward(mask: &PoolMask, pooled_shape: &[usize], d_out: &Tensor) -> Result<Tensor> {
    if d_out.shape() != mask.input_shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "unpool gradient shape {:?} does not match {:?}",
            d_out.shape(),
            mask.input_shape
        )));
    }
    let data = mask.argmax.iter().map(|&idx| d_out.data()[idx]).collect();
    Tensor::from_vec(pooled_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (pooled, mask) = max_pool2d(&x).unwrap();
        assert_eq!(pooled.data(), &[4.0]);
        assert_eq!(mask.argmax, vec![3]); // position (1, 1)
        let back = max_unpool2d(&pooled, &mask).unwrap();
        assert_eq!(back.data(), &[0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn unpool_preserves_maxima_at_their_coordinates() {
        let x = Tensor::from_vec(
            &[1, 4, 4],
            vec![
                0.0, 9.0, 1.0, 1.0, //
                2.0, 3.0, 1.0, 8.0, //
                5.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 7.0, //
            ],
        )
        .unwrap();
        let (pooled, mask) = max_pool2d(&x).unwrap();
        assert_eq!(pooled.data(), &[9.0, 8.0, 5.0, 7.0]);
        let back = max_unpool2d(&pooled, &mask).unwrap();
        for (k, &v) in x.data().iter().enumerate() {
            let expected = if mask.argmax.contains(&k) { v } else { 0.0 };
            assert_eq!(back.data()[k], expected);
        }
    }

    #[test]
    fn ties_pick_lowest_flat_index() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, mask) = max_pool2d(&x).unwrap();
        assert_eq!(mask.argmax, vec![0]);
    }

    #[test]
    fn repeated_pool_unpool_is_idempotent() {
        let x = Tensor::from_vec(
            &[1, 2, 4],
            vec![1.0, 4.0, 2.0, 2.0, 3.0, 0.0, 0.0, 6.0],
        )
        .unwrap();
        let (pooled, mask) = max_pool2d(&x).unwrap();
        let once = max_unpool2d(&pooled, &mask).unwrap();
        let (pooled2, mask2) = max_pool2d(&once).unwrap();
        let twice = max_unpool2d(&pooled2, &mask2).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn odd_extent_is_rejected() {
        let x = Tensor::zeros(&[1, 3, 4]);
        assert!(max_pool2d(&x).is_err());
    }

    #[test]
    fn pool_backward_routes_to_argmax() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, mask) = max_pool2d(&x).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1], vec![2.5]).unwrap();
        let dx = max_pool2d_backward(&mask, &g).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 2.5]);
    }
}
