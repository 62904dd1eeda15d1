//! Max pooling over 4×4 neighborhoods with stride 2 and "same" padding.
//!
//! Output spatial size is ceil(in/2), so each macro-layer halves resolution
//! (28 → 14 → 7 → 4). Padding cells never win the max: they are treated as
//! −∞ and simply excluded from the window scan.

use crate::error::{Error, Result};
use crate::parallel::run_chunks_mut;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

const WINDOW: usize = 4;
const STRIDE: usize = 2;

/// Output length of one spatial axis.
#[inline]
pub fn pool_out_dim(input: usize) -> usize {
    input.div_ceil(STRIDE)
}

/// Leading padding for one axis: total = max((out−1)·2 + 4 − in, 0),
/// split as floor(total/2) before, remainder after.
#[inline]
pub fn pool_pad_before(input: usize) -> usize {
    let out = pool_out_dim(input);
    let total = ((out - 1) * STRIDE + WINDOW).saturating_sub(input);
    total / 2
}

/// Per-output-cell flat input offsets of the first maximal element seen in
/// row-major window scan order. Keyed to the shapes it was built from so a
/// stale map cannot be replayed against a mismatched gradient.
#[derive(Clone, Debug)]
pub struct ArgmaxMap {
    pub out_dims: [usize; 4],
    pub in_dims: [usize; 4],
    idx: Vec<u32>,
}

impl ArgmaxMap {
    pub fn indices(&self) -> &[u32] {
        &self.idx
    }
}

pub fn maxpool4x4s2_forward<T: Scalar>(x: &Tensor4<T>) -> (Tensor4<T>, ArgmaxMap) {
    let [n, h, w, c] = x.dims();
    let (oh, ow) = (pool_out_dim(h), pool_out_dim(w));
    let (ph, pw) = (pool_pad_before(h), pool_pad_before(w));
    let mut idx = vec![0u32; n * oh * ow * c];
    let per_out = oh * ow * c;

    run_chunks_mut(&mut idx, n, per_out, |range, idx_block| {
        let mut best = vec![T::neg_infinity(); c];
        let mut best_at = vec![0u32; c];
        for s in range.clone() {
            for oy in 0..oh {
                let i0 = (oy * STRIDE).wrapping_sub(ph);
                for ox in 0..ow {
                    let j0 = (ox * STRIDE).wrapping_sub(pw);
                    for b in best.iter_mut() {
                        *b = T::neg_infinity();
                    }
                    for di in 0..WINDOW {
                        let i = i0.wrapping_add(di);
                        if i >= h {
                            continue;
                        }
                        for dj in 0..WINDOW {
                            let j = j0.wrapping_add(dj);
                            if j >= w {
                                continue;
                            }
                            let base = x.offset(s, i, j, 0);
                            for ci in 0..c {
                                let v = x.data()[base + ci];
                                if v > best[ci] {
                                    best[ci] = v;
                                    best_at[ci] = (base + ci) as u32;
                                }
                            }
                        }
                    }
                    let out = ((s - range.start) * oh * ow + oy * ow + ox) * c;
                    idx_block[out..out + c].copy_from_slice(&best_at);
                }
            }
        }
    });

    // Gather pooled values from the recorded coordinates.
    let mut y = Tensor4::zeros(n, oh, ow, c);
    for (out, &src) in y.data_mut().iter_mut().zip(idx.iter()) {
        *out = x.data()[src as usize];
    }

    let map = ArgmaxMap {
        out_dims: [n, oh, ow, c],
        in_dims: [n, h, w, c],
        idx,
    };
    (y, map)
}

/// Scatter-adds each upstream gradient cell onto its recorded argmax input
/// coordinate. Overlapping windows accumulate.
pub fn maxpool4x4s2_backward<T: Scalar>(
    argmax: &ArgmaxMap,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    if grad_out.dims() != argmax.out_dims {
        return Err(Error::shape(format!(
            "maxpool backward: grad_out dims {:?} do not match argmax output dims {:?}",
            grad_out.dims(),
            argmax.out_dims
        )));
    }
    let [n, h, w, c] = argmax.in_dims;
    let mut gx = Tensor4::zeros(n, h, w, c);
    let per_in = h * w * c;
    let per_out = argmax.out_dims[1] * argmax.out_dims[2] * argmax.out_dims[3];
    run_chunks_mut(gx.data_mut(), n, per_in, |range, block| {
        let base_in = range.start * per_in;
        let lo = range.start * per_out;
        let hi = range.end * per_out;
        for (o, &src) in (lo..hi).zip(&argmax.idx[lo..hi]) {
            block[src as usize - base_in] += grad_out.data()[o];
        }
    });
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn output_dims_follow_ceil_halving() {
        for (input, want) in [(1, 1), (2, 1), (3, 2), (7, 4), (14, 7), (28, 14)] {
            assert_eq!(pool_out_dim(input), want);
        }
        // The MNIST chain.
        assert_eq!(pool_out_dim(28), 14);
        assert_eq!(pool_out_dim(14), 7);
        assert_eq!(pool_out_dim(7), 4);
    }

    #[test]
    fn pad_split_puts_floor_half_before() {
        // 28 -> 14: total pad 2, split 1/1. 7 -> 4: total pad 3, split 1/2.
        assert_eq!(pool_pad_before(28), 1);
        assert_eq!(pool_pad_before(7), 1);
        assert_eq!(pool_pad_before(1), 1); // total = 3
    }

    #[test]
    fn constant_field_pools_to_constant() {
        let mut x = Tensor4::<f32>::zeros(1, 6, 6, 2);
        for v in x.data_mut() {
            *v = 3.25;
        }
        let (y, _) = maxpool4x4s2_forward(&x);
        assert_eq!(y.dims(), [1, 3, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn argmax_records_first_max_in_scan_order() {
        // Two equal maxima in one window: the earlier row-major cell wins.
        let mut x = Tensor4::<f32>::zeros(1, 4, 4, 1);
        x.set(0, 0, 1, 0, 9.0);
        x.set(0, 2, 2, 0, 9.0);
        let (_, map) = maxpool4x4s2_forward(&x);
        // Output cell (0,0): window covers rows -1..3 (pad 1), cols -1..3.
        assert_eq!(map.indices()[0], x.offset(0, 0, 1, 0) as u32);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let x = random_tensor::<f32>(2, 5, 5, 3, 9);
        let (y, map) = maxpool4x4s2_forward(&x);
        let g = Tensor4::<f32>::zeros(y.dims()[0], y.dims()[1], y.dims()[2], y.dims()[3]);
        let gx = maxpool4x4s2_backward(&map, &g).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unique_max_receives_full_gradient() {
        // 2x2 input (single window after padding): one strict max.
        let mut x = Tensor4::<f32>::zeros(1, 2, 2, 1);
        x.set(0, 1, 0, 0, 5.0);
        let (y, map) = maxpool4x4s2_forward(&x);
        assert_eq!(y.dims(), [1, 1, 1, 1]);
        assert_eq!(y.data()[0], 5.0);
        let g = Tensor4::from_vec([1, 1, 1, 1], vec![2.5f32]).unwrap();
        let gx = maxpool4x4s2_backward(&map, &g).unwrap();
        assert_eq!(gx.at(0, 1, 0, 0), 2.5);
        assert_eq!(gx.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn stale_argmax_shape_rejected() {
        let x = random_tensor::<f32>(1, 6, 6, 1, 1);
        let (_, map) = maxpool4x4s2_forward(&x);
        let g = Tensor4::<f32>::zeros(1, 2, 2, 1);
        assert!(matches!(
            maxpool4x4s2_backward(&map, &g),
            Err(Error::Shape(_))
        ));
    }
}
