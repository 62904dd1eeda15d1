//! Head flattening: either collapse (h, w, c) into one feature axis or
//! average each channel over the spatial grid.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// (n, h, w, c) → (n, 1, 1, h·w·c). NHWC row-major order makes this a pure
/// relabeling of the same buffer.
pub fn flatten_forward<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, h, w, c] = x.dims();
    x.clone().reshaped([n, 1, 1, h * w * c]).expect("same length")
}

pub fn flatten_backward<T: Scalar>(
    in_dims: [usize; 4],
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let flat = in_dims[1] * in_dims[2] * in_dims[3];
    if grad_out.dims() != [in_dims[0], 1, 1, flat] {
        return Err(Error::shape(format!(
            "flatten backward: grad dims {:?} do not match flattened {:?}",
            grad_out.dims(),
            [in_dims[0], 1, 1, flat]
        )));
    }
    grad_out.clone().reshaped(in_dims)
}

/// (n, h, w, c) → (n, 1, 1, c): per-channel spatial mean.
pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, h, w, c] = x.dims();
    let area = T::from_usize(h * w);
    let mut y = Tensor4::zeros(n, 1, 1, c);
    for s in 0..n {
        let block = x.sample_range(s, s + 1);
        let out = &mut y.data_mut()[s * c..(s + 1) * c];
        for px in block.chunks_exact(c) {
            for (acc, v) in out.iter_mut().zip(px) {
                *acc += *v;
            }
        }
        for v in out.iter_mut() {
            *v /= area;
        }
    }
    y
}

/// Spreads each channel gradient uniformly over the spatial grid, scaled by
/// 1/(h·w).
pub fn global_avg_pool_backward<T: Scalar>(
    in_dims: [usize; 4],
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let [n, h, w, c] = in_dims;
    if grad_out.dims() != [n, 1, 1, c] {
        return Err(Error::shape(format!(
            "gap backward: grad dims {:?} do not match pooled {:?}",
            grad_out.dims(),
            [n, 1, 1, c]
        )));
    }
    let inv_area = T::ONE / T::from_usize(h * w);
    let mut gx = Tensor4::zeros(n, h, w, c);
    for s in 0..n {
        let g = &grad_out.data()[s * c..(s + 1) * c];
        let per = gx.sample_len();
        let block = &mut gx.data_mut()[s * per..(s + 1) * per];
        for px in block.chunks_exact_mut(c) {
            for (out, v) in px.iter_mut().zip(g) {
                *out = *v * inv_area;
            }
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn constant_input_gap_returns_constant() {
        let mut x = Tensor4::<f32>::zeros(2, 3, 5, 2);
        for v in x.data_mut() {
            *v = 1.5;
        }
        let y = global_avg_pool_forward(&x);
        assert_eq!(y.dims(), [2, 1, 1, 2]);
        for &v in y.data() {
            assert!((v - 1.5).abs() < 1e-6);
        }
    }

    #[test]
    fn flatten_round_trips() {
        let x = random_tensor::<f64>(2, 3, 4, 5, 12);
        let y = flatten_forward(&x);
        assert_eq!(y.dims(), [2, 1, 1, 60]);
        let back = flatten_backward(x.dims(), &y).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn gap_backward_spreads_uniformly() {
        let g = Tensor4::from_vec([1, 1, 1, 2], vec![6.0f64, 12.0]).unwrap();
        let gx = global_avg_pool_backward([1, 2, 3, 2], &g).unwrap();
        for px in gx.data().chunks_exact(2) {
            assert_eq!(px, &[1.0, 2.0]);
        }
    }
}
