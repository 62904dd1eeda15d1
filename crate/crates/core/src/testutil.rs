//! Unit-test helpers: deterministic random fixtures and small independent
//! oracles. Oracles here use plain nested loops with none of the im2col/GEMM
//! machinery from the implementation modules.

use crate::scalar::Scalar;
use crate::tensor::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vec<T: Scalar>(len: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| T::from_f64(rng.gen_range(-1.0..1.0))).collect()
}

pub fn random_tensor<T: Scalar>(n: usize, h: usize, w: usize, c: usize, seed: u64) -> Tensor4<T> {
    Tensor4::from_vec([n, h, w, c], random_vec(n * h * w * c, seed)).unwrap()
}

/// Direct six-nested-loop 3×3 same-padded convolution.
pub fn naive_conv2d<T: Scalar>(
    x: &Tensor4<T>,
    weights: &[T],
    bias: &[T],
    c_in: usize,
    c_out: usize,
) -> Tensor4<T> {
    let [n, h, w, _] = x.dims();
    let mut y = Tensor4::zeros(n, h, w, c_out);
    for s in 0..n {
        for i in 0..h {
            for j in 0..w {
                for o in 0..c_out {
                    let mut acc = bias[o];
                    for di in 0..3usize {
                        for dj in 0..3usize {
                            let si = (i + di).wrapping_sub(1);
                            let sj = (j + dj).wrapping_sub(1);
                            if si >= h || sj >= w {
                                continue;
                            }
                            for ci in 0..c_in {
                                let wv = weights[((di * 3 + dj) * c_in + ci) * c_out + o];
                                acc += x.at(s, si, sj, ci) * wv;
                            }
                        }
                    }
                    y.set(s, i, j, o, acc);
                }
            }
        }
    }
    y
}

/// Central finite difference of a scalar function at one coordinate of a
/// parameter buffer.
pub fn central_diff<F>(buf: &mut [f64], idx: usize, step: f64, mut eval: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = buf[idx];
    buf[idx] = orig + step;
    let plus = eval(buf);
    buf[idx] = orig - step;
    let minus = eval(buf);
    buf[idx] = orig;
    (plus - minus) / (2.0 * step)
}

/// Relative error with an absolute floor of 1 in the denominator, so values
/// near zero are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}
