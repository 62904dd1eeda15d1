//! Per-channel batch normalization over the (batch, height, width) axes.
//!
//! Train mode normalizes with batch statistics (biased variance) and returns
//! a state carrying refreshed moving averages instead of mutating in place;
//! infer mode normalizes with the stored moving statistics only.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Learnable scale/shift plus moving statistics for one channel axis.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub moving_mean: Vec<T>,
    pub moving_var: Vec<T>,
    pub epsilon: T,
    pub momentum: T,
}

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

impl<T: Scalar> BatchNormState<T> {
    /// Fresh state: gamma 1, beta 0, moving mean 0, moving variance 1.
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![T::ONE; channels],
            beta: vec![T::ZERO; channels],
            moving_mean: vec![T::ZERO; channels],
            moving_var: vec![T::ONE; channels],
            epsilon: T::from_f64(DEFAULT_EPSILON),
            momentum: T::from_f64(DEFAULT_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// 2·c trainable (gamma, beta) + 2·c moving.
    pub fn param_count(&self) -> usize {
        4 * self.channels()
    }
}

/// Normalized activations cached for the backward pass.
pub struct BnCache<T> {
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
}

fn check_channels<T: Scalar>(x: &Tensor4<T>, s: &BatchNormState<T>) -> Result<()> {
    if x.c() != s.channels() {
        return Err(Error::shape(format!(
            "batchnorm: input has {} channels, state has {}",
            x.c(),
            s.channels()
        )));
    }
    Ok(())
}

/// Train-mode forward. Returns the output, the backward cache, and a state
/// whose moving statistics have been advanced one step.
pub fn batchnorm_forward_train<T: Scalar>(
    x: &Tensor4<T>,
    s: &BatchNormState<T>,
) -> Result<(Tensor4<T>, BnCache<T>, BatchNormState<T>)> {
    check_channels(x, s)?;
    let [n, h, w, c] = x.dims();
    let m = n * h * w;
    if m < 2 {
        return Err(Error::shape(format!(
            "batchnorm train mode needs at least 2 values per channel, got {m}"
        )));
    }

    // Statistics accumulate in f64 so large batches keep full precision.
    let mut mean = vec![0.0f64; c];
    for px in x.data().chunks_exact(c) {
        for (acc, v) in mean.iter_mut().zip(px) {
            *acc += v.to_f64();
        }
    }
    for v in mean.iter_mut() {
        *v /= m as f64;
    }
    let mut var = vec![0.0f64; c];
    for px in x.data().chunks_exact(c) {
        for ((acc, v), mu) in var.iter_mut().zip(px).zip(&mean) {
            let d = v.to_f64() - mu;
            *acc += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= m as f64;
    }

    let mean_t: Vec<T> = mean.iter().map(|&v| T::from_f64(v)).collect();
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::ONE / (T::from_f64(v) + s.epsilon).sqrt())
        .collect();

    let mut xhat = Tensor4::zeros(n, h, w, c);
    {
        let xd = x.data();
        let xh = xhat.data_mut();
        for (px, ph) in xd.chunks_exact(c).zip(xh.chunks_exact_mut(c)) {
            for ci in 0..c {
                ph[ci] = (px[ci] - mean_t[ci]) * inv_std[ci];
            }
        }
    }
    let mut y = Tensor4::zeros(n, h, w, c);
    {
        let xh = xhat.data();
        let yd = y.data_mut();
        for (ph, py) in xh.chunks_exact(c).zip(yd.chunks_exact_mut(c)) {
            for ci in 0..c {
                py[ci] = s.gamma[ci] * ph[ci] + s.beta[ci];
            }
        }
    }

    let mut next = s.clone();
    let keep = s.momentum;
    let blend = T::ONE - keep;
    for ci in 0..c {
        next.moving_mean[ci] = keep * s.moving_mean[ci] + blend * mean_t[ci];
        next.moving_var[ci] = keep * s.moving_var[ci] + blend * T::from_f64(var[ci]);
    }

    Ok((y, BnCache { xhat, inv_std }, next))
}

/// Infer-mode forward: normalize with moving statistics, no state change.
pub fn batchnorm_forward_infer<T: Scalar>(
    x: &Tensor4<T>,
    s: &BatchNormState<T>,
) -> Result<Tensor4<T>> {
    check_channels(x, s)?;
    let [n, h, w, c] = x.dims();
    let scale: Vec<T> = (0..c)
        .map(|ci| s.gamma[ci] / (s.moving_var[ci] + s.epsilon).sqrt())
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ci| s.beta[ci] - scale[ci] * s.moving_mean[ci])
        .collect();
    let mut y = Tensor4::zeros(n, h, w, c);
    let xd = x.data();
    let yd = y.data_mut();
    for (px, py) in xd.chunks_exact(c).zip(yd.chunks_exact_mut(c)) {
        for ci in 0..c {
            py[ci] = scale[ci] * px[ci] + shift[ci];
        }
    }
    Ok(y)
}

/// Gradients through the train-mode normalization (batch statistics are
/// functions of x, so their contribution is included).
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    s: &BatchNormState<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let c = s.channels();
    if grad_out.dims() != cache.xhat.dims() {
        return Err(Error::shape(format!(
            "batchnorm backward: grad_out dims {:?} do not match cached dims {:?}",
            grad_out.dims(),
            cache.xhat.dims()
        )));
    }
    let [n, h, w, _] = grad_out.dims();
    let m = n * h * w;

    let mut sum_g = vec![0.0f64; c];
    let mut sum_gx = vec![0.0f64; c];
    for (pg, ph) in grad_out
        .data()
        .chunks_exact(c)
        .zip(cache.xhat.data().chunks_exact(c))
    {
        for ci in 0..c {
            sum_g[ci] += pg[ci].to_f64();
            sum_gx[ci] += pg[ci].to_f64() * ph[ci].to_f64();
        }
    }

    let grad_gamma: Vec<T> = sum_gx.iter().map(|&v| T::from_f64(v)).collect();
    let grad_beta: Vec<T> = sum_g.iter().map(|&v| T::from_f64(v)).collect();

    let mean_g: Vec<T> = sum_g.iter().map(|&v| T::from_f64(v / m as f64)).collect();
    let mean_gx: Vec<T> = sum_gx.iter().map(|&v| T::from_f64(v / m as f64)).collect();

    let mut gx = Tensor4::zeros(n, h, w, c);
    {
        let gd = gx.data_mut();
        for ((pg, ph), pout) in grad_out
            .data()
            .chunks_exact(c)
            .zip(cache.xhat.data().chunks_exact(c))
            .zip(gd.chunks_exact_mut(c))
        {
            for ci in 0..c {
                pout[ci] = s.gamma[ci]
                    * cache.inv_std[ci]
                    * (pg[ci] - mean_g[ci] - ph[ci] * mean_gx[ci]);
            }
        }
    }
    Ok((gx, grad_gamma, grad_beta))
}
