//! 3×3 convolutions with "same" zero padding, normal and depthwise-separable.
//!
//! Both forward and backward lower the spatial window onto an im2col matrix
//! and run GEMM. The column layout matches the kernel layout (di, dj, c_in),
//! so the flat weight array is usable as a (9·c_in × c_out) matrix directly.

use crate::error::{Error, Result};
use crate::parallel::run_chunks_mut;
use crate::scalar::{gemm_nn, gemm_nt, gemm_tn, Scalar};
use crate::tensor::Tensor4;
use std::ops::Range;

/// Weights for a normal 3×3 convolution.
///
/// `weights` is shaped (3, 3, c_in, c_out) row-major; `bias` has length
/// `c_out`. The 3×3 spatial extent is fixed: it is the only kernel size in
/// the architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T = f32> {
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        ConvKernel {
            c_in,
            c_out,
            weights: vec![T::ZERO; 9 * c_in * c_out],
            bias: vec![T::ZERO; c_out],
        }
    }

    /// Flat offset of weight (di, dj, ci, o).
    #[inline]
    pub fn weight_offset(&self, di: usize, dj: usize, ci: usize, o: usize) -> usize {
        ((di * 3 + dj) * self.c_in + ci) * self.c_out + o
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Weights for a depthwise-separable 3×3 convolution: a per-channel 3×3
/// depthwise pass followed by a 1×1 pointwise combination with bias.
///
/// `depthwise` is shaped (3, 3, c_in); `pointwise` is (c_in, c_out).
/// Parameter count is 9·c_in + c_in·c_out + c_out.
#[derive(Clone, Debug, PartialEq)]
pub struct SepConvKernel<T = f32> {
    pub c_in: usize,
    pub c_out: usize,
    pub depthwise: Vec<T>,
    pub pointwise: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> SepConvKernel<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        SepConvKernel {
            c_in,
            c_out,
            depthwise: vec![T::ZERO; 9 * c_in],
            pointwise: vec![T::ZERO; c_in * c_out],
            bias: vec![T::ZERO; c_out],
        }
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.len() + self.pointwise.len() + self.bias.len()
    }

    /// The equivalent full 3×3 kernel with rank-1 channel mixing:
    /// w[di,dj,ci,o] = depthwise[di,dj,ci] · pointwise[ci,o].
    pub fn composed(&self) -> ConvKernel<T> {
        let mut k = ConvKernel::zeros(self.c_in, self.c_out);
        for tap in 0..9 {
            for ci in 0..self.c_in {
                let d = self.depthwise[tap * self.c_in + ci];
                for o in 0..self.c_out {
                    k.weights[(tap * self.c_in + ci) * self.c_out + o] =
                        d * self.pointwise[ci * self.c_out + o];
                }
            }
        }
        k.bias.copy_from_slice(&self.bias);
        k
    }
}

pub struct ConvGrads<T> {
    pub grad_x: Tensor4<T>,
    pub grad_weights: Vec<T>,
    pub grad_bias: Vec<T>,
}

pub struct SepConvGrads<T> {
    pub grad_x: Tensor4<T>,
    pub grad_depthwise: Vec<T>,
    pub grad_pointwise: Vec<T>,
    pub grad_bias: Vec<T>,
}

/// Valid j-range such that j + dj - 1 stays inside [0, w).
#[inline]
fn j_bounds(w: usize, dj: usize) -> (usize, usize) {
    let lo = if dj == 0 { 1 } else { 0 };
    let hi = if dj == 2 { w - 1 } else { w };
    (lo, hi.max(lo))
}

/// Unrolls samples `range` of `x` into `col`, a ((range·h·w) × 9·c) matrix.
/// Out-of-bounds taps are left at zero; `col` must arrive zeroed.
fn im2col_chunk<T: Scalar>(x: &Tensor4<T>, range: Range<usize>, col: &mut [T]) {
    let [_, h, w, c] = x.dims();
    let kcols = 9 * c;
    let data = x.data();
    for s in range.clone() {
        for di in 0..3 {
            for dj in 0..3 {
                let tap_col = (di * 3 + dj) * c;
                let (jlo, jhi) = j_bounds(w, dj);
                for i in 0..h {
                    let si = (i + di).wrapping_sub(1);
                    if si >= h {
                        continue;
                    }
                    let mut src = x.offset(s, si, jlo + dj - 1, 0);
                    let mut dst = (((s - range.start) * h + i) * w + jlo) * kcols + tap_col;
                    for _ in jlo..jhi {
                        col[dst..dst + c].copy_from_slice(&data[src..src + c]);
                        src += c;
                        dst += kcols;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_chunk`]: scatter-adds col-space gradients back onto
/// the chunk's input block (`n_chunk` samples of h·w·c scalars).
fn col2im_add_chunk<T: Scalar>(
    dcol: &[T],
    n_chunk: usize,
    h: usize,
    w: usize,
    c: usize,
    gx: &mut [T],
) {
    let kcols = 9 * c;
    for s in 0..n_chunk {
        for di in 0..3 {
            for dj in 0..3 {
                let tap_col = (di * 3 + dj) * c;
                let (jlo, jhi) = j_bounds(w, dj);
                for i in 0..h {
                    let si = (i + di).wrapping_sub(1);
                    if si >= h {
                        continue;
                    }
                    let mut src = ((s * h + i) * w + jlo) * kcols + tap_col;
                    let mut dst = ((s * h + si) * w + (jlo + dj - 1)) * c;
                    for _ in jlo..jhi {
                        for ci in 0..c {
                            gx[dst + ci] += dcol[src + ci];
                        }
                        src += kcols;
                        dst += c;
                    }
                }
            }
        }
    }
}

/// Normal 3×3 convolution, spatial size preserved by 1-pixel zero padding.
pub fn conv2d_forward<T: Scalar>(x: &Tensor4<T>, k: &ConvKernel<T>) -> Result<Tensor4<T>> {
    if x.c() != k.c_in {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels, kernel expects {}",
            x.c(),
            k.c_in
        )));
    }
    let [n, h, w, _] = x.dims();
    let co = k.c_out;
    let mut y = Tensor4::zeros(n, h, w, co);
    let kcols = 9 * k.c_in;
    run_chunks_mut(y.data_mut(), n, h * w * co, |range, out| {
        let m = range.len() * h * w;
        let mut col = vec![T::ZERO; m * kcols];
        im2col_chunk(x, range, &mut col);
        gemm_nn(m, kcols, co, T::ONE, &col, &k.weights, T::ZERO, out);
        for row in out.chunks_exact_mut(co) {
            for (v, b) in row.iter_mut().zip(&k.bias) {
                *v += *b;
            }
        }
    });
    Ok(y)
}

/// Gradients of Σ(grad_out ⊙ conv2d_forward(x, k)) w.r.t. x, weights, bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    k: &ConvKernel<T>,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    if x.c() != k.c_in {
        return Err(Error::shape(format!(
            "conv2d backward: input has {} channels, kernel expects {}",
            x.c(),
            k.c_in
        )));
    }
    let [n, h, w, c] = x.dims();
    let co = k.c_out;
    if grad_out.dims() != [n, h, w, co] {
        return Err(Error::shape(format!(
            "conv2d backward: grad_out dims {:?} do not match output dims {:?}",
            grad_out.dims(),
            [n, h, w, co]
        )));
    }
    let kcols = 9 * c;
    let mut grad_x = Tensor4::zeros(n, h, w, c);
    let partials = run_chunks_mut(grad_x.data_mut(), n, h * w * c, |range, gx| {
        let m = range.len() * h * w;
        let g = grad_out.sample_range(range.start, range.end);
        let mut col = vec![T::ZERO; m * kcols];
        im2col_chunk(x, range.clone(), &mut col);

        let mut dw = vec![T::ZERO; kcols * co];
        gemm_tn(kcols, m, co, T::ONE, &col, g, T::ZERO, &mut dw);

        let mut db = vec![T::ZERO; co];
        for row in g.chunks_exact(co) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += *v;
            }
        }

        let mut dcol = col; // reuse the buffer
        gemm_nt(m, co, kcols, T::ONE, g, &k.weights, T::ZERO, &mut dcol);
        col2im_add_chunk(&dcol, range.len(), h, w, c, gx);
        (dw, db)
    });

    let mut grad_weights = vec![T::ZERO; kcols * co];
    let mut grad_bias = vec![T::ZERO; co];
    for (dw, db) in partials {
        for (acc, v) in grad_weights.iter_mut().zip(&dw) {
            *acc += *v;
        }
        for (acc, v) in grad_bias.iter_mut().zip(&db) {
            *acc += *v;
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_weights,
        grad_bias,
    })
}

/// Depthwise 3×3 pass into `mid` for samples `range` of `x`.
/// `mid_block` covers the same samples, laid out (n_chunk, h, w, c).
fn depthwise_chunk<T: Scalar>(x: &Tensor4<T>, dw: &[T], range: Range<usize>, mid_block: &mut [T]) {
    let [_, h, w, c] = x.dims();
    let data = x.data();
    for s in range.clone() {
        for di in 0..3 {
            for dj in 0..3 {
                let wt = &dw[(di * 3 + dj) * c..(di * 3 + dj + 1) * c];
                let (jlo, jhi) = j_bounds(w, dj);
                for i in 0..h {
                    let si = (i + di).wrapping_sub(1);
                    if si >= h {
                        continue;
                    }
                    let mut src = x.offset(s, si, jlo + dj - 1, 0);
                    let mut dst = (((s - range.start) * h + i) * w + jlo) * c;
                    for _ in jlo..jhi {
                        for ci in 0..c {
                            mid_block[dst + ci] += data[src + ci] * wt[ci];
                        }
                        src += c;
                        dst += c;
                    }
                }
            }
        }
    }
}

/// Separable convolution forward, also returning the depthwise intermediate
/// needed by the backward pass.
pub fn sepconv2d_forward_with_mid<T: Scalar>(
    x: &Tensor4<T>,
    k: &SepConvKernel<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    if x.c() != k.c_in {
        return Err(Error::shape(format!(
            "sepconv2d: input has {} channels, kernel expects {}",
            x.c(),
            k.c_in
        )));
    }
    let [n, h, w, c] = x.dims();
    let co = k.c_out;
    let mut mid = Tensor4::zeros(n, h, w, c);
    run_chunks_mut(mid.data_mut(), n, h * w * c, |range, block| {
        depthwise_chunk(x, &k.depthwise, range, block);
    });
    let mut y = Tensor4::zeros(n, h, w, co);
    run_chunks_mut(y.data_mut(), n, h * w * co, |range, out| {
        let m = range.len() * h * w;
        let mid_block = mid.sample_range(range.start, range.end);
        gemm_nn(m, c, co, T::ONE, mid_block, &k.pointwise, T::ZERO, out);
        for row in out.chunks_exact_mut(co) {
            for (v, b) in row.iter_mut().zip(&k.bias) {
                *v += *b;
            }
        }
    });
    Ok((y, mid))
}

pub fn sepconv2d_forward<T: Scalar>(x: &Tensor4<T>, k: &SepConvKernel<T>) -> Result<Tensor4<T>> {
    sepconv2d_forward_with_mid(x, k).map(|(y, _)| y)
}

/// Backward for the separable convolution. `mid` is the depthwise
/// intermediate returned by [`sepconv2d_forward_with_mid`].
pub fn sepconv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    mid: &Tensor4<T>,
    k: &SepConvKernel<T>,
    grad_out: &Tensor4<T>,
) -> Result<SepConvGrads<T>> {
    let [n, h, w, c] = x.dims();
    let co = k.c_out;
    if x.c() != k.c_in {
        return Err(Error::shape(format!(
            "sepconv2d backward: input has {} channels, kernel expects {}",
            x.c(),
            k.c_in
        )));
    }
    if grad_out.dims() != [n, h, w, co] || mid.dims() != [n, h, w, c] {
        return Err(Error::shape(format!(
            "sepconv2d backward: grad_out {:?} / mid {:?} inconsistent with input {:?}",
            grad_out.dims(),
            mid.dims(),
            x.dims()
        )));
    }

    let mut grad_x = Tensor4::zeros(n, h, w, c);
    let partials = run_chunks_mut(grad_x.data_mut(), n, h * w * c, |range, gx| {
        let m = range.len() * h * w;
        let g = grad_out.sample_range(range.start, range.end);
        let mid_block = mid.sample_range(range.start, range.end);

        let mut dpw = vec![T::ZERO; c * co];
        gemm_tn(c, m, co, T::ONE, mid_block, g, T::ZERO, &mut dpw);

        let mut db = vec![T::ZERO; co];
        for row in g.chunks_exact(co) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += *v;
            }
        }

        // Gradient w.r.t. the depthwise intermediate.
        let mut gmid = vec![T::ZERO; m * c];
        gemm_nt(m, co, c, T::ONE, g, &k.pointwise, T::ZERO, &mut gmid);

        // Depthwise weight gradient and input gradient share the tap loop.
        let mut ddw = vec![T::ZERO; 9 * c];
        let data = x.data();
        for s in range.clone() {
            let s0 = s - range.start;
            for di in 0..3 {
                for dj in 0..3 {
                    let tap = di * 3 + dj;
                    let (jlo, jhi) = j_bounds(w, dj);
                    for i in 0..h {
                        let si = (i + di).wrapping_sub(1);
                        if si >= h {
                            continue;
                        }
                        let mut src = x.offset(s, si, jlo + dj - 1, 0);
                        let mut gsrc = ((s0 * h + i) * w + jlo) * c;
                        let mut gdst = ((s0 * h + si) * w + (jlo + dj - 1)) * c;
                        for _ in jlo..jhi {
                            for ci in 0..c {
                                let gm = gmid[gsrc + ci];
                                ddw[tap * c + ci] += data[src + ci] * gm;
                                gx[gdst + ci] += k.depthwise[tap * c + ci] * gm;
                            }
                            src += c;
                            gsrc += c;
                            gdst += c;
                        }
                    }
                }
            }
        }
        (ddw, dpw, db)
    });

    let mut grad_depthwise = vec![T::ZERO; 9 * c];
    let mut grad_pointwise = vec![T::ZERO; c * co];
    let mut grad_bias = vec![T::ZERO; co];
    for (ddw, dpw, db) in partials {
        for (acc, v) in grad_depthwise.iter_mut().zip(&ddw) {
            *acc += *v;
        }
        for (acc, v) in grad_pointwise.iter_mut().zip(&dpw) {
            *acc += *v;
        }
        for (acc, v) in grad_bias.iter_mut().zip(&db) {
            *acc += *v;
        }
    }
    Ok(SepConvGrads {
        grad_x,
        grad_depthwise,
        grad_pointwise,
        grad_bias,
    })
}
