use crate::error::{Error, Result};
use crate::scalar::{gemm_nn, gemm_nt, gemm_tn, Scalar};
use crate::tensor::Tensor4;

/// Fully connected output layer: weights (features × classes), bias (classes).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T = f32> {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        DenseLayer {
            in_features,
            out_features,
            weights: vec![T::ZERO; in_features * out_features],
            bias: vec![T::ZERO; out_features],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

pub struct DenseGrads<T> {
    pub grad_x: Tensor4<T>,
    pub grad_weights: Vec<T>,
    pub grad_bias: Vec<T>,
}

fn check_input<T: Scalar>(x: &Tensor4<T>, layer: &DenseLayer<T>) -> Result<()> {
    let [_, h, w, f] = x.dims();
    if h != 1 || w != 1 || f != layer.in_features {
        return Err(Error::shape(format!(
            "dense: expected input (n, 1, 1, {}), got {:?}",
            layer.in_features,
            x.dims()
        )));
    }
    Ok(())
}

/// logits[n, o] = bias[o] + Σ_f x[n, f]·weights[f, o]
pub fn dense_forward<T: Scalar>(x: &Tensor4<T>, layer: &DenseLayer<T>) -> Result<Tensor4<T>> {
    check_input(x, layer)?;
    let n = x.n();
    let (f, o) = (layer.in_features, layer.out_features);
    let mut y = Tensor4::zeros(n, 1, 1, o);
    gemm_nn(n, f, o, T::ONE, x.data(), &layer.weights, T::ZERO, y.data_mut());
    for row in y.data_mut().chunks_exact_mut(o) {
        for (v, b) in row.iter_mut().zip(&layer.bias) {
            *v += *b;
        }
    }
    Ok(y)
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor4<T>,
    layer: &DenseLayer<T>,
    grad_out: &Tensor4<T>,
) -> Result<DenseGrads<T>> {
    check_input(x, layer)?;
    let n = x.n();
    let (f, o) = (layer.in_features, layer.out_features);
    if grad_out.dims() != [n, 1, 1, o] {
        return Err(Error::shape(format!(
            "dense backward: grad dims {:?} do not match logits {:?}",
            grad_out.dims(),
            [n, 1, 1, o]
        )));
    }

    let mut grad_weights = vec![T::ZERO; f * o];
    gemm_tn(f, n, o, T::ONE, x.data(), grad_out.data(), T::ZERO, &mut grad_weights);

    let mut grad_bias = vec![T::ZERO; o];
    for row in grad_out.data().chunks_exact(o) {
        for (acc, v) in grad_bias.iter_mut().zip(row) {
            *acc += *v;
        }
    }

    let mut grad_x = Tensor4::zeros(n, 1, 1, f);
    gemm_nt(
        n,
        o,
        f,
        T::ONE,
        grad_out.data(),
        &layer.weights,
        T::ZERO,
        grad_x.data_mut(),
    );

    Ok(DenseGrads {
        grad_x,
        grad_weights,
        grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn identity_weight_block_passes_through() {
        let f = 4;
        let mut layer = DenseLayer::<f64>::zeros(f, f);
        for i in 0..f {
            layer.weights[i * f + i] = 1.0;
        }
        let x = random_tensor::<f64>(3, 1, 1, f, 17);
        let y = dense_forward(&x, &layer).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut layer = DenseLayer::<f32>::zeros(3, 2);
        layer.bias = vec![0.25, -0.5];
        let x = Tensor4::<f32>::zeros(2, 1, 1, 3);
        let y = dense_forward(&x, &layer).unwrap();
        for row in y.data().chunks_exact(2) {
            assert_eq!(row, &layer.bias[..]);
        }
    }

    #[test]
    fn rejects_spatial_input() {
        let layer = DenseLayer::<f32>::zeros(4, 2);
        let x = Tensor4::<f32>::zeros(1, 2, 2, 1);
        assert!(dense_forward(&x, &layer).is_err());
    }
}
