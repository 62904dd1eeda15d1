use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Elementwise max(0, x).
pub fn relu_forward<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
    y
}

/// Passes gradient where x > 0; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if x.dims() != grad_out.dims() {
        return Err(Error::shape(format!(
            "relu backward: x dims {:?} vs grad dims {:?}",
            x.dims(),
            grad_out.dims()
        )));
    }
    let mut gx = grad_out.clone();
    for (g, v) in gx.data_mut().iter_mut().zip(x.data()) {
        if !(*v > T::ZERO) {
            *g = T::ZERO;
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    #[test]
    fn negative_input_becomes_zero() {
        let mut x = Tensor4::<f32>::zeros(1, 2, 2, 1);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = -(i as f32 + 1.0);
        }
        let y = relu_forward(&x);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_negative_input_unchanged() {
        let mut x = random_tensor::<f64>(1, 3, 3, 2, 10);
        for v in x.data_mut() {
            *v = v.abs();
        }
        let y = relu_forward(&x);
        assert_eq!(y, x);
    }

    #[test]
    fn gradient_blocked_at_and_below_zero() {
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        let g = Tensor4::from_vec([1, 1, 1, 3], vec![5.0f64, 5.0, 5.0]).unwrap();
        let gx = relu_backward(&x, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 5.0]);
    }
}
