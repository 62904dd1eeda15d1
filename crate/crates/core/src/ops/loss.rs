//! Softmax + categorical cross-entropy head.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub struct SoftmaxXent<T> {
    /// Mean cross-entropy over the batch.
    pub loss: T,
    /// Softmax probabilities, same dims as the logits.
    pub probs: Tensor4<T>,
    /// (probs − one_hot) / n — gradient of the mean loss w.r.t. the logits.
    pub grad_logits: Tensor4<T>,
}

/// `logits` is (n, 1, 1, classes); `one_hot` is n×classes row-major with
/// exactly one 1 per row.
pub fn softmax_xent<T: Scalar>(logits: &Tensor4<T>, one_hot: &[T]) -> Result<SoftmaxXent<T>> {
    let [n, h, w, classes] = logits.dims();
    if h != 1 || w != 1 {
        return Err(Error::shape(format!(
            "softmax: expected logits (n, 1, 1, classes), got {:?}",
            logits.dims()
        )));
    }
    if one_hot.len() != n * classes {
        return Err(Error::shape(format!(
            "softmax: one-hot length {} does not match {}×{}",
            one_hot.len(),
            n,
            classes
        )));
    }
    for (row_idx, row) in one_hot.chunks_exact(classes).enumerate() {
        let mut ones = 0usize;
        for &v in row {
            if v == T::ONE {
                ones += 1;
            } else if v != T::ZERO {
                return Err(Error::shape(format!(
                    "softmax: labels row {row_idx} is not one-hot (entry {v})"
                )));
            }
        }
        if ones != 1 {
            return Err(Error::shape(format!(
                "softmax: labels row {row_idx} has {ones} ones, expected exactly 1"
            )));
        }
    }

    let mut probs = Tensor4::zeros(n, 1, 1, classes);
    let mut grad = Tensor4::zeros(n, 1, 1, classes);
    let mut loss_acc = 0.0f64;
    let inv_n = T::ONE / T::from_usize(n);

    for s in 0..n {
        let row = &logits.data()[s * classes..(s + 1) * classes];
        let y_row = &one_hot[s * classes..(s + 1) * classes];
        let mut max = row[0];
        for &v in &row[1..] {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::ZERO;
        let p_row = &mut probs.data_mut()[s * classes..(s + 1) * classes];
        for (p, &v) in p_row.iter_mut().zip(row) {
            *p = (v - max).exp();
            sum += *p;
        }
        for p in p_row.iter_mut() {
            *p /= sum;
        }
        for (ci, &y) in y_row.iter().enumerate() {
            if y == T::ONE {
                loss_acc -= p_row[ci].to_f64().ln();
            }
        }
        let g_row = &mut grad.data_mut()[s * classes..(s + 1) * classes];
        for ci in 0..classes {
            g_row[ci] = (p_row[ci] - y_row[ci]) * inv_n;
        }
    }

    Ok(SoftmaxXent {
        loss: T::from_f64(loss_acc / n as f64),
        probs,
        grad_logits: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c_loss() {
        let classes = 7;
        let logits = Tensor4::<f64>::zeros(3, 1, 1, classes);
        let mut one_hot = vec![0.0f64; 3 * classes];
        one_hot[2] = 1.0;
        one_hot[classes + 4] = 1.0;
        one_hot[2 * classes] = 1.0;
        let out = softmax_xent(&logits, &one_hot).unwrap();
        assert!((out.loss - (classes as f64).ln()).abs() < 1e-12);
        for &p in out.probs.data() {
            assert!((p - 1.0 / classes as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_correct_logit_gives_near_zero_loss() {
        let mut logits = Tensor4::<f64>::zeros(1, 1, 1, 4);
        logits.data_mut()[1] = 50.0;
        let one_hot = vec![0.0, 1.0, 0.0, 0.0];
        let out = softmax_xent(&logits, &one_hot).unwrap();
        assert!(out.loss.abs() < 1e-12);
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let logits =
            Tensor4::from_vec([2, 1, 1, 3], vec![1.0f32, -2.0, 0.5, 10.0, 10.0, 10.0]).unwrap();
        let one_hot = vec![1.0f32, 0.0, 0.0, 0.0, 0.0, 1.0];
        let out = softmax_xent(&logits, &one_hot).unwrap();
        for row in out.probs.data().chunks_exact(3) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6);
        }
        assert!(out.loss >= 0.0);
    }

    #[test]
    fn non_one_hot_labels_rejected() {
        let logits = Tensor4::<f32>::zeros(1, 1, 1, 3);
        assert!(softmax_xent(&logits, &[0.5f32, 0.5, 0.0]).is_err());
        assert!(softmax_xent(&logits, &[1.0f32, 1.0, 0.0]).is_err());
        assert!(softmax_xent(&logits, &[0.0f32, 0.0, 0.0]).is_err());
    }

    #[test]
    fn gradient_is_probs_minus_labels_over_n() {
        let logits = Tensor4::from_vec([2, 1, 1, 2], vec![0.3f64, -0.7, 1.0, 2.0]).unwrap();
        let one_hot = vec![1.0f64, 0.0, 0.0, 1.0];
        let out = softmax_xent(&logits, &one_hot).unwrap();
        for i in 0..4 {
            let want = (out.probs.data()[i] - one_hot[i]) / 2.0;
            assert!((out.grad_logits.data()[i] - want).abs() < 1e-15);
        }
    }
}
