//! Softmax cross-entropy, numerically stabilized by max-subtraction.

use super::NnError;
use crate::tensor::Tensor;

/// Mean cross-entropy over the batch plus the gradient with respect to the
/// logits, `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
) -> Result<(f32, Tensor), NnError> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(NnError::shape("[batch, classes]", format!("{shape:?}")));
    }
    let (batch, classes) = (shape[0], shape[1]);
    if labels.len() != batch {
        return Err(NnError::shape(
            format!("{batch} labels"),
            format!("{} labels", labels.len()),
        ));
    }
    for &label in labels {
        if label >= classes {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
    }

    let x = logits.data();
    let mut grad = Tensor::zeros(vec![batch, classes]);
    let g = grad.data_mut();
    let inv_batch = 1.0 / batch as f32;
    let mut loss_sum = 0.0f64;
    for b in 0..batch {
        let row = &x[b * classes..][..classes];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f32;
        for &v in row {
            denom += (v - max).exp();
        }
        loss_sum += f64::from(denom.ln() - (row[labels[b]] - max));
        let g_row = &mut g[b * classes..][..classes];
        for (gv, &v) in g_row.iter_mut().zip(row) {
            *gv = (v - max).exp() / denom * inv_batch;
        }
        g_row[labels[b]] -= inv_batch;
    }
    Ok(((loss_sum / batch as f64) as f32, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::zeros(vec![3, 5]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 2, 4]).unwrap();
        assert!((loss - (5.0f32).ln()).abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn two_class_uniform_gradient() {
        let logits = Tensor::zeros(vec![1, 2]);
        let (_, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert_eq!(grad.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let logits = Tensor::zeros(vec![1, 3]);
        let err = softmax_cross_entropy(&logits, &[3]).unwrap_err();
        assert!(matches!(
            err,
            NnError::LabelOutOfRange { label: 3, classes: 3 }
        ));
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Tensor::new(vec![1, 3], vec![1000.0, -1000.0, 500.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss.is_finite());
        assert!(grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::new(vec![2, 4], vec![0.3, -1.2, 0.8, 2.0, -0.5, 0.1, 0.0, 1.5]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        for b in 0..2 {
            let s: f32 = grad.data()[b * 4..][..4].iter().sum();
            assert!(s.abs() < 1e-6);
        }
    }
}
