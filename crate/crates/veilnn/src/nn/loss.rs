//! Softmax cross-entropy, the only loss the trainers use.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Returns `(loss, dloss/dlogits)` for a single sample. Stabilized with the
/// usual max-shift so large logits cannot overflow `exp`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let n = logits.numel();
    if logits.shape().len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "loss wants a logit vector, got {:?}",
            logits.shape()
        )));
    }
    if label >= n {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {n} classes"
        )));
    }
    let v = logits.data();
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let sum_exp: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    let lse = m + sum_exp.ln();
    let loss = lse - v[label];
    let mut grad: Vec<f64> = v.iter().map(|&x| (x - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, Tensor::from_parts(vec![n], grad)))
}

/// Index of the largest logit; ties break to the lowest index.
pub fn argmax(logits: &Tensor) -> usize {
    let mut best = 0;
    for (i, &v) in logits.data().iter().enumerate() {
        if v > logits.data()[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_n() {
        let t = Tensor::new(vec![4], vec![0.3; 4]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&t, 2).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((grad.data()[2] - (0.25 - 1.0)).abs() < 1e-12);
        assert!((grad.data()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = Tensor::new(vec![3], vec![0.5, -1.2, 2.0]).unwrap();
        let (_, grad) = softmax_cross_entropy(&t, 1).unwrap();
        let eps = 1e-7;
        for i in 0..3 {
            let mut p = t.clone();
            p.data_mut()[i] += eps;
            let mut m = t.clone();
            m.data_mut()[i] -= eps;
            let (lp, _) = softmax_cross_entropy(&p, 1).unwrap();
            let (lm, _) = softmax_cross_entropy(&m, 1).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - grad.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let t = Tensor::new(vec![3], vec![1e3, -1e3, 999.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&t, 0).unwrap();
        assert!(loss.is_finite() && grad.is_finite());
        assert!(loss < 1.0); // class 0 dominates
    }

    #[test]
    fn bad_label_is_an_error() {
        let t = Tensor::zeros(&[3]);
        assert!(softmax_cross_entropy(&t, 3).is_err());
    }
}
