use crate::error::{Error, Result};

/// Softmax cross-entropy `-log softmax(logits)[label]` and its gradient with
/// respect to the logits (`softmax - onehot`).
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::Input("softmax over empty logits".into()));
    }
    if label >= logits.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let (loss, grad) = softmax_xent(&[0.0, 0.0], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad, vec![-0.5, 0.5]);
    }

    #[test]
    fn saturated_logits_give_zero_loss() {
        let (loss, _) = softmax_xent(&[100.0, 0.0], 0).unwrap();
        assert!(loss >= 0.0 && loss < 1e-10);
    }

    #[test]
    fn empty_logits_rejected() {
        assert!(softmax_xent(&[], 0).is_err());
        assert!(softmax_xent(&[1.0], 1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.5, 0.0, 0.7];
        for label in 0..logits.len() {
            let (_, grad) = softmax_xent(&logits, label).unwrap();
            let f = |z: &[f64]| softmax_xent(z, label).unwrap().0;
            let report = grad_check(f, &logits, &grad, 1e-5).unwrap();
            assert!(report.max_abs_err < 1e-6, "{}", report.max_abs_err);
        }
    }

    #[test]
    fn loss_is_non_negative_for_extreme_logits() {
        for logits in [[1e3, -1e3, 0.0], [-50.0, -50.0, -50.0], [0.0, 700.0, 1.0]] {
            for label in 0..3 {
                assert!(softmax_xent(&logits, label).unwrap().0 >= 0.0);
            }
        }
    }
}
