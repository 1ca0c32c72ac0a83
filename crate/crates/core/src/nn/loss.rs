use super::Tensor;
use crate::error::{Error, Result};

/// Negative log-probability of `label` under `softmax(logits)` and its
/// gradient `softmax(logits) - onehot(label)`.
pub fn softmax_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::structural("softmax loss needs at least two classes"));
    }
    if label >= k {
        return Err(Error::structural(format!("label {label} out of range for {k} classes")));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean softmax loss over a `batch x classes` tensor; the returned
/// gradient is already divided by the batch size.
pub fn softmax_loss_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let batch = logits.rows();
    if labels.len() != batch {
        return Err(Error::structural(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let scale = 1.0 / batch as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &y) in labels.iter().enumerate() {
        let (l, g) = softmax_loss(logits.row(i), y)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    Ok((total * scale, Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Gradient of `mu/2 |alpha - (f - z)|^2` with respect to `f`:
/// `mu (f - z - alpha)`.
pub fn augmented_gradient(f: &Tensor, z: &Tensor, alpha: &Tensor, mu: f64) -> Result<Tensor> {
    f.same_shape(z)?;
    f.same_shape(alpha)?;
    let data = f
        .data()
        .iter()
        .zip(z.data())
        .zip(alpha.data())
        .map(|((fi, zi), ai)| mu * (fi - zi - ai))
        .collect();
    Tensor::new(f.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = softmax_loss(&[0.3; 10], 4).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((grad[4] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let (loss, grad) = softmax_loss(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.is_finite() && loss >= 0.0 && loss < 1e-300);
        assert!(grad.iter().all(|g| g.is_finite()));
        let (loss, _) = softmax_loss(&[1000.0, 0.0], 1).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        assert!(softmax_loss(&[0.0, 1.0], 2).is_err());
        assert!(softmax_loss(&[0.0], 0).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let logits = [0.3, -1.2, 2.0, 0.7, -0.1];
        let (_, grad) = softmax_loss(&logits, 2).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut up = logits;
            let mut down = logits;
            up[i] += h;
            down[i] -= h;
            let fd = (softmax_loss(&up, 2).unwrap().0 - softmax_loss(&down, 2).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn augmented_gradient_arithmetic() {
        let f = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let z = Tensor::new(vec![1, 2], vec![0.1, 0.1]).unwrap();
        let a = Tensor::new(vec![1, 2], vec![0.5, -0.2]).unwrap();
        let g = augmented_gradient(&f, &z, &a, 0.01).unwrap();
        assert!((g.data()[0] - 0.004).abs() < 1e-15);
        assert!((g.data()[1] - 0.001).abs() < 1e-15);
        assert!(augmented_gradient(&f, &z, &a, 0.0)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let za = Tensor::new(vec![1, 2], vec![0.4, 0.3]).unwrap();
        let fa = Tensor::new(vec![1, 2], vec![0.5, 0.2]).unwrap();
        let g = augmented_gradient(&fa, &za, &Tensor::new(vec![1, 2], vec![0.1, -0.1]).unwrap(), 3.0).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-15));
        assert!(augmented_gradient(&f, &Tensor::zeros(&[2, 1]), &a, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(logits in prop::collection::vec(-50.0f64..50.0, 2..12), label in 0usize..2) {
            let (loss, grad) = softmax_loss(&logits, label).unwrap();
            prop_assert!(loss >= 0.0);
            // grad = p - onehot, so the probabilities sum to sum(grad) + 1
            let total: f64 = grad.iter().sum::<f64>() + 1.0;
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn augmented_gradient_linear_in_mu(mu in 0.0f64..10.0, f in -5.0f64..5.0, z in -5.0f64..5.0, a in -5.0f64..5.0) {
            let t = |v: f64| Tensor::new(vec![1, 1], vec![v]).unwrap();
            let g1 = augmented_gradient(&t(f), &t(z), &t(a), 1.0).unwrap().data()[0];
            let gm = augmented_gradient(&t(f), &t(z), &t(a), mu).unwrap().data()[0];
            prop_assert_eq!(gm, mu * g1);
        }
    }
}
