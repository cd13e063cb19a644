//! Softmax cross-entropy, computed through log-sum-exp so saturated logits
//! neither overflow nor underflow.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let &[batch, classes] = logits.shape() else {
        return Err(Error::Tensor(format!(
            "logits must be [batch, classes], got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != batch {
        return Err(Error::Tensor(format!(
            "{} labels for {batch} logit rows",
            labels.len()
        )));
    }
    if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Label {
            label,
            classes,
            sample,
        });
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite {
            context: "logits".into(),
        });
    }
    Ok((batch, classes))
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (batch, classes) = check(logits, labels)?;
    let total: f64 = logits
        .data()
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum();
    Ok(total / batch as f64)
}

/// Loss together with its gradient with respect to the logits.
pub fn softmax_cross_entropy_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = check(logits, labels)?;
    let scale = 1.0 / batch as f64;
    let mut grad = vec![0.0; batch * classes];
    let mut total = 0.0;
    for ((row, g), &y) in logits
        .data()
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        let lse = log_sum_exp(row);
        total += lse - row[y];
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - lse).exp() * scale;
        }
        g[y] -= scale;
    }
    Ok((total * scale, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_two_class_is_ln2() {
        let l = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let v = softmax_cross_entropy(&l, &[0]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_logits_stay_finite() {
        let l = Tensor::new(vec![1, 2], vec![1000.0, -1000.0]).unwrap();
        let v = softmax_cross_entropy(&l, &[0]).unwrap();
        assert!(v >= 0.0 && v < 1e-300_f64.max(1e-12));
        let wrong = softmax_cross_entropy(&l, &[1]).unwrap();
        assert!((wrong - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let l = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&l, &[3]),
            Err(Error::Label {
                label: 3,
                classes: 3,
                ..
            })
        ));
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        let l = Tensor::new(vec![1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&l, &[0]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let l = Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 5.0, 5.0, -3.0]).unwrap();
        let (v, g) = softmax_cross_entropy_grad(&l, &[2, 0]).unwrap();
        assert!((v - softmax_cross_entropy(&l, &[2, 0]).unwrap()).abs() < 1e-15);
        for row in g.data().chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
