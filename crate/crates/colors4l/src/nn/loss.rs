//! Loss math: softmax, cross-entropy and mean squared error, each with its
//! gradient with respect to the raw inputs.

use ndarray::{Array2, Array4, ArrayView2};

use super::Scalar;
use crate::error::{Error, Result};

/// Row-wise softmax, computed max-shifted.
pub fn softmax<S: Scalar>(logits: &ArrayView2<S>) -> Array2<S> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy of `logits` (B, C) against class indices.
///
/// Uses the max-shifted log-sum-exp so large logits do not overflow.
/// Returns the scalar loss and `d loss / d logits = (softmax - onehot) / B`.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &ArrayView2<S>,
    targets: &[usize],
) -> Result<(S, Array2<S>)> {
    let (b, c) = logits.dim();
    if targets.len() != b {
        return Err(Error::Contract(format!(
            "cross_entropy: {} logit rows vs {} targets",
            b,
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Contract(format!(
            "cross_entropy: target {t} out of range for {c} classes"
        )));
    }
    let inv_b = S::one() / S::usz(b);
    let mut grad = Array2::zeros((b, c));
    let mut loss = S::zero();
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let sum_exp = row.iter().map(|&v| (v - max).exp()).fold(S::zero(), |a, v| a + v);
        let lse = max + sum_exp.ln();
        loss = loss + lse - row[targets[i]];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            grad[(i, j)] = p * inv_b;
        }
        grad[(i, targets[i])] = grad[(i, targets[i])] - inv_b;
    }
    Ok((loss * inv_b, grad))
}

/// Mean squared error over every element, plus `d loss / d pred`.
pub fn mse<S: Scalar>(pred: &Array4<S>, target: &Array4<S>) -> Result<(S, Array4<S>)> {
    if pred.dim() != target.dim() {
        return Err(Error::Contract(format!(
            "mse: shape mismatch {:?} vs {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let n = S::usz(pred.len());
    let diff = pred - target;
    let loss = diff.iter().map(|&d| d * d).fold(S::zero(), |a, v| a + v) / n;
    let grad = diff.mapv(|d| d + d) / n;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array4};

    #[test]
    fn uniform_logits_give_ln_c() {
        for c in [2usize, 7, 10, 100] {
            let logits = Array2::<f64>::zeros((1, c));
            let (loss, _) = softmax_cross_entropy(&logits.view(), &[0]).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12, "C={c}");
        }
    }

    #[test]
    fn large_logit_is_stable() {
        let logits = arr2(&[[1000.0f32, 0.0]]);
        let (loss, grad) = softmax_cross_entropy(&logits.view(), &[0]).unwrap();
        assert!(loss.abs() < 1e-6);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn two_equal_logits_give_ln2() {
        let logits = arr2(&[[0.0f64, 0.0]]);
        let (loss, _) = softmax_cross_entropy(&logits.view(), &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn target_out_of_range_is_error() {
        let logits = Array2::<f32>::zeros((1, 3));
        assert!(softmax_cross_entropy(&logits.view(), &[3]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = arr2(&[[1.0f32, -2.0, 0.5], [30.0, 31.0, 29.0]]);
        let sm = softmax(&logits.view());
        for row in sm.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let mut logits = arr2(&[[0.3f64, -1.2, 0.7], [2.0, 0.1, -0.4]]);
        let targets = [2usize, 0];
        let (_, grad) = softmax_cross_entropy(&logits.view(), &targets).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let orig = logits[(i, j)];
                logits[(i, j)] = orig + h;
                let (lp, _) = softmax_cross_entropy(&logits.view(), &targets).unwrap();
                logits[(i, j)] = orig - h;
                let (lm, _) = softmax_cross_entropy(&logits.view(), &targets).unwrap();
                logits[(i, j)] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - grad[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mse_known_values() {
        let zeros = Array4::<f32>::zeros((1, 2, 2, 3));
        let ones = Array4::<f32>::ones((1, 2, 2, 3));
        let half = Array4::<f32>::from_elem((1, 2, 2, 3), 0.5);
        assert_eq!(mse(&zeros, &zeros).unwrap().0, 0.0);
        assert_eq!(mse(&zeros, &ones).unwrap().0, 1.0);
        assert_eq!(mse(&half, &zeros).unwrap().0, 0.25);
    }
}
