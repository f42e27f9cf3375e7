//! Softmax cross-entropy head over (n, K, 1, 1) logits.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

fn check_logits<T: Scalar>(logits: &Tensor4<T>, op: &'static str) -> Result<()> {
    let (_, _, h, w) = logits.dims();
    if h != 1 || w != 1 {
        return Err(Error::shape(
            op,
            format!("logits must be (n, K, 1, 1), got {:?}", logits.dims()),
        ));
    }
    Ok(())
}

/// Row-stabilized softmax probabilities, same dims as the logits.
pub fn softmax_probs<T: Scalar>(logits: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_logits(logits, "softmax_probs")?;
    let (n, k, _, _) = logits.dims();
    let mut out = logits.clone();
    for ni in 0..n {
        let row = &mut out.data_mut()[ni * k..(ni + 1) * k];
        let mut maxv = row[0];
        for &v in row.iter() {
            maxv = maxv.maximum(v);
        }
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - maxv).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch plus its gradient with respect to the
/// logits: (softmax - onehot) / n.
pub fn softmax_xent<T: Scalar>(logits: &Tensor4<T>, labels: &[u8]) -> Result<(T, Tensor4<T>)> {
    check_logits(logits, "softmax_xent")?;
    let (n, k, _, _) = logits.dims();
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_xent",
            format!("{n} samples but {} labels", labels.len()),
        ));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= k {
            return Err(Error::arg(
                "softmax_xent",
                format!("label {l} at sample {i} out of range [0, {k})"),
            ));
        }
    }
    let mut grad = softmax_probs(logits)?;
    let inv_n = T::ONE / T::from_usize(n);
    let mut loss = T::ZERO;
    for (ni, &label) in labels.iter().enumerate() {
        let row = &mut grad.data_mut()[ni * k..(ni + 1) * k];
        // Clamp away from zero so the log stays finite in f32.
        let p = row[label as usize].maximum(T::from_f64(1e-30));
        loss += -(p.ln());
        row[label as usize] -= T::ONE;
        for v in row.iter_mut() {
            *v = *v * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Argmax class per sample; ties go to the lowest class index.
pub fn argmax_classes<T: Scalar>(logits: &Tensor4<T>) -> Result<Vec<u8>> {
    check_logits(logits, "argmax_classes")?;
    let (n, k, _, _) = logits.dims();
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let row = &logits.data()[ni * k..(ni + 1) * k];
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = i;
            }
        }
        out.push(best as u8);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor4::<f64>::zeros((3, 10, 1, 1)).unwrap();
        let (loss, _) = softmax_xent(&logits, &[0, 5, 9]).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12, "loss {loss}");
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn dominant_correct_logit_drives_loss_to_zero() {
        let mut logits = Tensor4::<f64>::zeros((1, 4, 1, 1)).unwrap();
        logits.data_mut()[2] = 50.0;
        let (loss, _) = softmax_xent(&logits, &[2]).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = SplitMix64::new(30);
        let logits = Tensor4::<f64>::gaussian((5, 7, 1, 1), 3.0, &mut rng).unwrap();
        let p = softmax_probs(&logits).unwrap();
        for ni in 0..5 {
            let s: f64 = p.data()[ni * 7..(ni + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor4::<f64>::zeros((1, 3, 1, 1)).unwrap();
        assert!(softmax_xent(&logits, &[3]).is_err());
        assert!(softmax_xent(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(31);
        let logits = Tensor4::<f64>::gaussian((3, 5, 1, 1), 1.0, &mut rng).unwrap();
        let labels = [1u8, 4, 0];
        let (_, grad) = softmax_xent(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut lp = logits.clone();
            lp.data_mut()[i] += h;
            let mut lm = logits.clone();
            lm.data_mut()[i] -= h;
            let (fp, _) = softmax_xent(&lp, &labels).unwrap();
            let (fm, _) = softmax_xent(&lm, &labels).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let an = grad.data()[i];
            assert!(
                (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8) < 1e-6,
                "logit {i}: {an} vs {fd}"
            );
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let logits = Tensor4::from_vec((2, 3, 1, 1), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_classes(&logits).unwrap(), vec![0, 1]);
    }
}
