//! Inverted dropout for the between-block junctions.
//!
//! Kept activations are scaled by 1/(1-rate) during training so eval mode is
//! the identity. Masks are sampled per training step from the seeded stream.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Bernoulli(1 - rate) keep-mask.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut SplitMix64) -> Result<Vec<u8>> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::arg(
            "dropout_mask",
            format!("rate must be in (0,1), got {rate}"),
        ));
    }
    Ok((0..len).map(|_| u8::from(!rng.bernoulli(rate))).collect())
}

pub fn dropout_forward<T: Scalar>(x: &Tensor4<T>, mask: &[u8], rate: f64) -> Tensor4<T> {
    debug_assert_eq!(mask.len(), x.len());
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let mut out = x.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask.iter()) {
        *v = if m == 1 { *v * scale } else { T::ZERO };
    }
    out
}

pub fn dropout_backward<T: Scalar>(mask: &[u8], rate: f64, grad_out: &Tensor4<T>) -> Tensor4<T> {
    dropout_forward(grad_out, mask, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_and_scales_by_mask() {
        let x = Tensor4::from_vec((1, 1, 1, 4), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let mask = vec![1, 0, 1, 0];
        let y = dropout_forward(&x, &mask, 0.5);
        assert_eq!(y.data(), &[2.0, 0.0, 6.0, 0.0]);
        let gx = dropout_backward(&mask, 0.5, &x);
        assert_eq!(gx.data(), &[2.0, 0.0, 6.0, 0.0]);
    }

    #[test]
    fn mask_rate_concentrates() {
        let mut rng = SplitMix64::new(50);
        let mask = dropout_mask(200_000, 0.3, &mut rng).unwrap();
        let kept = mask.iter().filter(|&&m| m == 1).count() as f64 / mask.len() as f64;
        assert!((kept - 0.7).abs() < 0.005, "kept {kept}");
    }

    #[test]
    fn rate_bounds_enforced() {
        let mut rng = SplitMix64::new(1);
        assert!(dropout_mask(4, 0.0, &mut rng).is_err());
        assert!(dropout_mask(4, 1.0, &mut rng).is_err());
    }
}
