//! ReLU, used by the concatenation-style modules.

use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Returns the activation and the pass-through mask (1 where x > 0).
/// The subgradient at exactly zero is taken as 0.
pub fn relu_forward<T: Scalar>(x: &Tensor4<T>) -> (Tensor4<T>, Vec<u8>) {
    let mut out = x.clone();
    let mut mask = vec![0u8; x.len()];
    for (v, m) in out.data_mut().iter_mut().zip(mask.iter_mut()) {
        if *v > T::ZERO {
            *m = 1;
        } else {
            *v = T::ZERO;
        }
    }
    (out, mask)
}

pub fn relu_backward<T: Scalar>(mask: &[u8], grad_out: &Tensor4<T>) -> Tensor4<T> {
    debug_assert_eq!(mask.len(), grad_out.len());
    let mut gx = grad_out.clone();
    for (g, &m) in gx.data_mut().iter_mut().zip(mask.iter()) {
        if m == 0 {
            *g = T::ZERO;
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives_and_gates_gradient() {
        let x = Tensor4::from_vec((1, 1, 1, 4), vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        let (y, mask) = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 2.0]);
        assert_eq!(mask, vec![0, 0, 1, 1]);
        let g = Tensor4::from_vec((1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gx = relu_backward(&mask, &g);
        assert_eq!(gx.data(), &[0.0, 0.0, 3.0, 4.0]);
    }
}
