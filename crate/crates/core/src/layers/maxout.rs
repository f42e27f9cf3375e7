//! Maxout join: the elementwise maximum across parallel branches.
//!
//! Only the winning branch receives gradient at each element; ties break
//! toward the lowest branch index (ties have measure zero with continuous
//! weights but do occur with masked or zero initializations).

use crate::error::{Error, Result};
use crate::parallel::for_each_chunk2;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxoutJoin {
    pub branch_count: usize,
}

/// Argmax branch per output element, recorded by the forward pass.
#[derive(Debug, Clone)]
pub struct MaxoutCache {
    pub winners: Vec<u8>,
}

impl MaxoutJoin {
    pub fn new(branch_count: usize) -> Result<Self> {
        if branch_count == 0 || branch_count > u8::MAX as usize {
            return Err(Error::arg(
                "MaxoutJoin",
                format!("branch count must be in 1..=255, got {branch_count}"),
            ));
        }
        Ok(MaxoutJoin { branch_count })
    }

    pub fn forward<T: Scalar>(&self, branches: &[Tensor4<T>]) -> Result<(Tensor4<T>, MaxoutCache)> {
        if branches.len() != self.branch_count {
            return Err(Error::arg(
                "maxout_forward",
                format!("expected {} branches, got {}", self.branch_count, branches.len()),
            ));
        }
        let first = &branches[0];
        for (b, t) in branches.iter().enumerate().skip(1) {
            if !t.same_dims(first) {
                return Err(Error::shape(
                    "maxout_forward",
                    format!("branch {b} dims {:?} vs branch 0 {:?}", t.dims(), first.dims()),
                ));
            }
        }
        let mut out = first.clone();
        let mut winners = vec![0u8; out.len()];
        if branches.len() > 1 {
            let chunk = 4096.min(out.len());
            for_each_chunk2(out.data_mut(), &mut winners, chunk, |idx, ov, wv| {
                let base = idx * chunk;
                for (b, branch) in branches.iter().enumerate().skip(1) {
                    let bd = &branch.data()[base..base + ov.len()];
                    for i in 0..ov.len() {
                        if bd[i] > ov[i] {
                            ov[i] = bd[i];
                            wv[i] = b as u8;
                        }
                    }
                }
            });
        }
        Ok((out, MaxoutCache { winners }))
    }

    /// Route the upstream gradient to each element's winning branch; all
    /// other branches get exactly zero there.
    pub fn backward<T: Scalar>(
        &self,
        cache: &MaxoutCache,
        grad_out: &Tensor4<T>,
    ) -> Result<Vec<Tensor4<T>>> {
        if cache.winners.len() != grad_out.len() {
            return Err(Error::shape(
                "maxout_backward",
                format!(
                    "cached winners cover {} elements, grad_out has {}",
                    cache.winners.len(),
                    grad_out.len()
                ),
            ));
        }
        let mut grads: Vec<Tensor4<T>> = (0..self.branch_count)
            .map(|_| Tensor4::zeros(grad_out.dims()).expect("valid dims"))
            .collect();
        for (i, (&w, &g)) in cache.winners.iter().zip(grad_out.iter()).enumerate() {
            grads[w as usize].data_mut()[i] = g;
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn t(vals: Vec<f64>) -> Tensor4<f64> {
        let n = vals.len();
        Tensor4::from_vec((1, 1, 1, n), vals).unwrap()
    }

    #[test]
    fn elementwise_max_and_winners() {
        let join = MaxoutJoin::new(2).unwrap();
        let (out, cache) = join.forward(&[t(vec![1.0, 2.0]), t(vec![3.0, 0.0])]).unwrap();
        assert_eq!(out.data(), &[3.0, 2.0]);
        assert_eq!(cache.winners, vec![1, 0]);
    }

    #[test]
    fn single_branch_is_identity() {
        let join = MaxoutJoin::new(1).unwrap();
        let x = t(vec![4.0, -1.0, 0.5]);
        let (out, cache) = join.forward(std::slice::from_ref(&x)).unwrap();
        assert_eq!(out, x);
        assert!(cache.winners.iter().all(|&w| w == 0));
        let grads = join.backward(&cache, &t(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(grads[0].data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn ties_break_to_lowest_branch() {
        let join = MaxoutJoin::new(3).unwrap();
        let (out, cache) = join
            .forward(&[t(vec![1.0, 0.0]), t(vec![1.0, 2.0]), t(vec![1.0, 2.0])])
            .unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
        assert_eq!(cache.winners, vec![0, 1]);
    }

    #[test]
    fn matches_brute_force_max_over_four_branches() {
        let mut rng = SplitMix64::new(17);
        let join = MaxoutJoin::new(4).unwrap();
        let branches: Vec<Tensor4<f64>> = (0..4)
            .map(|_| Tensor4::gaussian((2, 3, 5, 5), 1.0, &mut rng).unwrap())
            .collect();
        let (out, cache) = join.forward(&branches).unwrap();
        for i in 0..out.len() {
            let mut best = f64::NEG_INFINITY;
            let mut best_b = 0usize;
            for (b, branch) in branches.iter().enumerate() {
                let v = branch.data()[i];
                if v > best {
                    best = v;
                    best_b = b;
                }
            }
            assert_eq!(out.data()[i], best);
            assert_eq!(cache.winners[i] as usize, best_b);
        }
    }

    #[test]
    fn gradient_routes_to_winner_only() {
        let join = MaxoutJoin::new(2).unwrap();
        let (_, cache) = join.forward(&[t(vec![0.0, 5.0]), t(vec![1.0, 0.0])]).unwrap();
        // winners are [1, 0]
        let grads = join.backward(&cache, &t(vec![5.0, 7.0])).unwrap();
        assert_eq!(grads[0].data(), &[0.0, 7.0]);
        assert_eq!(grads[1].data(), &[5.0, 0.0]);
    }

    #[test]
    fn gradient_is_conserved_and_exclusive() {
        let mut rng = SplitMix64::new(18);
        let join = MaxoutJoin::new(3).unwrap();
        let branches: Vec<Tensor4<f64>> = (0..3)
            .map(|_| Tensor4::gaussian((2, 2, 4, 4), 1.0, &mut rng).unwrap())
            .collect();
        let (_, cache) = join.forward(&branches).unwrap();
        let gout = Tensor4::<f64>::gaussian((2, 2, 4, 4), 1.0, &mut rng).unwrap();
        let grads = join.backward(&cache, &gout).unwrap();
        for i in 0..gout.len() {
            let nonzero: Vec<usize> = (0..3).filter(|&b| grads[b].data()[i] != 0.0).collect();
            assert!(nonzero.len() <= 1, "more than one branch got gradient");
            let total: f64 = (0..3).map(|b| grads[b].data()[i]).sum();
            assert_eq!(total, gout.data()[i]);
        }
    }

    #[test]
    fn branch_shape_mismatch_rejected() {
        let join = MaxoutJoin::new(2).unwrap();
        let a = Tensor4::<f64>::zeros((1, 1, 2, 2)).unwrap();
        let b = Tensor4::<f64>::zeros((1, 1, 2, 3)).unwrap();
        assert!(join.forward(&[a, b]).is_err());
    }
}
