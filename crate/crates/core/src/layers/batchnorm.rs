//! Per-channel batch normalization over the (batch, height, width) axes.
//!
//! Train mode standardizes with the batch mean and biased variance, then
//! scales by gamma and shifts by beta; running statistics are tracked by an
//! exponential moving average for eval mode, where the output is a fixed
//! affine function of the input. The running-stats update is split out of
//! the forward pass ([`batchnorm_update_running`]) so forward stays pure and
//! the training loop remains the single writer.

use crate::error::{Error, Result};
use crate::parallel::for_each_chunk;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    /// Weight of the new batch statistic in the running average.
    pub momentum: T,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Batch statistics captured by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::arg("BatchNormLayer", format!("eps must be > 0, got {eps}")));
        }
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::arg(
                "BatchNormLayer",
                format!("momentum must be in (0,1), got {momentum}"),
            ));
        }
        Ok(BatchNormLayer {
            gamma: vec![T::ONE; channels],
            beta: vec![T::ZERO; channels],
            running_mean: vec![T::ZERO; channels],
            running_var: vec![T::ONE; channels],
            eps: T::from_f64(eps),
            momentum: T::from_f64(momentum),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Learnable scalars: gamma and beta. Running statistics are tracked,
    /// not learned.
    pub fn param_count(&self) -> usize {
        2 * self.channels()
    }

    pub fn zero_grads(&self) -> BnGrads<T> {
        BnGrads {
            gamma: vec![T::ZERO; self.channels()],
            beta: vec![T::ZERO; self.channels()],
        }
    }
}

fn check_channels<T: Scalar>(layer: &BatchNormLayer<T>, x: &Tensor4<T>, op: &'static str) -> Result<()> {
    if x.c() != layer.channels() {
        return Err(Error::shape(
            op,
            format!("input has {} channels, layer has {}", x.c(), layer.channels()),
        ));
    }
    Ok(())
}

/// Train mode returns the batch-statistics cache; eval mode returns `None`.
pub fn batchnorm_forward<T: Scalar>(
    layer: &BatchNormLayer<T>,
    x: &Tensor4<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, Option<BnCache<T>>)> {
    check_channels(layer, x, "batchnorm_forward")?;
    let (n, c, h, w) = x.dims();
    let m = n * h * w;
    match mode {
        Mode::Train => {
            if m == 1 {
                return Err(Error::arg(
                    "batchnorm_forward",
                    "train mode needs n*h*w >= 2 (variance of a single value is undefined)",
                ));
            }
            let mut mean = vec![T::ZERO; c];
            let mut var = vec![T::ZERO; c];
            let m_t = T::from_usize(m);
            // Two-pass per channel; channels are independent.
            for_each_chunk(&mut mean, 1, |ch, out| {
                let mut sum = T::ZERO;
                for ni in 0..n {
                    for &v in x.plane(ni, ch) {
                        sum += v;
                    }
                }
                out[0] = sum / m_t;
            });
            {
                let mean_ref = &mean;
                for_each_chunk(&mut var, 1, |ch, out| {
                    let mu = mean_ref[ch];
                    let mut sum = T::ZERO;
                    for ni in 0..n {
                        for &v in x.plane(ni, ch) {
                            let d = v - mu;
                            sum += d * d;
                        }
                    }
                    out[0] = sum / m_t;
                });
            }
            let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + layer.eps).sqrt()).collect();
            let out = affine_normalize(layer, x, &mean, &inv_std)?;
            Ok((out, Some(BnCache { mean, var, inv_std })))
        }
        Mode::Eval => {
            let inv_std: Vec<T> = layer
                .running_var
                .iter()
                .map(|&v| T::ONE / (v + layer.eps).sqrt())
                .collect();
            let out = affine_normalize(layer, x, &layer.running_mean, &inv_std)?;
            Ok((out, None))
        }
    }
}

fn affine_normalize<T: Scalar>(
    layer: &BatchNormLayer<T>,
    x: &Tensor4<T>,
    mean: &[T],
    inv_std: &[T],
) -> Result<Tensor4<T>> {
    let (n, c, h, w) = x.dims();
    let mut out = Tensor4::zeros((n, c, h, w))?;
    let plane = h * w;
    for_each_chunk(out.data_mut(), plane, |idx, out_plane| {
        let ni = idx / c;
        let ch = idx % c;
        let scale = layer.gamma[ch] * inv_std[ch];
        let shift = layer.beta[ch];
        let mu = mean[ch];
        for (o, &v) in out_plane.iter_mut().zip(x.plane(ni, ch)) {
            *o = (v - mu) * scale + shift;
        }
    });
    Ok(out)
}

/// Fold the cached batch statistics into the running averages:
/// running <- (1 - momentum) * running + momentum * batch.
pub fn batchnorm_update_running<T: Scalar>(layer: &mut BatchNormLayer<T>, cache: &BnCache<T>) {
    let m = layer.momentum;
    let keep = T::ONE - m;
    for (r, &b) in layer.running_mean.iter_mut().zip(cache.mean.iter()) {
        *r = keep * *r + m * b;
    }
    for (r, &b) in layer.running_var.iter_mut().zip(cache.var.iter()) {
        *r = keep * *r + m * b;
    }
}

/// Full-batch derivative (the batch mean and variance depend on x).
/// Only the train-mode path is differentiable here; eval-mode backward is
/// rejected.
pub fn batchnorm_backward<T: Scalar>(
    layer: &BatchNormLayer<T>,
    x: &Tensor4<T>,
    cache: Option<&BnCache<T>>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, BnGrads<T>)> {
    check_channels(layer, x, "batchnorm_backward")?;
    let cache = cache.ok_or_else(|| {
        Error::arg(
            "batchnorm_backward",
            "no batch statistics: backward is train-mode only",
        )
    })?;
    if grad_out.dims() != x.dims() {
        return Err(Error::shape(
            "batchnorm_backward",
            format!("grad_out dims {:?} vs input {:?}", grad_out.dims(), x.dims()),
        ));
    }
    let (n, c, h, w) = x.dims();
    let m = T::from_usize(n * h * w);
    let mut grads = layer.zero_grads();
    let mut grad_x = Tensor4::zeros((n, c, h, w))?;

    // Per channel: s1 = sum(dy), s2 = sum(dy * xhat);
    // dx = gamma * inv_std / m * (m * dy - s1 - xhat * s2).
    let mut sums = vec![T::ZERO; 2 * c];
    for_each_chunk(&mut sums, 2, |ch, out| {
        let mu = cache.mean[ch];
        let istd = cache.inv_std[ch];
        let mut s1 = T::ZERO;
        let mut s2 = T::ZERO;
        for ni in 0..n {
            for (&g, &v) in grad_out.plane(ni, ch).iter().zip(x.plane(ni, ch)) {
                s1 += g;
                s2 += g * (v - mu) * istd;
            }
        }
        out[0] = s1;
        out[1] = s2;
    });
    for ch in 0..c {
        grads.beta[ch] = sums[2 * ch];
        grads.gamma[ch] = sums[2 * ch + 1];
    }

    let plane = h * w;
    let sums_ref = &sums;
    for_each_chunk(grad_x.data_mut(), plane, |idx, gx_plane| {
        let ni = idx / c;
        let ch = idx % c;
        let mu = cache.mean[ch];
        let istd = cache.inv_std[ch];
        let s1 = sums_ref[2 * ch];
        let s2 = sums_ref[2 * ch + 1];
        let coeff = layer.gamma[ch] * istd / m;
        for ((g, &dy), &v) in gx_plane
            .iter_mut()
            .zip(grad_out.plane(ni, ch))
            .zip(x.plane(ni, ch))
        {
            let xhat = (v - mu) * istd;
            *g = coeff * (m * dy - s1 - xhat * s2);
        }
    });

    Ok((grad_x, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn standardizes_two_values() {
        // batch {1, 3}: mean 2, std 1 -> {-1, +1}
        let layer = BatchNormLayer::<f64>::new(1, 1e-12, 0.1).unwrap();
        let x = Tensor4::from_vec((2, 1, 1, 1), vec![1.0, 3.0]).unwrap();
        let (y, cache) = batchnorm_forward(&layer, &x, Mode::Train).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-6);
        assert!((y.data()[1] - 1.0).abs() < 1e-6);
        assert!(cache.is_some());
    }

    #[test]
    fn gamma_beta_affine() {
        let mut layer = BatchNormLayer::<f64>::new(1, 1e-12, 0.1).unwrap();
        layer.gamma[0] = 2.0;
        layer.beta[0] = 5.0;
        let x = Tensor4::from_vec((2, 1, 1, 1), vec![1.0, 3.0]).unwrap();
        let (y, _) = batchnorm_forward(&layer, &x, Mode::Train).unwrap();
        assert!((y.data()[0] - 3.0).abs() < 1e-6);
        assert!((y.data()[1] - 7.0).abs() < 1e-6);
    }

    #[test]
    fn output_statistics_match_gamma_beta() {
        // Direct mean/var oracle on the output per channel.
        let mut rng = SplitMix64::new(21);
        let mut layer = BatchNormLayer::<f64>::new(3, 1e-5, 0.1).unwrap();
        layer.gamma = vec![0.5, 2.0, 1.0];
        layer.beta = vec![1.0, -2.0, 0.25];
        let x = Tensor4::gaussian((4, 3, 8, 8), 1.3, &mut rng).unwrap();
        let (y, _) = batchnorm_forward(&layer, &x, Mode::Train).unwrap();
        let m = (4 * 8 * 8) as f64;
        for ch in 0..3 {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for ni in 0..4 {
                for &v in y.plane(ni, ch) {
                    sum += v;
                    sumsq += v * v;
                }
            }
            let mean = sum / m;
            let var = sumsq / m - mean * mean;
            assert!((mean - layer.beta[ch]).abs() < 1e-5, "mean ch{ch}");
            assert!(
                (var - layer.gamma[ch] * layer.gamma[ch]).abs() < 1e-3,
                "var ch{ch}: {var}"
            );
        }
    }

    #[test]
    fn eval_mode_is_affine_in_running_stats() {
        let mut layer = BatchNormLayer::<f64>::new(2, 1e-5, 0.1).unwrap();
        layer.running_mean = vec![1.0, -1.0];
        layer.running_var = vec![4.0, 0.25];
        layer.gamma = vec![3.0, 1.0];
        layer.beta = vec![0.5, 2.0];
        let x = Tensor4::from_vec((1, 2, 1, 2), vec![1.0, 5.0, -1.0, 0.0]).unwrap();
        let (y, cache) = batchnorm_forward(&layer, &x, Mode::Eval).unwrap();
        assert!(cache.is_none());
        for ch in 0..2 {
            let inv = 1.0 / (layer.running_var[ch] + 1e-5).sqrt();
            for (i, &v) in x.plane(0, ch).iter().enumerate() {
                let want = (v - layer.running_mean[ch]) * inv * layer.gamma[ch] + layer.beta[ch];
                let got = y.plane(0, ch)[i];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn running_stats_follow_ema() {
        let mut layer = BatchNormLayer::<f64>::new(1, 1e-5, 0.1).unwrap();
        let cache = BnCache {
            mean: vec![2.0],
            var: vec![3.0],
            inv_std: vec![0.0],
        };
        batchnorm_update_running(&mut layer, &cache);
        assert!((layer.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((layer.running_var[0] - (0.9 + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn single_element_batch_rejected_in_train() {
        let layer = BatchNormLayer::<f64>::new(1, 1e-5, 0.1).unwrap();
        let x = Tensor4::from_vec((1, 1, 1, 1), vec![1.0]).unwrap();
        assert!(batchnorm_forward(&layer, &x, Mode::Train).is_err());
        assert!(batchnorm_forward(&layer, &x, Mode::Eval).is_ok());
    }

    #[test]
    fn eval_backward_rejected() {
        let layer = BatchNormLayer::<f64>::new(1, 1e-5, 0.1).unwrap();
        let x = Tensor4::from_vec((2, 1, 1, 1), vec![1.0, 2.0]).unwrap();
        let g = Tensor4::from_vec((2, 1, 1, 1), vec![1.0, 1.0]).unwrap();
        assert!(batchnorm_backward(&layer, &x, None, &g).is_err());
    }

    #[test]
    fn grad_beta_is_sum_of_grad_out() {
        let mut rng = SplitMix64::new(22);
        let layer = BatchNormLayer::<f64>::new(2, 1e-5, 0.1).unwrap();
        let x = Tensor4::gaussian((3, 2, 4, 4), 1.0, &mut rng).unwrap();
        let g = Tensor4::gaussian((3, 2, 4, 4), 1.0, &mut rng).unwrap();
        let (_, cache) = batchnorm_forward(&layer, &x, Mode::Train).unwrap();
        let (_, grads) = batchnorm_backward(&layer, &x, cache.as_ref(), &g).unwrap();
        for ch in 0..2 {
            let want: f64 = (0..3).map(|ni| g.plane(ni, ch).iter().sum::<f64>()).sum();
            assert!((grads.beta[ch] - want).abs() < 1e-9);
        }
        let gz = Tensor4::<f64>::zeros((3, 2, 4, 4)).unwrap();
        let (gx, grads) = batchnorm_backward(&layer, &x, cache.as_ref(), &gz).unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
        assert!(grads.gamma.iter().all(|&v| v == 0.0));
        assert!(grads.beta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SplitMix64::new(23);
        let mut layer = BatchNormLayer::<f64>::new(2, 1e-5, 0.1).unwrap();
        layer.gamma = vec![1.3, 0.7];
        layer.beta = vec![0.2, -0.4];
        let x = Tensor4::gaussian((2, 2, 3, 3), 1.0, &mut rng).unwrap();
        let proj = Tensor4::gaussian((2, 2, 3, 3), 1.0, &mut rng).unwrap();
        let loss = |l: &BatchNormLayer<f64>, xt: &Tensor4<f64>| -> f64 {
            let (y, _) = batchnorm_forward(l, xt, Mode::Train).unwrap();
            y.iter().zip(proj.iter()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = batchnorm_forward(&layer, &x, Mode::Train).unwrap();
        let (gx, grads) = batchnorm_backward(&layer, &x, cache.as_ref(), &proj).unwrap();
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
            assert!(rel(gx.data()[i], fd) < 1e-6, "x[{i}]");
        }
        for ch in 0..2 {
            let mut lp = layer.clone();
            lp.gamma[ch] += h;
            let mut lm = layer.clone();
            lm.gamma[ch] -= h;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * h);
            assert!(rel(grads.gamma[ch], fd) < 1e-6, "gamma[{ch}]");
            let mut lp = layer.clone();
            lp.beta[ch] += h;
            let mut lm = layer.clone();
            lm.beta[ch] -= h;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * h);
            assert!(rel(grads.beta[ch], fd) < 1e-6, "beta[{ch}]");
        }
    }
}
