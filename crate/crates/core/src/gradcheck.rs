//! Finite-difference gradient checking.
//!
//! Central differences over every learnable scalar, compared against the
//! backward pass per parameter tensor. The checks run on an f64-instantiated
//! network (32-bit finite differences are too noisy for tight thresholds;
//! a looser f32 mode exists for completeness). The differencing only ever
//! calls the forward pass, so it is independent of the backward code it
//! verifies.

use crate::error::Result;
use crate::layers::softmax_xent;
use crate::net::{micro_competitive_spec, GradSet, Network, StepMasks};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckSettings {
    /// Base step; the actual step is `fd_step * max(1, |theta|)`.
    pub fd_step: f64,
    pub threshold: f64,
    /// Components where both gradients fall below this magnitude count as
    /// matching — they sit under the differencing noise floor.
    pub small_grad_floor: f64,
    /// Re-measure disagreeing components at smaller steps. The network is
    /// piecewise linear (maxout, pooling, ReLU), so a base step can straddle
    /// a kink; shrinking the step moves the difference onto one linear
    /// piece. Finite differences converge to the true derivative either
    /// way, so a wrong backward pass stays wrong under refinement.
    pub refine: bool,
    /// Score each tensor by relative L2 distance instead of the worst
    /// component. Used by the loose f32 mode, where single-precision loss
    /// quantization makes individual small components unmeasurable.
    pub l2_metric: bool,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            fd_step: 1e-4,
            threshold: 1e-5,
            small_grad_floor: 1e-10,
            refine: true,
            l2_metric: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub param: String,
    pub max_rel_err: f64,
    /// Analytic and numeric values at the worst component.
    pub analytic: f64,
    pub numeric: f64,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checks: Vec<LayerCheck>,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_err <= self.threshold)
    }

    pub fn worst(&self) -> Option<&LayerCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn failures(&self) -> Vec<&LayerCheck> {
        self.checks
            .iter()
            .filter(|c| c.max_rel_err > self.threshold)
            .collect()
    }

    pub fn table(&self) -> String {
        let mut out = String::from("param,max_rel_err,analytic,numeric,status\n");
        for c in &self.checks {
            let status = if c.max_rel_err <= self.threshold {
                "ok"
            } else {
                "FAIL"
            };
            out.push_str(&format!(
                "{},{:.3e},{:.6e},{:.6e},{}\n",
                c.param, c.max_rel_err, c.analytic, c.numeric, status
            ));
        }
        out
    }
}

fn rel_err_floored(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    rel_err_floored(a, b, 1e-10)
}

/// Compare two gradient sets per parameter tensor (worst relative error per
/// tensor). Exposed separately so a deliberately corrupted gradient can be
/// shown to trip the check with the offending layer named.
pub fn compare_gradsets<T: Scalar>(
    net: &Network<T>,
    analytic: &GradSet<T>,
    numeric: &GradSet<T>,
    settings: GradCheckSettings,
) -> GradCheckReport {
    let mut checks = Vec::new();
    for id in net.param_ids() {
        let a = analytic.slice(&id);
        let n = numeric.slice(&id);
        let mut worst = LayerCheck {
            param: net.param_name(&id),
            max_rel_err: 0.0,
            analytic: 0.0,
            numeric: 0.0,
            index: 0,
        };
        let mut worst_component = (0.0f64, 0usize);
        for (i, (&av, &nv)) in a.iter().zip(n.iter()).enumerate() {
            let e = rel_err_floored(av.to_f64(), nv.to_f64(), settings.small_grad_floor);
            if e > worst_component.0 {
                worst_component = (e, i);
            }
        }
        let i = worst_component.1;
        worst.analytic = a[i].to_f64();
        worst.numeric = n[i].to_f64();
        worst.index = i;
        worst.max_rel_err = if settings.l2_metric {
            let mut diff = 0.0f64;
            let mut na = 0.0f64;
            let mut nn = 0.0f64;
            for (&av, &nv) in a.iter().zip(n.iter()) {
                let (av, nv) = (av.to_f64(), nv.to_f64());
                diff += (av - nv) * (av - nv);
                na += av * av;
                nn += nv * nv;
            }
            // A tensor whose gradient norms sit under the floor on both
            // sides is all differencing noise (e.g. a conv bias feeding
            // batch norm, whose true gradient is identically zero).
            if na.sqrt().max(nn.sqrt()) < settings.small_grad_floor {
                0.0
            } else {
                diff.sqrt() / (na.sqrt() + nn.sqrt())
            }
        } else {
            worst_component.0
        };
        checks.push(worst);
    }
    GradCheckReport {
        checks,
        threshold: settings.threshold,
    }
}

/// Check every learnable parameter of `net` on one batch. The step masks
/// are sampled once by the caller and held fixed, so the loss is a pure
/// function of the parameters.
pub fn gradcheck_network<T: Scalar>(
    net: &mut Network<T>,
    x: &Tensor4<T>,
    labels: &[u8],
    masks: &StepMasks,
    settings: GradCheckSettings,
) -> Result<GradCheckReport> {
    let loss_of = |net: &Network<T>| -> Result<f64> {
        let (logits, _) = net.forward_train(x, masks)?;
        let (loss, _) = softmax_xent(&logits, labels)?;
        Ok(loss.to_f64())
    };

    // Analytic gradients.
    let (logits, cache) = net.forward_train(x, masks)?;
    let (_, grad_logits) = softmax_xent(&logits, labels)?;
    let analytic = net.backward(&cache, masks, &grad_logits)?;

    // Numeric gradients by central differences, refining the step where a
    // kink of the piecewise-linear network falls inside the base interval.
    let mut numeric = net.zero_grads();
    for id in net.param_ids() {
        let len = net.param_slice(&id).len();
        for i in 0..len {
            let theta = net.param_slice(&id)[i].to_f64();
            let base_h = settings.fd_step * theta.abs().max(1.0);
            let mut fd_at = |h: f64| -> Result<f64> {
                net.param_slice_mut(&id)[i] = T::from_f64(theta + h);
                let plus = loss_of(net)?;
                net.param_slice_mut(&id)[i] = T::from_f64(theta - h);
                let minus = loss_of(net)?;
                net.param_slice_mut(&id)[i] = T::from_f64(theta);
                Ok((plus - minus) / (2.0 * h))
            };
            let an = analytic.slice(&id)[i].to_f64();
            let mut best = fd_at(base_h)?;
            if settings.refine {
                // In strict f64 mode only shrink (kink recovery); the loose
                // f32 mode also tries a larger step, since there forward
                // quantization noise scales with 1/h.
                let divisors: &[f64] = if settings.l2_metric {
                    &[0.25, 4.0, 16.0]
                } else {
                    &[16.0, 256.0]
                };
                for &divisor in divisors {
                    if rel_err_floored(an, best, settings.small_grad_floor) <= settings.threshold {
                        break;
                    }
                    let refined = fd_at(base_h / divisor)?;
                    if rel_err(an, refined) < rel_err(an, best) {
                        best = refined;
                    }
                }
            }
            numeric.slice_mut(&id)[i] = T::from_f64(best);
        }
    }

    Ok(compare_gradsets(net, &analytic, &numeric, settings))
}

/// The standard self-check: a two-module competitive micro network in f64,
/// every parameter against central differences at threshold 1e-5.
pub fn micro_gradcheck_f64(seed: u64) -> Result<GradCheckReport> {
    micro_gradcheck::<f64>(seed, GradCheckSettings::default())
}

/// f32 variant, documented loose mode: per-tensor relative L2 error at
/// threshold 1e-2. Single-precision loss values are quantized to ~1e-7, so
/// individual small components are unmeasurable by differencing; the vector
/// norm still pins down the backward pass.
pub fn micro_gradcheck_f32(seed: u64) -> Result<GradCheckReport> {
    micro_gradcheck::<f32>(
        seed,
        GradCheckSettings {
            fd_step: 2e-3,
            threshold: 1e-2,
            small_grad_floor: 2e-3,
            refine: true,
            l2_metric: true,
        },
    )
}

fn micro_gradcheck<T: Scalar>(seed: u64, settings: GradCheckSettings) -> Result<GradCheckReport> {
    let spec = micro_competitive_spec();
    let mut rng = SplitMix64::new(seed);
    let mut net = Network::<T>::build(&spec, &mut rng)?;
    let x = Tensor4::<T>::gaussian((4, 2, 8, 8), 1.0, &mut rng)?;
    let labels = [0u8, 1, 2, 0];
    let masks = net.empty_masks();
    gradcheck_network(&mut net, &x, &labels, &masks, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::micro_inception_spec;

    #[test]
    fn micro_competitive_net_passes_at_1e5() {
        let report = micro_gradcheck_f64(12345).unwrap();
        assert!(
            report.passed(),
            "worst: {:?}",
            report.worst().map(|c| (c.param.clone(), c.max_rel_err))
        );
    }

    #[test]
    fn micro_inception_net_passes_at_1e5() {
        let mut rng = SplitMix64::new(777);
        let mut net = Network::<f64>::build(&micro_inception_spec(), &mut rng).unwrap();
        let x = Tensor4::<f64>::gaussian((3, 2, 8, 8), 1.0, &mut rng).unwrap();
        let masks = net.empty_masks();
        let report =
            gradcheck_network(&mut net, &x, &[0, 1, 2], &masks, GradCheckSettings::default())
                .unwrap();
        assert!(
            report.passed(),
            "worst: {:?}",
            report.worst().map(|c| (c.param.clone(), c.max_rel_err))
        );
    }

    #[test]
    fn dropconnect_and_dropout_paths_differentiate_with_fixed_masks() {
        let mut spec = micro_competitive_spec();
        spec.blocks[0][0].dropconnect_rate = Some(0.4);
        spec.downsampler.dropout = Some(0.25);
        let mut rng = SplitMix64::new(31);
        let mut net = Network::<f64>::build(&spec, &mut rng).unwrap();
        let x = Tensor4::<f64>::gaussian((4, 2, 8, 8), 1.0, &mut rng).unwrap();
        let masks = net.sample_step_masks(4, &mut rng).unwrap();
        let report = gradcheck_network(
            &mut net,
            &x,
            &[0, 1, 2, 0],
            &masks,
            GradCheckSettings::default(),
        )
        .unwrap();
        assert!(
            report.passed(),
            "worst: {:?}",
            report.worst().map(|c| (c.param.clone(), c.max_rel_err))
        );
    }

    #[test]
    fn corrupted_gradient_is_caught_with_layer_named() {
        let spec = micro_competitive_spec();
        let mut rng = SplitMix64::new(99);
        let net = Network::<f64>::build(&spec, &mut rng).unwrap();
        let x = Tensor4::<f64>::gaussian((4, 2, 8, 8), 1.0, &mut rng).unwrap();
        let labels = [0u8, 1, 2, 1];
        let masks = net.empty_masks();
        let (logits, cache) = net.forward_train(&x, &masks).unwrap();
        let (_, gl) = softmax_xent(&logits, &labels).unwrap();
        let good = net.backward(&cache, &masks, &gl).unwrap();
        // Sign-flip the gradient flowing into one branch, as a routing bug
        // in the maxout backward would.
        let mut bad = good.clone();
        let target = crate::net::ParamId {
            block: 0,
            module: 0,
            branch: 1,
            part: crate::net::ParamPart::ConvWeights,
        };
        for v in bad.slice_mut(&target) {
            *v = -*v;
        }
        let report = compare_gradsets(&net, &good, &bad, GradCheckSettings::default());
        assert!(!report.passed());
        let failures = report.failures();
        assert!(failures.iter().any(|c| c.param == net.param_name(&target)));
        // Untouched layers stay clean.
        assert!(failures.iter().all(|c| c.param == net.param_name(&target)));
    }

    #[test]
    fn f32_mode_passes_at_loose_threshold() {
        let report = micro_gradcheck_f32(12345).unwrap();
        assert!(
            report.passed(),
            "worst: {:?}",
            report.worst().map(|c| (c.param.clone(), c.max_rel_err))
        );
    }
}
