//! SGD training: momentum + weight decay, multi-step learning-rate decay
//! from 0.1 to 0.001, seeded shuffling, per-epoch evaluation, and
//! best-validation checkpointing with frozen batch-norm statistics.

pub mod report;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::layers::{argmax_classes, softmax_xent};
use crate::net::{GradSet, Network, NetworkSpec};
use crate::rng::SplitMix64;

pub use report::{config_hash, AggregateReport, EpochRow, RunReport};

/// How the validation split is carved from the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValSplit {
    /// Last 5000 samples when the set is large, last 10% for small sets,
    /// nothing below 50 samples.
    Auto,
    /// Train on everything; checkpoint by training loss.
    None,
    /// Hold out exactly the last n samples.
    LastN(usize),
    /// Hold out the last fraction (0, 1).
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Number of multiplicative drops between the endpoints. The default 2
    /// gives 0.1 -> 0.01 -> 0.001 at one-third and two-thirds of training.
    pub lr_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub val: ValSplit,
    /// Also evaluate the test split every epoch (observational column).
    pub eval_test_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 0.1,
            lr_final: 0.001,
            lr_steps: 2,
            epochs: 80,
            batch_size: 100,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 1,
            shuffle: true,
            val: ValSplit::Auto,
            eval_test_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_initial >= 0.0 && self.lr_final >= 0.0)
            || !self.lr_initial.is_finite()
            || !self.lr_final.is_finite()
        {
            return Err(Error::Config("learning rates must be finite and >= 0".into()));
        }
        if self.lr_final > self.lr_initial {
            return Err(Error::Config(
                "lr must decay: lr_final cannot exceed lr_initial".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if let ValSplit::Fraction(f) = self.val {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config("val fraction must be in (0, 1)".into()));
            }
        }
        Ok(())
    }

    /// Piecewise-constant learning rate: `lr_initial` before the first
    /// boundary, one multiplicative factor per boundary, pinned to exactly
    /// `lr_final` after the last. Boundaries sit at i/(steps+1) of training.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_steps == 0 {
            return self.lr_initial;
        }
        let mut region = 0usize;
        for i in 1..=self.lr_steps {
            // Integer division can put a boundary at epoch 0 for very short
            // runs; the first epoch always trains at the initial rate.
            let boundary = (self.epochs * i / (self.lr_steps + 1)).max(i);
            if epoch >= boundary {
                region = i;
            }
        }
        if region == 0 {
            self.lr_initial
        } else if region == self.lr_steps || self.lr_initial == 0.0 {
            self.lr_final
        } else {
            let factor = (self.lr_final / self.lr_initial).powf(1.0 / self.lr_steps as f64);
            self.lr_initial * factor.powi(region as i32)
        }
    }
}

/// One momentum step on a parameter slice:
/// v <- momentum * v - lr * (g + weight_decay * p); p <- p + v.
/// Masked convolution weights are re-zeroed by the caller afterwards.
fn sgd_update_slice(
    name: impl Fn() -> String,
    params: &mut [f32],
    grads: &[f32],
    velocity: &mut [f32],
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) -> Result<()> {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), velocity.len());
    for ((p, &g), v) in params.iter_mut().zip(grads.iter()).zip(velocity.iter_mut()) {
        if !g.is_finite() {
            return Err(Error::NonFiniteGrad { param: name() });
        }
        *v = momentum * *v - lr * (g + weight_decay * *p);
        *p += *v;
    }
    Ok(())
}

/// Apply one optimizer step over every learnable tensor. Gradients must be
/// finite (training aborts loudly on divergence); masked weights are exactly
/// zero again when this returns.
pub fn sgd_step(
    net: &mut Network<f32>,
    grads: &GradSet<f32>,
    velocity: &mut GradSet<f32>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let (lr, mom, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for (b, block) in net.blocks.iter_mut().enumerate() {
        for (m, module) in block.iter_mut().enumerate() {
            for (bi, branch) in module.branches.iter_mut().enumerate() {
                let g = &grads.modules[b][m].branches[bi];
                let v = &mut velocity.modules[b][m].branches[bi];
                let label = branch.label.to_string();
                let name = |part: &'static str| {
                    let label = label.clone();
                    move || format!("b{b}.m{m}.{label}.{part}")
                };
                if let Some(bott) = branch.bottleneck.as_mut() {
                    let gb = g.bottleneck.as_ref().expect("grad layout matches");
                    let vb = v.bottleneck.as_mut().expect("velocity layout matches");
                    sgd_update_slice(
                        name("bottleneck.weights"),
                        bott.weights.data_mut(),
                        gb.weights.data(),
                        vb.weights.data_mut(),
                        lr,
                        mom,
                        wd,
                    )?;
                    sgd_update_slice(
                        name("bottleneck.bias"),
                        &mut bott.bias,
                        &gb.bias,
                        &mut vb.bias,
                        lr,
                        mom,
                        wd,
                    )?;
                }
                sgd_update_slice(
                    name("conv.weights"),
                    branch.conv.weights.data_mut(),
                    g.conv.weights.data(),
                    v.conv.weights.data_mut(),
                    lr,
                    mom,
                    wd,
                )?;
                sgd_update_slice(
                    name("conv.bias"),
                    &mut branch.conv.bias,
                    &g.conv.bias,
                    &mut v.conv.bias,
                    lr,
                    mom,
                    wd,
                )?;
                branch.conv.apply_mask();
                if let Some(bn) = branch.bn.as_mut() {
                    let gb = g.bn.as_ref().expect("grad layout matches");
                    let vb = v.bn.as_mut().expect("velocity layout matches");
                    sgd_update_slice(name("bn.gamma"), &mut bn.gamma, &gb.gamma, &mut vb.gamma, lr, mom, wd)?;
                    sgd_update_slice(name("bn.beta"), &mut bn.beta, &gb.beta, &mut vb.beta, lr, mom, wd)?;
                }
            }
        }
    }
    Ok(())
}

/// Misclassification fraction over a dataset, eval mode (frozen statistics).
pub fn evaluate(net: &Network<f32>, dataset: &Dataset, batch_size: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut wrong = 0usize;
    let mut rng = SplitMix64::new(0); // unused: evaluation never shuffles
    for (x, labels) in batches(dataset, batch_size, false, &mut rng)? {
        let logits = net.forward_eval(&x)?;
        let preds = argmax_classes(&logits)?;
        wrong += preds
            .iter()
            .zip(labels.iter())
            .filter(|(p, l)| p != l)
            .count();
    }
    Ok(wrong as f64 / dataset.len() as f64)
}

fn resolve_val_split(dataset: &Dataset, val: ValSplit) -> Result<(Dataset, Option<Dataset>)> {
    let n = dataset.len();
    let hold = match val {
        ValSplit::None => 0,
        ValSplit::LastN(k) => k,
        ValSplit::Fraction(f) => ((n as f64 * f).ceil() as usize).max(1),
        ValSplit::Auto => {
            if n > 10_000 {
                5_000
            } else if n >= 50 {
                n / 10
            } else {
                0
            }
        }
    };
    if hold == 0 {
        return Ok((dataset.subset(0, n, dataset.split)?, None));
    }
    if hold >= n {
        return Err(Error::Config(format!(
            "validation split of {hold} leaves no training data (n = {n})"
        )));
    }
    let (train, val) = dataset.split_tail(hold)?;
    Ok((train, Some(val)))
}

/// Train in place. The network is left at the best-validation epoch's
/// parameters (running statistics frozen at that point); the report carries
/// one row per epoch and the final metrics at the restored checkpoint.
pub fn train(
    net: &mut Network<f32>,
    dataset: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<RunReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let (train_set, val_set) = resolve_val_split(dataset, config.val)?;
    let master = SplitMix64::new(config.seed);
    let mut shuffle_rng = master.derive(1);
    let mut mask_rng = master.derive(2);

    let mut velocity = net.zero_grads();
    let mut rows: Vec<EpochRow> = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Network<f32>)> = None;

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let started = Instant::now();
        let mut loss_sum = 0.0f64;
        let mut wrong = 0usize;
        let mut seen = 0usize;
        for (bi, (x, labels)) in
            batches(&train_set, config.batch_size, config.shuffle, &mut shuffle_rng)?.enumerate()
        {
            let masks = net.sample_step_masks(x.n(), &mut mask_rng)?;
            let (logits, cache) = net.forward_train(&x, &masks)?;
            let (loss, grad_logits) = softmax_xent(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let preds = argmax_classes(&logits)?;
            wrong += preds.iter().zip(labels.iter()).filter(|(p, l)| p != l).count();
            seen += labels.len();
            loss_sum += loss as f64 * labels.len() as f64;
            let grads = net.backward(&cache, &masks, &grad_logits)?;
            sgd_step(net, &grads, &mut velocity, lr, config.momentum, config.weight_decay)?;
            net.update_running(&cache);
        }
        let train_loss = loss_sum / seen as f64;
        let train_err = wrong as f64 / seen as f64;
        let val_err = match &val_set {
            Some(v) => Some(evaluate(net, v, config.batch_size)?),
            None => None,
        };
        let test_err = match test_set {
            Some(t) if config.eval_test_each_epoch => Some(evaluate(net, t, config.batch_size)?),
            _ => None,
        };
        rows.push(EpochRow {
            epoch,
            lr,
            train_loss,
            train_err,
            val_err,
            test_err,
            seconds: started.elapsed().as_secs_f64(),
        });
        // Checkpoint criterion: validation error when a split exists,
        // otherwise training loss.
        let metric = val_err.unwrap_or(train_loss);
        if best.as_ref().map_or(true, |(m, _, _)| metric < *m) {
            best = Some((metric, epoch, net.clone()));
        }
    }

    let (_, best_epoch, snapshot) = best.expect("at least one epoch ran");
    *net = snapshot;
    let final_val_err = match &val_set {
        Some(v) => Some(evaluate(net, v, config.batch_size)?),
        None => None,
    };
    let final_test_err = match test_set {
        Some(t) => Some(evaluate(net, t, config.batch_size)?),
        None => None,
    };
    Ok(RunReport {
        seed: config.seed,
        epochs: rows,
        best_epoch,
        final_val_err,
        final_test_err,
        config_hash: config_hash(config),
        init_desc: format!(
            "conv weights ~ normal(0, {}^2), bias 0, gamma 1, beta 0, running stats (0, 1)",
            net.spec.init_std
        ),
    })
}

/// Independent runs over several seeds: same data and config, fresh
/// initialization and shuffling per seed. Failures are reported alongside
/// the aggregate over the runs that completed.
pub fn run_seeds(
    spec: &NetworkSpec,
    dataset: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<(Vec<(u64, Result<RunReport>)>, AggregateReport)> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut cfg = config.clone();
        cfg.seed = seed;
        let run = Network::<f32>::build(spec, &mut SplitMix64::new(seed).derive(0))
            .and_then(|mut net| train(&mut net, dataset, test_set, &cfg));
        runs.push((seed, run));
    }
    let mut errors = Vec::new();
    let mut failed = Vec::new();
    for (seed, run) in &runs {
        match run {
            Ok(report) => {
                if let Some(e) = report.final_metric() {
                    errors.push(e);
                }
            }
            Err(e) => failed.push(format!("seed {seed}: {e}")),
        }
    }
    let agg = AggregateReport::from_errors(seeds.to_vec(), errors, failed);
    Ok((runs, agg))
}
