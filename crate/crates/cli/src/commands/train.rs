//! `cmsc train`: full training runs with per-seed report directories and an
//! aggregate summary.

use std::time::Instant;

use cmsc::error::{Error, Result};
use cmsc::net::checkpoint::{save_checkpoint, CheckpointMeta};
use cmsc::net::Network;
use cmsc::rng::SplitMix64;
use cmsc::train::{config_hash, train, AggregateReport, TrainConfig, ValSplit};

use crate::cli::TrainArgs;
use crate::commands::{metadata_json, parse_seeds, resolve_spec, write_json, write_text};
use crate::datasets::load_train_test;

fn parse_val(s: &str) -> Result<ValSplit> {
    match s {
        "auto" => Ok(ValSplit::Auto),
        "none" => Ok(ValSplit::None),
        other => {
            if let Ok(n) = other.parse::<usize>() {
                return Ok(ValSplit::LastN(n));
            }
            if let Ok(f) = other.parse::<f64>() {
                return Ok(ValSplit::Fraction(f));
            }
            Err(Error::Config(format!(
                "bad --val '{other}': expected auto, none, a count or a fraction"
            )))
        }
    }
}

pub fn run(args: &TrainArgs) -> Result<i32> {
    let started = Instant::now();
    let data = load_train_test(args.dataset, &args.data_dir, args.synth_train, args.synth_test)?;
    let mut train_set = data.train;
    let test_set = data.test;
    if let Some(limit) = args.limit_train {
        if limit < train_set.len() {
            train_set = train_set.subset(0, limit, train_set.split)?;
        }
    }

    let (mut spec, spec_desc) = resolve_spec(
        &args.net,
        train_set.sample_dims(),
        train_set.class_count,
    )?;
    if spec.input_shape != train_set.sample_dims() {
        return Err(Error::Config(format!(
            "spec expects input {:?} but dataset provides {:?}",
            spec.input_shape,
            train_set.sample_dims()
        )));
    }
    if let Some(rate) = args.dropout {
        spec.downsampler.dropout = Some(rate);
        spec.validate()?;
    }

    let default_epochs = match args.dataset {
        crate::cli::DatasetKind::Mnist | crate::cli::DatasetKind::Synth => 50,
        crate::cli::DatasetKind::Svhn => 40,
        _ => 80,
    };
    let default_batch = match args.dataset {
        crate::cli::DatasetKind::Svhn => 128,
        _ => 100,
    };
    let base_config = TrainConfig {
        lr_initial: args.lr,
        lr_final: args.lr_final,
        lr_steps: args.lr_steps,
        epochs: args.epochs.unwrap_or(default_epochs),
        batch_size: args.batch_size.unwrap_or(default_batch),
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        seed: 0,
        shuffle: !args.no_shuffle,
        val: parse_val(&args.val)?,
        eval_test_each_epoch: !args.no_epoch_test,
    };
    base_config.validate()?;
    let seeds = parse_seeds(&args.seeds)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    write_json(
        &args.out_dir.join("config_echo.json"),
        &serde_json::json!({
            "command": "train",
            "dataset": args.dataset.as_str(),
            "data_dir": args.data_dir,
            "network": spec_desc,
            "spec": spec,
            "train_samples": train_set.len(),
            "test_samples": test_set.len(),
            "seeds": seeds,
            "config": base_config,
            "config_hash": config_hash(&base_config),
            "normalization": train_set.normalization.describe(),
        }),
    )?;

    let mut errors = Vec::new();
    for &seed in &seeds {
        let mut cfg = base_config.clone();
        cfg.seed = seed;
        let seed_dir = args.out_dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir).map_err(|e| Error::io(&seed_dir, e))?;

        let mut net = Network::<f32>::build(&spec, &mut SplitMix64::new(seed).derive(0))?;
        match train(&mut net, &train_set, Some(&test_set), &cfg) {
            Ok(report) => {
                write_text(&seed_dir.join("results.csv"), &report.results_csv())?;
                write_text(&seed_dir.join("timing.csv"), &report.timing_csv())?;
                write_text(&seed_dir.join("summary.json"), &report.summary_json())?;
                let meta = CheckpointMeta {
                    seed,
                    init_desc: report.init_desc.clone(),
                    dataset: Some(args.dataset.as_str().to_string()),
                    normalization: Some(train_set.normalization.clone()),
                };
                save_checkpoint(&net, &meta, &seed_dir.join("best.ckpt"))?;
                let final_err = report.final_metric().unwrap_or(f64::NAN);
                println!(
                    "seed {seed}: test error {:.4} (best epoch {})",
                    report.final_test_err.unwrap_or(f64::NAN),
                    report.best_epoch
                );
                errors.push(final_err);
            }
            // A failing seed aborts the invocation; partial aggregation is
            // the library's run_seeds behavior, the CLI surfaces failures.
            Err(e) => return Err(e),
        }
    }

    let agg = AggregateReport::from_errors(seeds.clone(), errors, Vec::new());
    write_text(&args.out_dir.join("aggregate.json"), &agg.summary_json())?;
    write_json(
        &args.out_dir.join("metadata.json"),
        &metadata_json(started.elapsed().as_secs_f64()),
    )?;
    println!(
        "aggregate over {} seed(s): mean {:.4} +/- {:.4} (best {:.4})",
        agg.completed, agg.mean, agg.std, agg.best
    );
    Ok(0)
}
