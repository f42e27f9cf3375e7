//! `cmsc analyze`: gamma-importance and co-adaptation reports from a
//! checkpoint, plus the parameter breakdown, as CSV files for plotting.

use cmsc::analysis::{coadapt_report, count_params, gamma_report};
use cmsc::error::{Error, Result};
use cmsc::net::checkpoint::load_checkpoint;
use cmsc::rng::SplitMix64;
use cmsc::tensor::Tensor4;

use crate::cli::AnalyzeArgs;
use crate::commands::{metadata_json, write_json, write_text};
use crate::datasets::load_test_split;

pub fn run(args: &AnalyzeArgs) -> Result<i32> {
    let started = std::time::Instant::now();
    let (net, meta) = load_checkpoint(&args.checkpoint)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;

    let gamma = gamma_report(&net)?;
    write_text(&args.out_dir.join("gamma.csv"), &gamma.to_csv())?;

    // Probe set for winner histograms: the requested dataset's test split
    // when available, otherwise a seeded Gaussian probe at the input shape.
    let (c, h, w) = net.spec.input_shape;
    let probe_desc;
    let probe = match args.dataset {
        Some(kind) => {
            let test = load_test_split(kind, &args.data_dir, meta.normalization.clone(), args.probe_samples)?;
            let n = test.len().min(args.probe_samples);
            probe_desc = format!("{}:test[..{n}]", kind.as_str());
            test.subset(0, n, test.split)?.images
        }
        None => {
            probe_desc = format!("gaussian noise ({}, {c}, {h}, {w})", args.probe_samples);
            Tensor4::gaussian(
                (args.probe_samples, c, h, w),
                1.0,
                &mut SplitMix64::new(0xC0AD),
            )?
        }
    };
    let coadapt = coadapt_report(&net, &probe, args.batch_size)?;
    write_text(&args.out_dir.join("coadapt_cosine.csv"), &coadapt.cosines_csv())?;
    write_text(&args.out_dir.join("winners.csv"), &coadapt.winners_csv())?;
    write_text(&args.out_dir.join("entropy.csv"), &coadapt.entropy_csv())?;

    let counts = count_params(&net.spec)?;
    let mut params_csv = String::from("path,params\n");
    for row in &counts.rows {
        params_csv.push_str(&format!("{},{}\n", row.path, row.params));
    }
    write_text(&args.out_dir.join("params.csv"), &params_csv)?;

    write_json(
        &args.out_dir.join("config_echo.json"),
        &serde_json::json!({
            "command": "analyze",
            "checkpoint": args.checkpoint,
            "probe": probe_desc,
            "probe_samples": args.probe_samples,
            "total_params": counts.total,
        }),
    )?;
    write_json(
        &args.out_dir.join("metadata.json"),
        &metadata_json(started.elapsed().as_secs_f64()),
    )?;

    println!(
        "wrote gamma.csv, coadapt_cosine.csv, winners.csv, entropy.csv, params.csv to {}",
        args.out_dir.display()
    );
    println!(
        "{} bn units, {} cosine pairs, {} total params",
        gamma.rows.len(),
        coadapt.cosines.len(),
        counts.total
    );
    Ok(0)
}
