//! `cmsc eval`: misclassification rate of a checkpoint on a test split.

use cmsc::error::Result;
use cmsc::net::checkpoint::load_checkpoint;
use cmsc::train::evaluate;

use crate::cli::EvalArgs;
use crate::datasets::load_test_split;

pub fn run(args: &EvalArgs) -> Result<i32> {
    let (net, meta) = load_checkpoint(&args.checkpoint)?;
    let test = load_test_split(
        args.dataset,
        &args.data_dir,
        meta.normalization.clone(),
        args.synth_test,
    )?;
    let err = evaluate(&net, &test, args.batch_size)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "checkpoint": args.checkpoint,
            "dataset": args.dataset.as_str(),
            "split": "test",
            "samples": test.len(),
            "error_rate": err,
            "trained_on": meta.dataset,
        }))
        .expect("json")
    );
    Ok(0)
}
