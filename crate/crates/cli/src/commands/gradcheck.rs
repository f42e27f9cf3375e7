//! `cmsc grad-check`: every parameter of a built-in micro network against
//! central finite differences. Exit 5 when any layer exceeds the threshold.

use cmsc::error::{Error, Result};
use cmsc::gradcheck::{micro_gradcheck_f32, micro_gradcheck_f64};

use crate::cli::GradCheckArgs;
use crate::commands::{metadata_json, write_json, write_text};
use crate::EXIT_THRESHOLD;

pub fn run(args: &GradCheckArgs) -> Result<i32> {
    let started = std::time::Instant::now();
    let report = match args.bits {
        64 => micro_gradcheck_f64(args.seed)?,
        32 => micro_gradcheck_f32(args.seed)?,
        other => {
            return Err(Error::Config(format!(
                "--bits must be 32 or 64, got {other}"
            )))
        }
    };
    print!("{}", report.table());
    let worst = report.worst().map(|c| c.max_rel_err).unwrap_or(0.0);
    println!(
        "{} layers checked, worst relative error {:.3e}, threshold {:.0e}: {}",
        report.checks.len(),
        worst,
        report.threshold,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join("gradcheck.csv"), &report.table())?;
        write_json(
            &dir.join("config_echo.json"),
            &serde_json::json!({
                "command": "grad-check",
                "bits": args.bits,
                "seed": args.seed,
                "threshold": report.threshold,
            }),
        )?;
        write_json(
            &dir.join("metadata.json"),
            &metadata_json(started.elapsed().as_secs_f64()),
        )?;
    }
    Ok(if report.passed() { 0 } else { EXIT_THRESHOLD })
}
