//! `cmsc` — train, evaluate and analyze competitive multi-scale convolution
//! networks from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! divergence, 5 threshold failure (grad-check). Failures also emit a
//! machine-readable JSON object on stderr.

mod cli;
mod commands;
mod datasets;

use clap::Parser;
use cmsc::error::Error;

use crate::cli::{Cli, Command};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_THRESHOLD: i32 = 5;

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArg { .. } | Error::Shape { .. } => EXIT_CONFIG,
        Error::Parse { .. } | Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) => EXIT_DATA,
        Error::NonFiniteLoss { .. } | Error::NonFiniteGrad { .. } => EXIT_DIVERGENCE,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match exit_code_for(err) {
        EXIT_CONFIG => "config",
        EXIT_DATA => "data",
        EXIT_DIVERGENCE => "divergence",
        _ => "internal",
    }
}

/// Machine-readable error report, printed to stderr and, when an output
/// directory exists, mirrored into error.json there.
fn report_error(err: &Error, out_dir: Option<&std::path::Path>) -> i32 {
    let code = exit_code_for(err);
    let body = serde_json::json!({
        "error": {
            "kind": error_kind(err),
            "message": err.to_string(),
            "exit_code": code,
        }
    });
    let rendered = serde_json::to_string_pretty(&body).expect("error json");
    eprintln!("{rendered}");
    if let Some(dir) = out_dir {
        if dir.exists() {
            let _ = std::fs::write(dir.join("error.json"), &rendered);
        }
    }
    code
}

fn main() {
    let args = Cli::parse();

    let threads = args
        .threads
        .or_else(|| std::env::var("CMSC_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        if n > 0 {
            // Errors only if a global pool already exists; fine to ignore.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    if args.sequential {
        cmsc::parallel::set_parallel(false);
    }

    let (result, out_dir) = match &args.command {
        Command::Train(a) => (commands::train::run(a), Some(a.out_dir.clone())),
        Command::Eval(a) => (commands::eval::run(a), None),
        Command::GradCheck(a) => (commands::gradcheck::run(a), a.out_dir.clone()),
        Command::CountParams(a) => (commands::counts::run(a), None),
        Command::Masks(a) => (commands::masks::run(a), None),
        Command::Analyze(a) => (commands::analyze::run(a), Some(a.out_dir.clone())),
    };

    match result {
        Ok(code) => std::process::exit(code),
        Err(err) => std::process::exit(report_error(&err, out_dir.as_deref())),
    }
}
