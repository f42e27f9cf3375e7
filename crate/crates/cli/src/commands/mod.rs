//! Subcommand implementations. Each returns the process exit code.

pub mod analyze;
pub mod counts;
pub mod eval;
pub mod gradcheck;
pub mod masks;
pub mod train;

use std::path::Path;

use cmsc::error::{Error, Result};
use cmsc::net::{preset, NetworkSpec, PresetName, WidthProfile};

use crate::cli::NetworkSelection;

pub(crate) fn parse_input_shape(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad input shape '{s}', expected c,h,w")))?;
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "input shape '{s}' must have exactly three components"
        )));
    }
    Ok((parts[0], parts[1], parts[2]))
}

pub(crate) fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|p| p.trim().parse::<u64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad seed list '{s}'")))?;
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    Ok(seeds)
}

/// Resolve the network description: a named preset at the given widths, or
/// a spec file (which carries its own shape).
pub(crate) fn resolve_spec(
    sel: &NetworkSelection,
    input_shape: (usize, usize, usize),
    class_count: usize,
) -> Result<(NetworkSpec, String)> {
    match (&sel.preset, &sel.spec_file) {
        (Some(name), None) => {
            let preset_name: PresetName = name.parse()?;
            let profile = WidthProfile::parse(&sel.width_profile)?;
            let spec = preset(preset_name, &profile, input_shape, class_count)?;
            Ok((spec, format!("{preset_name}@{}", profile.name)))
        }
        (None, Some(path)) => {
            let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let spec = NetworkSpec::from_json(&json)?;
            Ok((spec, format!("spec:{}", path.display())))
        }
        (None, None) => Err(Error::Config(
            "choose a network with --preset or --spec-file".into(),
        )),
        (Some(_), Some(_)) => unreachable!("clap enforces exclusivity"),
    }
}

pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value).expect("json"))
}

/// Timestamps and environment live here, never in result files, so results
/// stay byte-diffable between runs.
pub(crate) fn metadata_json(wall_seconds: f64) -> serde_json::Value {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    serde_json::json!({
        "finished_unix_time": now,
        "wall_seconds": wall_seconds,
        "version": env!("CARGO_PKG_VERSION"),
        "parallel": cmsc::parallel::parallel_enabled(),
    })
}
