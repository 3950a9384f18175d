//! Shared output helpers: deterministic file writing and CSV formatting.

use crate::{runtime_err, CliError};
use std::path::Path;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(runtime_err)
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(runtime_err)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime_err)?;
    text.push('\n');
    write_file(path, &text)
}

/// Shortest round-trip float formatting for CSV cells.
pub fn csv_f64(x: f64) -> String {
    format!("{x}")
}

pub fn csv_opt_f64(x: Option<f64>) -> String {
    x.map(csv_f64).unwrap_or_default()
}
