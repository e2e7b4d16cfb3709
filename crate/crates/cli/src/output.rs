use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Full-precision decimal: 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

pub fn write_report(
    dir: &Path,
    task: &str,
    cfg: &ExperimentConfig,
    timings: Value,
    results: Value,
) -> Result<PathBuf, CliError> {
    let report = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "task": task,
        "config": cfg,
        "timings_s": timings,
        "results": results,
    });
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}
