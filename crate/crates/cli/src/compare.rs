//! Column-wise comparison of two result CSVs.

use std::path::Path;

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnDiff {
    pub column: String,
    /// `max |a - b| / max(|a|, |b|)` over the column; `None` for text
    /// columns, which must match exactly.
    pub max_rel_diff: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub rows: usize,
    pub tolerance: f64,
    pub columns: Vec<ColumnDiff>,
    pub pass: bool,
}

fn read(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

pub fn compare_files(a: &Path, b: &Path, tolerance: f64) -> Result<CompareReport, CliError> {
    let (ha, ra) = read(a)?;
    let (hb, rb) = read(b)?;
    if ha != hb {
        return Err(CliError::config(format!("schema mismatch: columns {ha:?} vs {hb:?}")));
    }
    if ra.len() != rb.len() {
        return Err(CliError::config(format!(
            "schema mismatch: {} rows vs {} rows",
            ra.len(),
            rb.len()
        )));
    }
    let columns = ha
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let parsed: Option<Vec<(f64, f64)>> = ra
                .iter()
                .zip(&rb)
                .map(|(x, y)| Some((x[j].parse::<f64>().ok()?, y[j].parse::<f64>().ok()?)))
                .collect();
            match parsed {
                Some(pairs) => {
                    let scale = pairs.iter().fold(0.0f64, |m, (x, y)| m.max(x.abs()).max(y.abs()));
                    let diff = pairs.iter().fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                    let rel = if scale > 0.0 { diff / scale } else { diff };
                    ColumnDiff {
                        column: name.clone(),
                        max_rel_diff: Some(rel),
                        pass: rel <= tolerance,
                    }
                }
                None => ColumnDiff {
                    column: name.clone(),
                    max_rel_diff: None,
                    pass: ra.iter().zip(&rb).all(|(x, y)| x[j] == y[j]),
                },
            }
        })
        .collect::<Vec<_>>();
    let pass = columns.iter().all(|c| c.pass);
    Ok(CompareReport {
        rows: ra.len(),
        tolerance,
        columns,
        pass,
    })
}
