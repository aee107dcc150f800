//! CSV ingestion and emission. Header row required, comma-separated, UTF-8,
//! decimal point; an empty field is a missing value (NaN in the column
//! store). Values are written in shortest round-trip form, so write-read
//! cycles are lossless.

use anyhow::{bail, Context, Result};
use std::path::Path;
use trivar::model::Dataset;

/// Read a CSV file into a column store; logs row and missing-cell counts to
/// the diagnostic stream.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .with_context(|| format!("cannot open `{}`", path.display()))?;
    let headers: Vec<String> = reader
        .headers()
        .context("cannot read CSV header")?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    {
        let mut seen = std::collections::HashSet::new();
        for h in &headers {
            if h.is_empty() {
                bail!("empty column name in CSV header");
            }
            if !seen.insert(h) {
                bail!("duplicate column `{h}` in CSV header");
            }
        }
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    let mut missing = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("cannot read CSV row {}", row_idx + 2))?;
        for (col_idx, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                cols[col_idx].push(f64::NAN);
                missing += 1;
            } else {
                let value: f64 = field.parse().with_context(|| {
                    format!(
                        "cannot parse `{field}` as a number at row {}, column `{}`",
                        row_idx + 2,
                        headers[col_idx]
                    )
                })?;
                cols[col_idx].push(value);
            }
        }
    }
    let n = cols.first().map_or(0, |c| c.len());
    eprintln!(
        "loaded {} rows, {} columns from `{}` ({missing} missing cells)",
        n,
        headers.len(),
        path.display()
    );
    let mut ds = Dataset::new();
    for (name, col) in headers.into_iter().zip(cols) {
        ds.add_column(name, col)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    Ok(ds)
}

/// Write the dataset as CSV (missing values as empty fields). The write is
/// atomic: a temporary file is renamed into place.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    out.push_str(&data.names().join(","));
    out.push('\n');
    let n = data.n();
    let cols: Vec<&[f64]> = data
        .names()
        .iter()
        .map(|name| data.column(name).unwrap())
        .collect();
    for i in 0..n {
        for (j, col) in cols.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let v = col[i];
            if !v.is_nan() {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    crate::atomic_write(path, out.as_bytes())
}
