//! Command-line front end for the trivar estimation engine: CSV ingestion,
//! TOML run configuration, the end-to-end two-step pipeline, and report /
//! result-document rendering.

use anyhow::{Context, Result};
use std::path::Path;

pub mod config;
pub mod csvio;
pub mod describe;
pub mod pipeline;
pub mod report;
pub mod resultdoc;

/// Write bytes via a temporary file renamed into place, so readers never
/// observe a partially written artifact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create directory `{}`", parent.display()))?;
        }
    }
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes)
        .with_context(|| format!("cannot write `{}`", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move `{}` into place", path.display()))?;
    Ok(())
}
