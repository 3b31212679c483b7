//! CSV and manifest writers.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Version of the column layout of every CSV written by the tool.
pub const CSV_SCHEMA: u32 = 1;

/// Writes `rows` as CSV preceded by a `# <name> schema v<N>` comment line.
/// An empty slice still produces the header.
pub fn write_csv<T: Serialize>(path: &Path, name: &str, header: &[&str], rows: &[T]) -> Result<()> {
    let mut file =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(file, "# {name} schema v{CSV_SCHEMA}")?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSeed {
    pub instance: String,
    pub seed: u64,
}

/// Everything needed to reproduce the CSV outputs of one command.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub library_version: String,
    pub timestamp: String,
    pub threads: usize,
    pub config: ExperimentConfig,
    pub runs: Vec<RunSeed>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &ExperimentConfig,
        threads: usize,
        runs: Vec<RunSeed>,
    ) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config.hash(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            threads,
            config: config.clone(),
            runs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
