use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Collects the files a command writes and emits `run_manifest.json` last.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct InputInfo {
    pub path: String,
    pub sha256: String,
    pub rows_read: usize,
    pub rejected_rows: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    config_hash: String,
    config: &'a RunConfig,
    input: Option<&'a InputInfo>,
    outputs: &'a [String],
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.into());
        Ok(())
    }

    /// Header is written even when there are no rows.
    pub fn csv<S: Serialize>(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = S>) -> Result<()> {
        let path = self.path(name);
        let csv_err = |source| CliError::Csv { path: path.clone(), source };
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.into());
        Ok(())
    }

    /// Registers a file written by other means.
    pub fn record(&mut self, name: &str) {
        self.written.push(name.into());
    }

    pub fn finish(mut self, command: &str, config: &RunConfig, input: Option<&InputInfo>) -> Result<()> {
        self.written.push("run_manifest.json".into());
        let manifest = Manifest {
            tool: "fpa",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: config.seed,
            config_hash: config.hash(),
            config,
            input,
            outputs: &self.written,
        };
        let path = self.path("run_manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}
