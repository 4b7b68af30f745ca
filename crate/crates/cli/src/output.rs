//! Result tables and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::config::{Command, Settings};
use crate::error::CliError;
use crate::workspace::{sha256_hex, InputFile, SCHEMA_VERSION};

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub rows: usize,
    pub sha256: String,
}

/// Collects the files written by one command.
pub struct Output {
    dir: PathBuf,
    files: Vec<OutputFile>,
    started: Instant,
}

impl Output {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    /// Writes a CSV table with a header row.
    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            if r.len() != header.len() {
                return Err(CliError::Input(format!("internal: row width {} for table {name}", r.len())));
            }
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Input(format!("writing {name}: {e}")))?;
        self.write_bytes(name, &path, &bytes, rows.len())
    }

    pub fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
        bytes.push(b'\n');
        self.write_bytes(name, &path, &bytes, 1)
    }

    /// Registers a file written elsewhere (e.g. a saved workspace table).
    pub fn register(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let rows = bytes.iter().filter(|b| **b == b'\n').count().saturating_sub(1);
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.files.push(OutputFile { file: name, rows, sha256: sha256_hex(&bytes) });
        Ok(())
    }

    fn write_bytes(&mut self, name: &str, path: &Path, bytes: &[u8], rows: usize) -> Result<(), CliError> {
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
        self.files.push(OutputFile { file: name.to_string(), rows, sha256: sha256_hex(bytes) });
        Ok(())
    }

    /// Writes `manifest.json`. Directories and timings are left out so that
    /// identical runs produce identical bytes; inputs are identified by hash.
    pub fn finish(
        mut self,
        command: Command,
        settings: &Settings,
        inputs: &[InputFile],
        notes: &[String],
    ) -> Result<Vec<OutputFile>, CliError> {
        let mut parameters = serde_json::to_value(settings).map_err(|e| CliError::Input(e.to_string()))?;
        if let Some(map) = parameters.as_object_mut() {
            map.remove("data_dir");
            map.remove("out_dir");
        }
        log::info!("{} finished in {:.3}s", command.name(), self.started.elapsed().as_secs_f64());
        let manifest = json!({
            "tool": "dides",
            "version": env!("CARGO_PKG_VERSION"),
            "schema_version": SCHEMA_VERSION,
            "command": command.name(),
            "seed": settings.seed,
            "parameters": parameters,
            "inputs": inputs,
            "outputs": self.files,
            "notes": notes,
        });
        let files = self.files.clone();
        self.json("manifest.json", &manifest)?;
        Ok(files)
    }
}

/// Writes `error.json` into `dir` when possible; failures are ignored since
/// the error is also reported on stderr.
pub fn write_error(dir: &Path, err: &CliError) {
    if std::fs::create_dir_all(dir).is_ok() {
        if let Ok(mut bytes) = serde_json::to_vec_pretty(&err.to_json()) {
            bytes.push(b'\n');
            let _ = std::fs::write(dir.join("error.json"), bytes);
        }
    }
}
