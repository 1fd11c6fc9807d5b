//! Provenance sidecars. Every command prints a manifest to stdout, and
//! every file output gets `<file>.manifest.json` next to it, so a result
//! can always be traced back to the exact invocation that produced it and
//! rerun bit-for-bit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use eadyn_core::error::{Error, Result};
use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Fully resolved parameters, defaults and overrides alike.
    pub params: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

pub struct ManifestBuilder {
    command: String,
    params: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            params: serde_json::Value::Null,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seeds.push(seed);
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Write the sidecar next to each output file and print the manifest.
    pub fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            params: self.params,
            seeds: self.seeds,
            inputs: self.inputs.iter().map(display_path).collect(),
            outputs: self.outputs.iter().map(display_path).collect(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::invalid(format!("manifest serialization failed: {e}")))?;
        for out in &self.outputs {
            std::fs::write(manifest_path(out), &text)?;
        }
        println!("{text}");
        Ok(())
    }
}

fn display_path(p: &PathBuf) -> String {
    p.display().to_string()
}

/// `trace.csv` -> `trace.csv.manifest.json`; appending rather than swapping
/// the extension keeps sidecars distinct when outputs share a stem.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// First line of every CSV output: a comment pointing at the sidecar.
pub fn csv_manifest_comment(output: &Path) -> String {
    format!(
        "# manifest: {}\n",
        manifest_path(output)
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
    )
}
