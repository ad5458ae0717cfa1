//! Output files: versioned CSV tables, JSON documents, PGM images and the
//! run manifest every output points back to.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of one command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub code_version: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix_secs: f64,
    pub wall_clock_secs: f64,
}

/// Collects outputs written into one directory and finally writes the
/// manifest.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    command: String,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started: SystemTime,
    clock: Instant,
}

impl OutputDir {
    pub fn create(dir: &Path, command: &str, config: &impl Serialize, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn add_input(&mut self, input: impl Into<String>) {
        self.inputs.push(input.into());
    }

    fn record(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.into());
        self.path(name)
    }

    /// Writes a CSV table preceded by `#` lines naming its schema and the
    /// manifest.
    pub fn write_csv<R: Serialize>(&mut self, name: &str, schema: &str, rows: &[R]) -> Result<PathBuf> {
        let path = self.record(name);
        let mut buf = Vec::new();
        writeln!(buf, "# schema: {schema}")?;
        writeln!(buf, "# manifest: {MANIFEST_FILE}")?;
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        std::fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, schema: &str, value: &T) -> Result<PathBuf> {
        let path = self.record(name);
        let doc = serde_json::json!({
            "schema": schema,
            "manifest": MANIFEST_FILE,
            "data": value,
        });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.record(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_pgm(&mut self, name: &str, pixels: &[f64], width: usize, height: usize) -> Result<PathBuf> {
        let bytes = pgm_bytes(pixels, width, height);
        self.write_bytes(name, &bytes)
    }

    /// Writes the manifest; call last.
    pub fn finish(self) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix_secs: self
                .started
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            wall_clock_secs: self.clock.elapsed().as_secs_f64(),
        };
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}

/// Binary 8-bit PGM of values in `[0, 1]`.
pub fn pgm_bytes(pixels: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
