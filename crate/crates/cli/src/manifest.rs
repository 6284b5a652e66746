use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tagslice::{Error, Result};

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::io(path, e)
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

/// Written as `manifest.json` next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<OutputDigest>,
    pub wall_time_ms: u128,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let mut file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| io_error(path, e))?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        hasher.update(&buf[..n]);
    }
    Ok(InputDigest {
        path: path.display().to_string(),
        bytes,
        sha256: hex(&hasher.finalize()),
    })
}

/// Collects outputs of one command run and writes them with a manifest.
pub struct Run {
    started: Instant,
    subcommand: &'static str,
    seed: Option<u64>,
    threads: usize,
    config: serde_json::Value,
    inputs: Vec<InputDigest>,
    outputs: Vec<OutputDigest>,
    dir: std::path::PathBuf,
}

impl Run {
    pub fn start(
        subcommand: &'static str,
        dir: &Path,
        seed: Option<u64>,
        config: impl Serialize,
    ) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Self {
            started: Instant::now(),
            subcommand,
            seed,
            threads: rayon::current_num_threads(),
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            dir: dir.to_path_buf(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn path(&self, file: &str) -> std::path::PathBuf {
        self.dir.join(file)
    }

    pub fn write_bytes(&mut self, file: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(file);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| io_error(&path, e))?);
        w.write_all(bytes).map_err(|e| io_error(&path, e))?;
        w.flush().map_err(|e| io_error(&path, e))?;
        self.record(file)
    }

    pub fn write_json(&mut self, file: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write_bytes(file, &text)
    }

    /// Registers a file some other writer already produced in the directory.
    pub fn record(&mut self, file: &str) -> Result<()> {
        let d = digest_file(&self.path(file))?;
        self.outputs.push(OutputDigest {
            file: file.to_string(),
            sha256: d.sha256,
        });
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            threads: self.threads,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_ms: self.started.elapsed().as_millis(),
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))
    }
}
