use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    pub master_seed: Option<u64>,
    pub version: &'static str,
    pub wall_time_s: f64,
    pub outputs: Vec<(String, String)>,
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

impl RunManifest {
    pub fn new(command: &str, config: String, master_seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            master_seed,
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: 0.0,
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Writes `bytes` to `dir/name` and records its digest.
    pub fn emit(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.outputs.push((name.to_string(), sha256_hex(bytes)));
        Ok(path)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "command: {}", self.command).unwrap();
        writeln!(s, "version: {}", self.version).unwrap();
        match self.master_seed {
            Some(seed) => writeln!(s, "master_seed: {seed}").unwrap(),
            None => writeln!(s, "master_seed: none").unwrap(),
        }
        writeln!(s, "wall_time_s: {}", self.wall_time_s).unwrap();
        for (name, digest) in &self.outputs {
            writeln!(s, "sha256 {name} {digest}").unwrap();
        }
        for note in &self.notes {
            writeln!(s, "note: {note}").unwrap();
        }
        writeln!(s, "--- config ---").unwrap();
        s.push_str(&self.config);
        if !self.config.ends_with('\n') {
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.txt");
        fs::write(&path, self.render()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// The config echo section of a rendered manifest.
pub fn config_echo(manifest: &str) -> Option<&str> {
    manifest.split_once("--- config ---\n").map(|(_, c)| c)
}
