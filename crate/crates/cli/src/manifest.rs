//! Output directories and their `manifest.toml`: the command line, the
//! resolved config, and SHA-256 digests of every input and output file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub config: RunConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects inputs and outputs of one run.
pub struct Run {
    out: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Run {
    pub fn new(out: &Path) -> Result<Run> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run { out: out.to_path_buf(), inputs: Vec::new(), outputs: Vec::new() })
    }

    /// Reads an input file, recording its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let path = path.display().to_string();
        if !self.inputs.iter().any(|d| d.path == path) {
            self.inputs.push(FileDigest { path, sha256: sha256_hex(&bytes) });
        }
        Ok(bytes)
    }

    pub fn read_text(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.read(path)?).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.outputs.push(FileDigest { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    /// Records a file some library call already wrote under the output dir.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let p = self.path(name);
        let bytes = fs::read(&p).with_context(|| format!("reading back {}", p.display()))?;
        self.outputs.push(FileDigest { path: name.to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    /// Writes `config.toml` and `manifest.toml`.
    pub fn finish(mut self, cfg: &RunConfig, argv: &[String]) -> Result<Manifest> {
        self.write("config.toml", cfg.to_toml()?.as_bytes())?;
        let m = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: argv.to_vec(),
            inputs: self.inputs,
            outputs: self.outputs,
            config: cfg.clone(),
        };
        let text = toml::to_string(&m).context("serializing manifest")?;
        fs::write(self.out.join("manifest.toml"), text).context("writing manifest.toml")?;
        Ok(m)
    }
}
