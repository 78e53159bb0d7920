//! Run manifests: the resolved configuration of a command plus content
//! hashes of everything it read, written as a loadable config file.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Git-style object hash of `bytes`: SHA-256 over `blob <len>\0` + content.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub settings: Vec<(String, String)>,
    pub inputs: Vec<(PathBuf, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push((path.to_path_buf(), blob_hash(&bytes)));
        Ok(())
    }

    /// Hash of the settings and input hashes together, identifying the run.
    pub fn run_hash(&self) -> String {
        let mut text = self.command.clone();
        for (k, v) in &self.settings {
            text += &format!("\n{k}={v}");
        }
        for (_, h) in &self.inputs {
            text += &format!("\n{h}");
        }
        blob_hash(text.as_bytes())
    }

    /// Comment lines carry the provenance; the remaining lines are a config
    /// file that reproduces the run.
    pub fn render(&self) -> String {
        let mut s = format!("# promptforge {}\n# run {}\n", self.command, self.run_hash());
        for (p, h) in &self.inputs {
            s += &format!("# input {h} {}\n", p.display());
        }
        for (k, v) in &self.settings {
            s += &format!("{k}={v}\n");
        }
        s
    }
}
