use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    /// Contains timings, so the hash is expected to change between runs.
    pub volatile: bool,
}

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub wallclock_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hashes(paths: &[PathBuf], volatile: &[PathBuf], root: Option<&Path>) -> Result<Vec<FileHash>, CliError> {
    let mut out = paths
        .iter()
        .map(|p| {
            let shown = root.and_then(|r| p.strip_prefix(r).ok()).unwrap_or(p);
            Ok(FileHash {
                path: shown.display().to_string(),
                sha256: sha256_file(p)?,
                volatile: volatile.contains(p),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

impl Manifest {
    /// Output paths are recorded relative to `root`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        command: &str,
        root: &Path,
        seed: u64,
        config_fingerprint: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        volatile: &[PathBuf],
        wallclock_s: f64,
    ) -> Result<Self, CliError> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_fingerprint: config_fingerprint.to_string(),
            inputs: hashes(inputs, &[], None)?,
            outputs: hashes(outputs, volatile, Some(root))?,
            wallclock_s,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Output hashes that must be reproducible.
    pub fn stable_outputs(&self) -> Vec<&FileHash> {
        self.outputs.iter().filter(|f| !f.volatile).collect()
    }
}
