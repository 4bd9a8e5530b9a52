use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub command: String,
    pub inputs_digest: String,
    pub outputs: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
    pub seed: Option<u64>,
    pub version: String,
}

/// SHA-256 over the command name, its arguments and the raw bytes of every input file.
pub struct InputDigest(Sha256);

impl InputDigest {
    pub fn new(command: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"command\0");
        h.update(command.as_bytes());
        Self(h)
    }

    pub fn arg(&mut self, name: &str, value: impl std::fmt::Display) {
        self.0.update(format!("\0arg\0{name}={value}").as_bytes());
    }

    pub fn file(&mut self, name: &str, bytes: &[u8]) {
        self.0.update(format!("\0file\0{name}\0{}\0", bytes.len()).as_bytes());
        self.0.update(bytes);
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::input(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn to_json(report: &RunReport) -> CliResult<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(report).map_err(|e| CliError::Numerical(format!("cannot encode report: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}
