use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one completed stage: what went in and what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: String,
    /// Output paths relative to the output directory, with their digests.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Incremental fingerprint over labelled strings and files.
#[derive(Default)]
pub struct Fingerprint {
    hasher: Sha256,
}

impl Fingerprint {
    pub fn new(stage: &str) -> Self {
        let mut f = Fingerprint::default();
        f.add_str("stage", stage);
        f
    }

    pub fn add_str(&mut self, label: &str, value: &str) -> &mut Self {
        for part in [label.as_bytes(), value.as_bytes()] {
            self.hasher.update((part.len() as u64).to_le_bytes());
            self.hasher.update(part);
        }
        self
    }

    pub fn add_json<T: Serialize>(&mut self, label: &str, value: &T) -> &mut Self {
        let text = serde_json::to_string(value).expect("fingerprint input serializes");
        self.add_str(label, &text)
    }

    /// A missing or unreadable input is a data error: some earlier stage or
    /// the configuration is at fault, not this program.
    pub fn add_file(&mut self, path: &Path) -> Result<&mut Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let digest = sha256_bytes(&bytes);
        let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        Ok(self.add_str(&name, &digest))
    }

    pub fn finish(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

impl Manifest {
    pub fn load(out_dir: &Path) -> Manifest {
        let path = out_dir.join(MANIFEST_FILE);
        std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    /// True when the stage ran with the same inputs and its outputs are unchanged on disk.
    pub fn is_fresh(&self, stage: &str, inputs: &str, out_dir: &Path) -> bool {
        match self.stages.get(stage) {
            Some(rec) if rec.inputs == inputs => rec.outputs.iter().all(|(rel, digest)| {
                sha256_file(&out_dir.join(rel)).is_ok_and(|d| d == *digest)
            }),
            _ => false,
        }
    }

    pub fn record(
        &mut self,
        stage: &str,
        inputs: String,
        out_dir: &Path,
        outputs: &[PathBuf],
    ) -> Result<(), CliError> {
        let mut map = BTreeMap::new();
        for p in outputs {
            let rel = p.strip_prefix(out_dir).unwrap_or(p);
            map.insert(rel.to_string_lossy().replace('\\', "/"), sha256_file(p)?);
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                inputs,
                outputs: map,
            },
        );
        Ok(())
    }
}
