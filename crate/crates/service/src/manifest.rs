//! Run manifest: one record per pipeline stage with content hashes of its
//! inputs and outputs. Paths are relative to the run directory (or as given
//! in the config for external inputs) and nothing time-dependent is stored,
//! so two runs with the same inputs and seed produce identical manifests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub params_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_sha256: String,
    pub seed: u64,
    /// `true` once every stage has completed.
    pub complete: bool,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn new(config_sha256: String, seed: u64) -> Self {
        Manifest {
            format_version: MANIFEST_VERSION,
            config_sha256,
            seed,
            complete: false,
            stages: Vec::new(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Option<Self>, PipelineError> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let manifest = serde_json::from_reader(BufReader::new(File::open(&path)?))
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        Ok(Some(manifest))
    }

    /// Writes through a temporary file so a crash never leaves a truncated
    /// manifest behind.
    pub fn save(&self, run_dir: &Path) -> Result<(), PipelineError> {
        let tmp = run_dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut bytes = serde_json::to_vec_pretty(self).map_err(std::io::Error::from)?;
        bytes.push(b'\n');
        File::create(&tmp)?.write_all(&bytes)?;
        std::fs::rename(&tmp, run_dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Replaces the record of a stage, keeping pipeline order.
    pub fn record(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|s| s.name == record.name) {
            Some(slot) => *slot = record,
            None => self.stages.push(record),
        }
    }

    /// Drops records of the given stages (used for stages after a failure).
    pub fn forget(&mut self, names: &[&str]) {
        self.stages.retain(|s| !names.contains(&s.name.as_str()));
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, PipelineError> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn save_load_and_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("c".into(), 3);
        let stage = |name: &str| StageRecord {
            name: name.into(),
            status: StageStatus::Completed,
            params_sha256: "p".into(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::from([("a.txt".into(), "h".into())]),
            summary: serde_json::Value::Null,
            error: None,
        };
        m.record(stage("ingest"));
        m.record(stage("pool"));
        let mut failed = stage("ingest");
        failed.status = StageStatus::Failed;
        m.record(failed);
        assert_eq!(m.stages[0].status, StageStatus::Failed);
        assert_eq!(m.stages.len(), 2);
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap().unwrap(), m);
        m.forget(&["pool"]);
        assert_eq!(m.stages.len(), 1);
    }
}
