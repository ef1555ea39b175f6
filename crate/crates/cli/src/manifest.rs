//! Run manifest: which stage read and wrote which file, with digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_digest: String,
    pub started_ms: u128,
    pub finished_ms: u128,
    /// relative path -> sha256
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_path: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> std::io::Result<String> {
    Ok(digest_bytes(&std::fs::read(path)?))
}

impl RunManifest {
    pub fn load_or_new(out: &Path, fresh: impl FnOnce() -> RunManifest) -> std::io::Result<Self> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(fresh());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Replaces an earlier record of the same stage, otherwise appends.
    pub fn record(&mut self, rec: StageRecord) {
        match self.stages.iter_mut().find(|s| s.stage == rec.stage) {
            Some(slot) => *slot = rec,
            None => self.stages.push(rec),
        }
    }

    pub fn save(&self, out: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest is serializable");
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(MANIFEST_FILE), text + "\n")
    }
}

/// Collects digests while a stage runs.
pub struct StageLog {
    root: PathBuf,
    rec: StageRecord,
}

impl StageLog {
    pub fn start(root: &Path, stage: &str, config_digest: &str) -> Self {
        Self {
            root: root.to_path_buf(),
            rec: StageRecord {
                stage: stage.into(),
                config_digest: config_digest.into(),
                started_ms: now_ms(),
                finished_ms: 0,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        }
    }

    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let d = digest_file(path)?;
        self.rec.inputs.insert(self.key(path), d);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> std::io::Result<()> {
        let d = digest_file(path)?;
        self.rec.outputs.insert(self.key(path), d);
        Ok(())
    }

    pub fn finish(mut self) -> StageRecord {
        self.rec.finished_ms = now_ms();
        self.rec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_digest_is_the_known_constant() {
        assert_eq!(digest_bytes(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn rerecording_a_stage_keeps_one_entry() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest {
            run_id: "r".into(),
            config_path: "default".into(),
            seed: 7,
            seeds: BTreeMap::new(),
            stages: vec![],
        };
        let file = dir.path().join("a.txt");
        std::fs::write(&file, "x").unwrap();
        for _ in 0..2 {
            let mut log = StageLog::start(dir.path(), "cluster", "c");
            log.output(&file).unwrap();
            m.record(log.finish());
        }
        assert_eq!(m.stages.len(), 1);
        assert_eq!(m.stages[0].outputs["a.txt"], digest_bytes(b"x"));
        m.save(dir.path()).unwrap();
        let back = RunManifest::load_or_new(dir.path(), || unreachable!()).unwrap();
        assert_eq!(back, m);
    }
}
