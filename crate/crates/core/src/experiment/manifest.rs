//! Run manifests: which stages completed and the content hash of every
//! artifact they produced.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rollout::dataset::hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL: &str = "roadlab";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: String,
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub completed_unix: u64,
    pub artifacts: Vec<Artifact>,
    /// Free-form facts about the stage (derived seeds, sizes).
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub stages: Vec<StageRecord>,
    /// Set when a stage failed; the stages before it remain valid.
    pub failure: Option<String>,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// SHA-256 of a file, or of a directory as the sorted list of
/// (relative path, file hash) pairs.
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        list_files(path, path, &mut files)?;
        files.sort();
        let mut h = Sha256::new();
        for rel in files {
            let fh = hash_path(&path.join(&rel))?;
            h.update(rel.as_bytes());
            h.update([0]);
            h.update(fh.as_bytes());
            h.update([b'\n']);
        }
        Ok(hex(&h.finalize()))
    } else {
        Ok(hex(&Sha256::digest(std::fs::read(path)?)))
    }
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            list_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("child of root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

impl RunManifest {
    pub fn new(experiment: &str, config_hash: &str, seed: u64) -> Self {
        let t = now_unix();
        Self {
            tool: TOOL.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            experiment: experiment.into(),
            config_hash: config_hash.into(),
            seed,
            created_unix: t,
            updated_unix: t,
            stages: Vec::new(),
            failure: None,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&p, e.to_string()))
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        self.updated_unix = now_unix();
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Replaces any earlier record of the same stage and drops the stages
    /// recorded after it, which depended on the old outputs.
    pub fn record(&mut self, rec: StageRecord) {
        if let Some(i) = self.stages.iter().position(|s| s.name == rec.name) {
            self.stages.truncate(i);
        }
        self.stages.push(rec);
        self.failure = None;
    }

    /// Checks that every artifact exists and matches its hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for s in &self.stages {
            verify_stage(dir, s)?;
        }
        Ok(())
    }
}

pub fn verify_stage(dir: &Path, s: &StageRecord) -> Result<()> {
    for a in &s.artifacts {
        let p = dir.join(&a.path);
        if !p.exists() {
            return Err(Error::Mismatch(format!("stage {}: missing artifact {}", s.name, a.path)));
        }
        let h = hash_path(&p)?;
        if h != a.sha256 {
            return Err(Error::Mismatch(format!("stage {}: artifact {} changed on disk", s.name, a.path)));
        }
    }
    Ok(())
}

/// Hashes `rel` under `dir` into an artifact entry.
pub fn artifact(dir: &Path, kind: &str, rel: &str) -> Result<Artifact> {
    Ok(Artifact { kind: kind.into(), path: rel.into(), sha256: hash_path(&dir.join(rel))? })
}
