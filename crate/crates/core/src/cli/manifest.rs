//! Stage records for resumable pipelines.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub params: String,
    /// Input file name to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageRecord>,
}

pub fn file_hash(path: &Path) -> Result<String> {
    let mut f =
        fs::File::open(path).map_err(|e| Error::File { path: path.display().to_string(), message: e.to_string() })?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Key under which a file is recorded: its file name.
pub fn file_key(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::File { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Replaces the record of the same name, keeping the original position.
    pub fn put(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|s| s.name == record.name) {
            Some(slot) => *slot = record,
            None => self.stages.push(record),
        }
    }

    /// Whether `name` ran with `params` on exactly these inputs and its outputs are intact.
    pub fn is_current(&self, name: &str, params: &str, inputs: &BTreeMap<String, String>, out_dir: &Path) -> bool {
        let Some(rec) = self.get(name) else { return false };
        if rec.params != params || &rec.inputs != inputs {
            return false;
        }
        rec.outputs.iter().all(|(file, hash)| {
            let p = out_dir.join(file);
            p.exists() && file_hash(&p).map(|h| &h == hash).unwrap_or(false)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        fs::write(&p, "abc").unwrap();
        assert_eq!(file_hash(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn currency_tracks_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.json");
        fs::write(&out, "{}").unwrap();
        let mut m = Manifest::default();
        let inputs = BTreeMap::from([("in.csv".to_string(), "00".to_string())]);
        m.put(StageRecord {
            name: "s".into(),
            params: "p".into(),
            inputs: inputs.clone(),
            outputs: BTreeMap::from([("o.json".to_string(), file_hash(&out).unwrap())]),
        });
        assert!(m.is_current("s", "p", &inputs, dir.path()));
        assert!(!m.is_current("s", "q", &inputs, dir.path()));
        fs::write(&out, "{ }").unwrap();
        assert!(!m.is_current("s", "p", &inputs, dir.path()));
    }
}
