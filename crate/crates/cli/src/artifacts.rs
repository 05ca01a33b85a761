//! Output directory bookkeeping. Every command records what it wrote in
//! `manifest.json`, with the hashes tying outputs to their inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use tabguide::persist::sha256_hex;

/// Identifies the inputs an artifact was produced from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_hash: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    #[serde(flatten)]
    provenance: &'a Provenance,
    files: &'a BTreeMap<String, String>,
}

pub struct OutputDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Buffers whatever `f` writes and stores it under `name`.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn finish(self, command: &str, provenance: &Provenance) -> Result<()> {
        let m = Manifest {
            command,
            provenance,
            files: &self.files,
        };
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        let p = self.path("manifest.json");
        std::fs::write(&p, s).with_context(|| format!("writing {}", p.display()))
    }
}

/// Report body with the provenance fields alongside.
#[derive(Serialize)]
pub struct Stamped<'a, T: Serialize> {
    #[serde(flatten)]
    pub provenance: &'a Provenance,
    #[serde(flatten)]
    pub body: T,
}
