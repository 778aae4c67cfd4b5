//! Run directory with a checksummed manifest. Artifacts are held in memory
//! until the command succeeds, so a failed run leaves nothing behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
struct Entry {
    sha256: String,
    bytes: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    artifacts: &'a BTreeMap<String, Entry>,
}

pub struct Artifacts {
    dir: PathBuf,
    files: BTreeMap<String, Vec<u8>>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Artifacts {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.files.insert(name.to_string(), bytes.to_vec());
        Ok(())
    }

    /// Writes whatever `fill` puts into the buffer.
    pub fn write_with(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|source| CliError::Io {
            action: "format",
            path: self.dir.join(name),
            source,
        })?;
        self.write(name, &buf)
    }

    pub fn csv<S: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = S>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let buf = w.into_inner().map_err(|e| CliError::Io {
            action: "format",
            path: self.dir.join(name),
            source: e.into_error(),
        })?;
        self.write(name, &buf)
    }

    pub fn json<S: Serialize + ?Sized>(&mut self, name: &str, value: &S) -> Result<(), CliError> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.write(name, &buf)
    }

    pub fn jsonl<S: Serialize>(&mut self, name: &str, rows: &[S]) -> Result<(), CliError> {
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        self.write(name, &buf)
    }

    /// Writes every artifact plus `manifest.json`; returns the artifact names.
    pub fn finish(self, command: &str, seed: u64) -> Result<Vec<String>, CliError> {
        let io = |action, path: PathBuf| move |source| CliError::Io { action, path, source };
        std::fs::create_dir_all(&self.dir).map_err(io("create", self.dir.clone()))?;
        let mut entries = BTreeMap::new();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            std::fs::write(&path, bytes).map_err(io("write", path.clone()))?;
            entries.insert(
                name.clone(),
                Entry {
                    sha256: hex(&Sha256::digest(bytes)),
                    bytes: bytes.len(),
                },
            );
        }
        let manifest = Manifest {
            command,
            seed,
            artifacts: &entries,
        };
        let mut buf = serde_json::to_vec_pretty(&manifest)?;
        buf.push(b'\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, buf).map_err(io("write", path.clone()))?;
        Ok(entries.into_keys().collect())
    }
}
