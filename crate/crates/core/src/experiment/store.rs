//! Content-addressed artifact store: `<root>/<digest>/<file>`.
//!
//! Keys are digests of the inputs that produce an artifact. Writing a
//! differing file under an existing key is refused.

use crate::error::{Error, Result};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, key: &str) -> PathBuf {
        self.root.join(key)
    }

    pub fn path(&self, key: &str, name: &str) -> PathBuf {
        self.dir(key).join(name)
    }

    pub fn contains(&self, key: &str, name: &str) -> bool {
        self.path(key, name).is_file()
    }

    pub fn read(&self, key: &str, name: &str) -> Result<Option<Vec<u8>>> {
        match std::fs::read(self.path(key, name)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Reads an artifact that an earlier verb should have produced.
    pub fn require(&self, key: &str, name: &str, what: &str, producer: &str) -> Result<Vec<u8>> {
        self.read(key, name)?.ok_or_else(|| Error::MissingArtifact {
            what: format!("{what} `{key}` ({})", self.path(key, name).display()),
            producer: producer.to_string(),
        })
    }

    /// Writes `bytes` unless an identical file is already present. Returns
    /// whether anything was written.
    pub fn put(&self, key: &str, name: &str, bytes: &[u8]) -> Result<bool> {
        if let Some(existing) = self.read(key, name)? {
            if existing == bytes {
                return Ok(false);
            }
            return Err(Error::Conflict(format!(
                "{} already holds different content",
                self.path(key, name).display()
            )));
        }
        self.replace(key, name, bytes)?;
        Ok(true)
    }

    /// Writes `bytes`, replacing any previous file. For run-local records
    /// such as timings that legitimately differ between runs.
    pub fn replace(&self, key: &str, name: &str, bytes: &[u8]) -> Result<()> {
        let dir = self.dir(key);
        std::fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!(
            ".{name}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, dir.join(name))?;
        Ok(())
    }
}
