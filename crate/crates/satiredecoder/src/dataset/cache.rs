//! Content-addressed, write-once response cache: one file per key at
//! `cache_dir/role/model_name/digest-temperature`, human-inspectable for
//! debugging agent outputs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::backends::Role;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A put found different bytes already stored under the same key. This
    /// signals a nondeterministic backend at a pinned seed or a fixture bug.
    #[error("cache conflict at {path}: existing entry has different bytes")]
    Conflict { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheKey {
    pub role: Role,
    pub model_name: String,
    /// Full sha256 hex of the canonical request bytes.
    pub input_digest: String,
    /// 0.0 for temperature-free roles.
    pub temperature: f64,
}

fn sanitize_component(raw: &str) -> String {
    raw.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl CacheKey {
    pub fn relative_path(&self) -> PathBuf {
        PathBuf::from(self.role.as_str())
            .join(sanitize_component(&self.model_name))
            .join(format!("{}-{}", self.input_digest, self.temperature))
    }
}

#[derive(Debug)]
pub struct FileCache {
    root: PathBuf,
    next_tmp: AtomicU64,
}

impl FileCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            next_tmp: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root.join(key.relative_path())
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<Vec<u8>>, CacheError> {
        let path = self.path_for(key);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(CacheError::Io { path, source }),
        }
    }

    /// Write-once: putting identical bytes under an existing key is a
    /// no-op; different bytes are a conflict. Writes go through a
    /// temporary file and an atomic rename.
    pub fn put(&self, key: &CacheKey, bytes: &[u8]) -> Result<(), CacheError> {
        let path = self.path_for(key);
        if let Some(existing) = self.get(key)? {
            if existing == bytes {
                return Ok(());
            }
            return Err(CacheError::Conflict { path });
        }
        let parent = path.parent().expect("cache paths have parents");
        std::fs::create_dir_all(parent).map_err(|source| CacheError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
        let tmp = parent.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            self.next_tmp.fetch_add(1, Ordering::SeqCst)
        ));
        std::fs::write(&tmp, bytes).map_err(|source| CacheError::Io {
            path: tmp.clone(),
            source,
        })?;
        std::fs::rename(&tmp, &path).map_err(|source| CacheError::Io { path, source })
    }
}
