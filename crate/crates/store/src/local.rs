use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::key::validate_path;
use crate::{BucketRole, EncryptionKey, ObjectKey, ObjectStore, StoreError};

const STAGING_DIR: &str = ".staging";

/// Object store over a local directory: `root/<bucket_role>/<path>`.
///
/// Puts are staged under `root/.staging` and renamed into place, so a
/// reader never observes a partially written object.
#[derive(Debug, Clone)]
pub struct LocalStore {
    root: PathBuf,
    encryption: Option<EncryptionKey>,
    encrypted: BTreeSet<BucketRole>,
}

impl LocalStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join(STAGING_DIR))?;
        for role in BucketRole::ALL {
            fs::create_dir_all(root.join(role.as_str()))?;
        }
        Ok(Self { root, encryption: None, encrypted: BTreeSet::new() })
    }

    /// Encrypts objects in the given buckets at rest.
    pub fn with_encryption(mut self, key: EncryptionKey, buckets: impl IntoIterator<Item = BucketRole>) -> Self {
        self.encryption = Some(key);
        self.encrypted = buckets.into_iter().collect();
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn file_path(&self, key: &ObjectKey) -> PathBuf {
        let mut p = self.root.join(key.bucket_role().as_str());
        p.extend(key.path().split('/'));
        p
    }

    fn cipher_for(&self, role: BucketRole) -> Option<&EncryptionKey> {
        self.encryption.as_ref().filter(|_| self.encrypted.contains(&role))
    }
}

impl ObjectStore for LocalStore {
    fn put(&self, key: &ObjectKey, bytes: &[u8]) -> Result<(), StoreError> {
        let target = self.file_path(key);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        let sealed;
        let payload = match self.cipher_for(key.bucket_role()) {
            Some(k) => {
                sealed = k.seal(key, bytes);
                &sealed[..]
            }
            None => bytes,
        };
        let staging = self.root.join(STAGING_DIR).join(uuid::Uuid::new_v4().to_string());
        let result = (|| {
            let mut f = fs::File::create(&staging)?;
            f.write_all(payload)?;
            f.sync_all()?;
            fs::rename(&staging, &target)
        })();
        if result.is_err() {
            let _ = fs::remove_file(&staging);
        }
        Ok(result?)
    }

    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        let bytes = match fs::read(self.file_path(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound || e.kind() == io::ErrorKind::NotADirectory => {
                return Err(StoreError::NotFound(key.clone()))
            }
            Err(e) if e.kind() == io::ErrorKind::IsADirectory => {
                return Err(StoreError::NotFound(key.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        match self.cipher_for(key.bucket_role()) {
            Some(k) => k.open(key, &bytes),
            None => Ok(bytes),
        }
    }

    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
        let path = self.file_path(key);
        match fs::remove_file(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        }
        // Prune empty directories up to the bucket root.
        let bucket_root = self.root.join(key.bucket_role().as_str());
        let mut dir = path.parent();
        while let Some(d) = dir {
            if d == bucket_root || fs::remove_dir(d).is_err() {
                break;
            }
            dir = d.parent();
        }
        Ok(())
    }

    fn list(&self, role: BucketRole, prefix: &str) -> Result<Vec<ObjectKey>, StoreError> {
        let bucket_root = self.root.join(role.as_str());
        let mut out = Vec::new();
        let mut stack = vec![bucket_root.clone()];
        while let Some(dir) = stack.pop() {
            let entries = match fs::read_dir(&dir) {
                Ok(e) => e,
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            };
            for entry in entries {
                let entry = entry?;
                let ty = entry.file_type()?;
                if ty.is_dir() {
                    stack.push(entry.path());
                } else if ty.is_file() {
                    let rel = entry.path();
                    let rel = rel.strip_prefix(&bucket_root).expect("walk stays under bucket root");
                    let Some(rel) = rel.to_str() else { continue };
                    let rel = rel.replace(std::path::MAIN_SEPARATOR, "/");
                    if rel.starts_with(prefix) && validate_path(&rel).is_ok() {
                        out.push(ObjectKey::new(role, rel)?);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }
}
