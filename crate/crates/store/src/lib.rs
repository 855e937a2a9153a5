//! Session archives and object storage.
//!
//! A session archive is a standard zip file with a `manifest.json` at its
//! root followed by the task recordings it lists. Archives land in the
//! patient bucket and are expanded into the temporary bucket for analysis.
//! [`ObjectStore`] abstracts the two buckets over a local directory tree
//! ([`LocalStore`]) or an S3-compatible service ([`S3Store`]).

pub mod archive;
mod crypto;
mod error;
mod key;
mod local;
mod s3;

use std::sync::Arc;

pub use archive::{
    pack_session, read_manifest, unpack_session, SessionManifest, TaskEntry, UnpackLimits, UnpackedSession,
    MANIFEST_NAME, SCHEMA_VERSION,
};
pub use crypto::EncryptionKey;
pub use error::{ArchiveError, StoreError};
pub use key::{BucketRole, ObjectKey};
pub use local::LocalStore;
pub use s3::{S3Config, S3Credentials, S3Store};

/// Byte-level object storage shared by the API and every worker.
///
/// Implementations must make `put` atomic (readers see the old content or
/// the new content, never a mix) and `delete` idempotent.
pub trait ObjectStore: Send + Sync {
    fn put(&self, key: &ObjectKey, bytes: &[u8]) -> Result<(), StoreError>;

    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError>;

    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError>;

    /// Keys in `role` whose path starts with `prefix`, sorted by path.
    fn list(&self, role: BucketRole, prefix: &str) -> Result<Vec<ObjectKey>, StoreError>;

    fn exists(&self, key: &ObjectKey) -> Result<bool, StoreError> {
        match self.get(key) {
            Ok(_) => Ok(true),
            Err(StoreError::NotFound(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Deletes every key under `prefix`, returning how many were removed.
    fn delete_prefix(&self, role: BucketRole, prefix: &str) -> Result<usize, StoreError> {
        let keys = self.list(role, prefix)?;
        for key in &keys {
            self.delete(key)?;
        }
        Ok(keys.len())
    }
}

impl<T: ObjectStore + ?Sized> ObjectStore for Arc<T> {
    fn put(&self, key: &ObjectKey, bytes: &[u8]) -> Result<(), StoreError> {
        (**self).put(key, bytes)
    }

    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        (**self).get(key)
    }

    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
        (**self).delete(key)
    }

    fn list(&self, role: BucketRole, prefix: &str) -> Result<Vec<ObjectKey>, StoreError> {
        (**self).list(role, prefix)
    }

    fn exists(&self, key: &ObjectKey) -> Result<bool, StoreError> {
        (**self).exists(key)
    }

    fn delete_prefix(&self, role: BucketRole, prefix: &str) -> Result<usize, StoreError> {
        (**self).delete_prefix(role, prefix)
    }
}
