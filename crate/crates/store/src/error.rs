use thiserror::Error;

use crate::ObjectKey;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("object not found: {0}")]
    NotFound(ObjectKey),

    #[error("invalid object key: {0}")]
    InvalidKey(String),

    #[error("storage I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("object {0} failed integrity check")]
    Integrity(ObjectKey),

    #[error("remote store error: {0}")]
    Remote(String),
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    /// The archive cannot be accepted. Nothing has been written.
    #[error("malformed archive: {0}")]
    Malformed(String),

    #[error("archive expands past the {cap} byte limit")]
    TooLarge { cap: u64 },

    /// Manifest and supplied files disagree (packing side).
    #[error("manifest inconsistent with files: {0}")]
    Inconsistent(String),

    #[error(transparent)]
    Store(#[from] StoreError),
}
