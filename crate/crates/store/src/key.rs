use std::fmt;

use serde::{Deserialize, Serialize};

use crate::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketRole {
    /// Durable uploads, one archive per session.
    Patient,
    /// Expanded session files awaiting analysis.
    Temporary,
}

impl BucketRole {
    pub fn as_str(self) -> &'static str {
        match self {
            BucketRole::Patient => "patient",
            BucketRole::Temporary => "temporary",
        }
    }

    pub const ALL: [BucketRole; 2] = [BucketRole::Patient, BucketRole::Temporary];
}

/// Location of an object: a bucket role plus a relative `/`-separated path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawKey")]
pub struct ObjectKey {
    bucket_role: BucketRole,
    path: String,
}

#[derive(Deserialize)]
struct RawKey {
    bucket_role: BucketRole,
    path: String,
}

impl TryFrom<RawKey> for ObjectKey {
    type Error = StoreError;

    fn try_from(raw: RawKey) -> Result<Self, StoreError> {
        ObjectKey::new(raw.bucket_role, raw.path)
    }
}

impl ObjectKey {
    /// Paths must be non-empty, relative, and free of empty, `.` and `..`
    /// segments, backslashes and control characters.
    pub fn new(bucket_role: BucketRole, path: impl Into<String>) -> Result<Self, StoreError> {
        let path = path.into();
        validate_path(&path)?;
        Ok(Self { bucket_role, path })
    }

    pub fn patient(path: impl Into<String>) -> Result<Self, StoreError> {
        Self::new(BucketRole::Patient, path)
    }

    pub fn temporary(path: impl Into<String>) -> Result<Self, StoreError> {
        Self::new(BucketRole::Temporary, path)
    }

    pub fn bucket_role(&self) -> BucketRole {
        self.bucket_role
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// Appends a relative path below this key.
    pub fn join(&self, child: &str) -> Result<Self, StoreError> {
        Self::new(self.bucket_role, format!("{}/{}", self.path, child))
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.bucket_role.as_str(), self.path)
    }
}

pub(crate) fn validate_path(path: &str) -> Result<(), StoreError> {
    let bad = |why: &str| Err(StoreError::InvalidKey(format!("{path:?}: {why}")));
    if path.is_empty() {
        return bad("empty path");
    }
    if path.starts_with('/') {
        return bad("absolute path");
    }
    if path.chars().any(|c| c == '\\' || c.is_control()) {
        return bad("backslash or control character");
    }
    for segment in path.split('/') {
        match segment {
            "" => return bad("empty segment"),
            "." | ".." => return bad("traversal segment"),
            _ => {}
        }
    }
    Ok(())
}
