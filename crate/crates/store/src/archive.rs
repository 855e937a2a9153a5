//! Session archive: a zip with `manifest.json` first, then the files the
//! manifest lists, in manifest order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Cursor, Read, Write};

use oromon_core::TaskCatalog;
use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::key::validate_path;
use crate::{ArchiveError, ObjectKey, ObjectStore};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

const MANIFEST_CAP: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub schema_version: u32,
    pub patient_id: String,
    pub client_version: String,
    #[serde(default)]
    pub tasks: Vec<TaskEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task_kind: String,
    pub file_name: String,
    /// Container type reported by the recorder, e.g. `video/webm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mime: Option<String>,
    pub planned_duration_s: f64,
    pub recorded_duration_s: f64,
    #[serde(default)]
    pub retake_count: u32,
    /// Optional ground-truth annotations (JSON lines) for the recording.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar_file: Option<String>,
    /// Source-frame index of a flagged at-rest frame. When absent the first
    /// sampled frame is the neutral reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutral_frame: Option<u64>,
}

impl SessionManifest {
    pub fn new(patient_id: impl Into<String>, client_version: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            patient_id: patient_id.into(),
            client_version: client_version.into(),
            tasks: Vec::new(),
        }
    }

    /// Every file the archive must carry, in manifest order.
    pub fn referenced_files(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for t in &self.tasks {
            out.push(t.file_name.as_str());
            if let Some(s) = &t.sidecar_file {
                out.push(s.as_str());
            }
        }
        out
    }

    fn check_names(&self) -> Result<(), String> {
        let mut kinds = BTreeSet::new();
        for task in &self.tasks {
            if !kinds.insert(task.task_kind.as_str()) {
                return Err(format!("task {:?} listed twice", task.task_kind));
            }
        }
        let mut seen = BTreeSet::new();
        for name in self.referenced_files() {
            validate_path(name).map_err(|e| e.to_string())?;
            if name == MANIFEST_NAME {
                return Err(format!("{MANIFEST_NAME} cannot be a task file"));
            }
            if !seen.insert(name) {
                return Err(format!("file {name:?} listed twice"));
            }
        }
        Ok(())
    }
}

fn entry_options() -> SimpleFileOptions {
    SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644)
}

/// Builds an archive. Every referenced file must be supplied and every
/// supplied file must be referenced. Output is byte-for-byte deterministic.
pub fn pack_session(manifest: &SessionManifest, files: &[(String, Vec<u8>)]) -> Result<Vec<u8>, ArchiveError> {
    manifest.check_names().map_err(ArchiveError::Inconsistent)?;
    let mut by_name: BTreeMap<&str, &[u8]> = BTreeMap::new();
    for (name, bytes) in files {
        if by_name.insert(name.as_str(), bytes.as_slice()).is_some() {
            return Err(ArchiveError::Inconsistent(format!("file {name:?} supplied twice")));
        }
    }
    let referenced = manifest.referenced_files();
    for name in &referenced {
        if !by_name.contains_key(name) {
            return Err(ArchiveError::Inconsistent(format!("manifest references missing file {name:?}")));
        }
    }
    if let Some(extra) = by_name.keys().find(|n| !referenced.contains(n)) {
        return Err(ArchiveError::Inconsistent(format!("file {extra:?} is not in the manifest")));
    }

    let write = || -> zip::result::ZipResult<Vec<u8>> {
        let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
        zip.start_file(MANIFEST_NAME, entry_options())?;
        zip.write_all(&serde_json::to_vec_pretty(manifest).expect("manifest serializes"))?;
        for name in &referenced {
            zip.start_file(*name, entry_options())?;
            zip.write_all(by_name[name])?;
        }
        Ok(zip.finish()?.into_inner())
    };
    write().map_err(|e| ArchiveError::Inconsistent(format!("zip write failed: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnpackLimits {
    /// Upper bound on the total decompressed size of all extracted files.
    pub max_decompressed_bytes: u64,
}

impl Default for UnpackLimits {
    fn default() -> Self {
        Self { max_decompressed_bytes: 2 << 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnpackedSession {
    pub manifest: SessionManifest,
    /// Stored files in manifest order, by archive name.
    pub files: Vec<(String, ObjectKey)>,
}

impl UnpackedSession {
    pub fn key_for(&self, name: &str) -> Option<&ObjectKey> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, k)| k)
    }

    pub fn keys(&self) -> impl Iterator<Item = &ObjectKey> {
        self.files.iter().map(|(_, k)| k)
    }
}

fn malformed(msg: impl Into<String>) -> ArchiveError {
    ArchiveError::Malformed(msg.into())
}

/// Reads and validates the manifest without extracting anything.
pub fn read_manifest(archive: &[u8], catalog: &TaskCatalog) -> Result<SessionManifest, ArchiveError> {
    let mut zip = ZipArchive::new(Cursor::new(archive)).map_err(|e| malformed(format!("not a zip: {e}")))?;
    read_manifest_from(&mut zip, catalog)
}

fn read_manifest_from(
    zip: &mut ZipArchive<Cursor<&[u8]>>,
    catalog: &TaskCatalog,
) -> Result<SessionManifest, ArchiveError> {
    let mut raw = Vec::new();
    {
        let entry = zip
            .by_name(MANIFEST_NAME)
            .map_err(|_| malformed(format!("missing {MANIFEST_NAME}")))?;
        entry
            .take(MANIFEST_CAP + 1)
            .read_to_end(&mut raw)
            .map_err(|e| malformed(format!("unreadable {MANIFEST_NAME}: {e}")))?;
    }
    if raw.len() as u64 > MANIFEST_CAP {
        return Err(malformed(format!("{MANIFEST_NAME} exceeds {MANIFEST_CAP} bytes")));
    }
    let manifest: SessionManifest =
        serde_json::from_slice(&raw).map_err(|e| malformed(format!("invalid {MANIFEST_NAME}: {e}")))?;
    if manifest.schema_version == 0 {
        return Err(malformed("schema_version must be at least 1"));
    }
    manifest.check_names().map_err(ArchiveError::Malformed)?;
    for t in &manifest.tasks {
        if !catalog.contains(&t.task_kind) {
            return Err(malformed(format!("unknown task kind {:?}", t.task_kind)));
        }
    }
    Ok(manifest)
}

/// Counts bytes while discarding them, failing past `cap`.
struct CappedSink {
    written: u64,
    cap: u64,
}

impl Write for CappedSink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.written += buf.len() as u64;
        if self.written > self.cap {
            return Err(io::Error::other("decompressed size cap exceeded"));
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Validates an archive and writes its files below `dest`.
///
/// Every entry is fully decompressed and checksum-verified before the first
/// write, so a rejected archive leaves nothing behind. If a write fails
/// midway the files already written are removed again.
pub fn unpack_session(
    archive: &[u8],
    store: &dyn ObjectStore,
    dest: &ObjectKey,
    limits: &UnpackLimits,
    catalog: &TaskCatalog,
) -> Result<UnpackedSession, ArchiveError> {
    let mut zip = ZipArchive::new(Cursor::new(archive)).map_err(|e| malformed(format!("not a zip: {e}")))?;
    let manifest = read_manifest_from(&mut zip, catalog)?;
    let names: Vec<String> = manifest.referenced_files().into_iter().map(String::from).collect();

    let cap = limits.max_decompressed_bytes;
    let mut declared = 0u64;
    for name in &names {
        let entry = zip.by_name(name).map_err(|_| malformed(format!("manifest lists {name:?} but archive lacks it")))?;
        declared = declared.saturating_add(entry.size());
    }
    if declared > cap {
        return Err(ArchiveError::TooLarge { cap });
    }

    // Verification pass: decompress everything, trusting no declared size.
    let mut sink = CappedSink { written: 0, cap };
    for name in &names {
        let mut entry = zip.by_name(name).map_err(|e| malformed(format!("{name}: {e}")))?;
        if let Err(e) = io::copy(&mut entry, &mut sink) {
            return Err(if sink.written > cap {
                ArchiveError::TooLarge { cap }
            } else {
                malformed(format!("corrupt entry {name:?}: {e}"))
            });
        }
    }

    let mut written: Vec<(String, ObjectKey)> = Vec::with_capacity(names.len());
    let result = (|| {
        for name in &names {
            let key = dest.join(name)?;
            let mut bytes = Vec::new();
            zip.by_name(name)
                .and_then(|mut e| e.read_to_end(&mut bytes).map_err(Into::into))
                .map_err(|e| malformed(format!("corrupt entry {name:?}: {e}")))?;
            store.put(&key, &bytes)?;
            written.push((name.clone(), key));
        }
        Ok::<_, ArchiveError>(())
    })();
    if let Err(e) = result {
        for (_, key) in &written {
            let _ = store.delete(key);
        }
        return Err(e);
    }
    Ok(UnpackedSession { manifest, files: written })
}
