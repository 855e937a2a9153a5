use std::io::Cursor;

use oromon_core::TaskCatalog;
use oromon_store::{
    pack_session, unpack_session, ArchiveError, BucketRole, LocalStore, ObjectKey, ObjectStore, SessionManifest,
    TaskEntry, UnpackLimits,
};
use proptest::prelude::*;

const KINDS: [&str; 6] = [
    "mouth_opening_closing",
    "maximum_smile",
    "lips_stretching",
    "lips_protrusion",
    "maximum_mouth_opening",
    "mouth_protrusion_stretching",
];

fn manifest_with(files: &[(String, Vec<u8>)]) -> SessionManifest {
    let mut m = SessionManifest::new("patient-7", "2.3.1");
    for ((name, _), kind) in files.iter().zip(KINDS) {
        m.tasks.push(TaskEntry {
            task_kind: kind.into(),
            file_name: name.clone(),
            mime: Some("video/mp4".into()),
            planned_duration_s: 30.0,
            recorded_duration_s: 30.2,
            retake_count: 1,
            sidecar_file: None,
            neutral_frame: None,
        });
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pack_unpack_is_lossless(payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..4096), 0..5)) {
        let files: Vec<(String, Vec<u8>)> =
            payloads.into_iter().enumerate().map(|(i, p)| (format!("rec/{i}.mp4"), p)).collect();
        let manifest = manifest_with(&files);
        let archive = pack_session(&manifest, &files).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let store = LocalStore::open(dir.path()).unwrap();
        let out = unpack_session(
            &archive,
            &store,
            &ObjectKey::temporary("s").unwrap(),
            &UnpackLimits::default(),
            &TaskCatalog::default(),
        ).unwrap();
        prop_assert_eq!(&out.manifest, &manifest);
        for (name, data) in &files {
            prop_assert_eq!(&store.get(out.key_for(name).unwrap()).unwrap(), data);
        }
    }
}

/// Truncating the archive at any offset must be rejected with nothing
/// written to the store.
#[test]
fn truncation_at_every_offset_is_rejected_cleanly() {
    let files = vec![
        ("a.webm".to_string(), (0..3000u32).map(|i| (i * 31 % 251) as u8).collect::<Vec<_>>()),
        ("b.webm".to_string(), vec![7u8; 500]),
    ];
    let archive = pack_session(&manifest_with(&files), &files).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = LocalStore::open(dir.path()).unwrap();
    let dest = ObjectKey::temporary("t").unwrap();
    for cut in 0..archive.len() {
        let result = unpack_session(&archive[..cut], &store, &dest, &UnpackLimits::default(), &TaskCatalog::default());
        assert!(matches!(result, Err(ArchiveError::Malformed(_))), "cut at {cut}: {result:?}");
        assert!(store.list(BucketRole::Temporary, "").unwrap().is_empty(), "cut at {cut} left objects");
    }
}

/// Flipping a byte inside compressed data must fail the checksum before any
/// write happens.
#[test]
fn corrupted_payload_is_rejected_cleanly() {
    let files = vec![("a.webm".to_string(), (0..5000u32).map(|i| (i % 97) as u8).collect::<Vec<_>>())];
    let archive = pack_session(&manifest_with(&files), &files).unwrap();
    let data_start = {
        let mut zip = zip::ZipArchive::new(Cursor::new(&archive[..])).unwrap();
        let entry = zip.by_name("a.webm").unwrap();
        entry.data_start() as usize
    };
    let dir = tempfile::tempdir().unwrap();
    let store = LocalStore::open(dir.path()).unwrap();
    let mut bad = archive.clone();
    bad[data_start + 20] ^= 0xff;
    let result = unpack_session(&bad, &store, &ObjectKey::temporary("t").unwrap(), &UnpackLimits::default(), &TaskCatalog::default());
    assert!(result.is_err());
    assert!(store.list(BucketRole::Temporary, "").unwrap().is_empty());
}
