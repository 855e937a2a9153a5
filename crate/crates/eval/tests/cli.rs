mod common;

use std::path::Path;
use std::process::{Command, Output};

use oromon_core::annotation::to_jsonl;
use oromon_eval::{Report, SplitManifest};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oromon-eval")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn split_vw_from_list_and_tree() {
    let dir = tempfile::tempdir().unwrap();
    let list: String = (0..10).map(|i| format!("{{\"video_id\":\"{i:03}\",\"frame_count\":1800}}\n")).collect();
    std::fs::write(dir.path().join("videos.jsonl"), list).unwrap();
    let stdout = ok(dir.path(), &["split-vw", "--videos", "videos.jsonl", "--seed", "7", "-o", "m.json"]);
    assert_eq!(stdout, "train: 7 subjects, 2520 frames\nval: 2 subjects, 720 frames\ntest: 1 subjects, 360 frames\n");
    let m: SplitManifest = read(&dir.path().join("m.json"));
    m.validate().unwrap();

    for v in ["001", "002", "003"] {
        let annot = dir.path().join("vw").join(v).join("annot");
        std::fs::create_dir_all(&annot).unwrap();
        for f in 1..=12 {
            std::fs::write(annot.join(format!("{f:06}.pts")), "").unwrap();
        }
    }
    let stdout = ok(dir.path(), &["split-vw", "--vw-root", "vw", "--stride", "4", "-o", "m2.json"]);
    assert_eq!(stdout.lines().map(|l| l.split(", ").nth(1).unwrap()).collect::<Vec<_>>(), ["3 frames"; 3]);
}

#[test]
fn split_toronto_default_quota() {
    let dir = tempfile::tempdir().unwrap();
    let mut subjects = String::new();
    for (cohort, n) in [("als", 4), ("stroke", 4), ("healthy", 4)] {
        for i in 0..n {
            let gender = if i % 2 == 0 { "M" } else { "F" };
            subjects.push_str(&format!("{{\"subject_id\":\"{cohort}{i}\",\"cohort\":\"{cohort}\",\"gender\":\"{gender}\"}}\n"));
        }
    }
    std::fs::write(dir.path().join("subjects.jsonl"), subjects).unwrap();
    let stdout = ok(dir.path(), &["split-toronto", "--subjects", "subjects.jsonl", "-o", "m.json"]);
    assert!(stdout.contains("test: 4 subjects"), "{stdout}");

    let out = run(dir.path(), &["split-toronto", "--subjects", "subjects.jsonl", "--test-cell", "stroke:F:3", "-o", "x.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stroke/F"));
}

#[test]
fn evaluate_dump_replay_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let records = common::corpus(30, 5);
    std::fs::write(dir.path().join("ann.jsonl"), to_jsonl(&records)).unwrap();

    let table = ok(dir.path(), &["evaluate", "--annotations", "ann.jsonl", "--analyzer", "oracle", "-o", "oracle.json"]);
    assert!(table.contains("NME_68"), "{table}");
    let oracle: Report = read(&dir.path().join("oracle.json"));
    assert!(oracle.rows.iter().all(|r| r.nme == 0.0));

    ok(
        dir.path(),
        &[
            "evaluate", "--annotations", "ann.jsonl", "--analyzer", "noise:2,0.2", "--analyzer-id", "noisy",
            "-o", "noisy.json", "--dump-predictions", "preds.jsonl",
        ],
    );
    ok(
        dir.path(),
        &[
            "evaluate", "--annotations", "ann.jsonl", "--analyzer", "replay:preds.jsonl", "--analyzer-id", "noisy",
            "-o", "replayed.json",
        ],
    );
    let noisy: Report = read(&dir.path().join("noisy.json"));
    assert_eq!(noisy, read::<Report>(&dir.path().join("replayed.json")));
    assert!(noisy.frames.unwrap().no_detection > 0);

    let table = ok(dir.path(), &["compare", "oracle.json", "noisy.json", "-o", "cmp.json"]);
    assert!(table.lines().next().unwrap().contains("oracle"));
    assert!(table.lines().nth(1).unwrap().contains("0.00*"));

    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/table3.json");
    let table = ok(dir.path(), &["compare", fixtures]);
    assert!(table.contains("13.55"));
}

#[test]
fn evaluate_one_manifest_subset() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = common::corpus(24, 6);
    let mut list = String::new();
    for v in 0..6 {
        list.push_str(&format!("{{\"video_id\":\"v{v}\",\"frame_count\":4}}\n"));
    }
    for (i, r) in records.iter_mut().enumerate() {
        r.frame_ref = oromon_core::FrameRef::Video { video_id: format!("v{}", i / 4), frame_index: (i % 4) as u64 };
    }
    std::fs::write(dir.path().join("ann.jsonl"), to_jsonl(&records)).unwrap();
    std::fs::write(dir.path().join("videos.jsonl"), list).unwrap();
    ok(dir.path(), &["split-vw", "--videos", "videos.jsonl", "--stride", "2", "-o", "m.json"]);
    ok(dir.path(), &["evaluate", "--annotations", "ann.jsonl", "--manifest", "m.json", "--analyzer", "oracle", "-o", "r.json"]);
    let m: SplitManifest = read(&dir.path().join("m.json"));
    let r: Report = read(&dir.path().join("r.json"));
    assert_eq!(r.frames.unwrap().annotated, m.test.frames.len());
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ann.jsonl"), to_jsonl(&common::corpus(3, 0))).unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"frame_ref\": 1}\n").unwrap();
    let cases: [&[&str]; 6] = [
        &["evaluate", "--annotations", "missing.jsonl", "--analyzer", "oracle"],
        &["evaluate", "--annotations", "bad.jsonl", "--analyzer", "oracle"],
        &["evaluate", "--annotations", "ann.jsonl", "--analyzer", "mystery"],
        &["evaluate", "--annotations", "ann.jsonl", "--analyzer", "onnx:nope.onnx"],
        &["compare", "ann.jsonl"],
        &["split-vw", "--videos", "ann.jsonl", "--fractions", "0.5,0.5,0.5", "-o", "m.json"],
    ];
    for args in cases {
        let out = run(dir.path(), args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty());
    }
}
