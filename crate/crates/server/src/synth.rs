//! Synthetic sessions with exact ground truth, for smoke tests and demos.
//!
//! Each task recording is a frame bundle of tiny blank frames plus a sidecar
//! holding the landmarks of every frame, so an oracle analyzer reproduces
//! the ground truth exactly.

use image::{Rgb, RgbImage};
use oromon_core::{AnnotationRecord, Cohort, FaceBox, FrameRef, LandmarkSet, Point, LANDMARK_COUNT};
use oromon_store::{pack_session, ArchiveError, SessionManifest, TaskEntry};

use crate::decode::{frame_name, pack_frame_bundle, FrameMeta, FRAME_BUNDLE_MIME};

/// Box every synthetic face sits in: 100 x 120 at (20, 10).
pub fn face_box() -> FaceBox {
    FaceBox::new(20.0, 10.0, 100.0, 120.0, 1.0).expect("valid box")
}

/// A frontal face whose mouth corners are `40 + 2a` apart and whose lips are
/// `16 + 2a` apart, with eye centroids 40 apart.
pub fn face(amplitude: f64, frame_index: u64) -> LandmarkSet {
    let a = amplitude;
    let points = (0..LANDMARK_COUNT).map(|k| match k {
        0..=16 => Point::new(25.0 + 5.5 * k as f64, 60.0 + 60.0 * (k as f64 / 16.0 * std::f64::consts::PI).sin()),
        17..=26 => Point::new(40.0 + 7.0 * (k - 17) as f64, 40.0),
        27..=35 => Point::new(70.0 + (k as f64 - 31.0), 55.0 + (k - 27) as f64 * 3.0),
        36..=41 => Point::new(50.0 + [-4.0, -2.0, 2.0, 4.0, 2.0, -2.0][k - 36], 50.0 + [0.0, -2.0, -2.0, 0.0, 2.0, 2.0][k - 36]),
        42..=47 => Point::new(90.0 + [-4.0, -2.0, 2.0, 4.0, 2.0, -2.0][k - 42], 50.0 + [0.0, -2.0, -2.0, 0.0, 2.0, 2.0][k - 42]),
        48 => Point::new(50.0 - a, 100.0),
        54 => Point::new(90.0 + a, 100.0),
        51 => Point::new(70.0, 92.0 - a),
        57 => Point::new(70.0, 108.0 + a),
        _ => Point::new(55.0 + (k - 48) as f64 * 1.5, if k < 60 { 96.0 } else { 104.0 }),
    });
    LandmarkSet::from_points(points, frame_index).expect("68 finite points")
}

/// One synthetic task recording.
#[derive(Debug, Clone)]
pub struct SynthTask {
    pub task_kind: String,
    pub source_fps: f64,
    /// Gesture amplitude per source frame.
    pub amplitudes: Vec<f64>,
    pub neutral_frame: Option<u64>,
    /// Leave the sidecar out, so oracle analysis of this task cannot succeed.
    pub omit_sidecar: bool,
}

impl SynthTask {
    /// A rest-gesture-rest recording: amplitude rises linearly to `peak` at
    /// the midpoint and falls back.
    pub fn ramp(task_kind: &str, source_fps: f64, frames: usize, peak: f64) -> Self {
        let mid = (frames.max(2) - 1) as f64 / 2.0;
        let amplitudes = (0..frames).map(|i| peak * (1.0 - (i as f64 - mid).abs() / mid)).collect();
        Self { task_kind: task_kind.into(), source_fps, amplitudes, neutral_frame: None, omit_sidecar: false }
    }

    pub fn truth(&self) -> Vec<LandmarkSet> {
        self.amplitudes.iter().enumerate().map(|(i, &a)| face(a, i as u64)).collect()
    }

    pub fn sidecar(&self, subject_id: &str) -> String {
        let mut out = String::new();
        for set in self.truth() {
            let record = AnnotationRecord {
                frame_ref: FrameRef::Path(frame_name(set.frame_index())),
                face_box: face_box(),
                landmarks: set,
                cohort: Cohort::Als,
                subject_id: subject_id.to_string(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn recording(&self) -> Vec<u8> {
        let frames = vec![RgbImage::from_pixel(4, 4, Rgb([128, 128, 128])); self.amplitudes.len()];
        let meta = FrameMeta { source_fps: self.source_fps, duration_s: self.amplitudes.len() as f64 / self.source_fps };
        pack_frame_bundle(meta, &frames)
    }
}

/// Packs a session archive for `patient_id`.
pub fn session_archive(patient_id: &str, tasks: &[SynthTask]) -> Result<Vec<u8>, ArchiveError> {
    let mut manifest = SessionManifest::new(patient_id, "synth");
    let mut files = Vec::new();
    for t in tasks {
        let file_name = format!("{}.frames.zip", t.task_kind);
        let sidecar_file = (!t.omit_sidecar).then(|| format!("{}.jsonl", t.task_kind));
        let duration = t.amplitudes.len() as f64 / t.source_fps;
        manifest.tasks.push(TaskEntry {
            task_kind: t.task_kind.clone(),
            file_name: file_name.clone(),
            mime: Some(FRAME_BUNDLE_MIME.into()),
            planned_duration_s: duration,
            recorded_duration_s: duration,
            retake_count: 0,
            sidecar_file: sidecar_file.clone(),
            neutral_frame: t.neutral_frame,
        });
        files.push((file_name, t.recording()));
        if let Some(name) = sidecar_file {
            files.push((name, t.sidecar(patient_id).into_bytes()));
        }
    }
    pack_session(&manifest, &files)
}
