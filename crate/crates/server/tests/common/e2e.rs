//! The five-session, three-task run from upload to persisted series.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use oromon_core::{dataset_nme, lp_index, sample_frames, FaceRegion, GestureTable, VideoMeta};
use oromon_server::db::{SeriesPoint, SessionStatus, TaskStatus};
use oromon_server::synth::{face_box, session_archive, SynthTask};

use super::*;

pub const TASKS: [&str; 3] = ["maximum_smile", "lips_stretching", "maximum_mouth_opening"];
pub const FPS: f64 = 30.0;
pub const FRAMES: usize = 61;

pub fn session_tasks(session: usize) -> Vec<SynthTask> {
    TASKS
        .iter()
        .enumerate()
        .map(|(t, kind)| SynthTask::ramp(kind, FPS, FRAMES, 1.0 + session as f64 + 0.5 * t as f64))
        .collect()
}

/// The index recomputed offline from the ground truth: sample the source
/// frames, take the first sampled frame as neutral.
pub fn offline_lp(task: &SynthTask, target_fps: f64) -> f64 {
    let meta = VideoMeta { source_fps: task.source_fps, duration_s: task.amplitudes.len() as f64 / task.source_fps };
    let truth = task.truth();
    let sampled: Vec<_> = sample_frames(meta, target_fps).into_iter().map(|i| truth[i as usize].clone()).collect();
    lp_index(&sampled, &sampled[0], &task.task_kind, &GestureTable::default()).unwrap().value
}

/// Uploads five sessions of three tasks through the API, a day apart, runs
/// them through the queue with the oracle analyzer and checks NME, the
/// series against offline recomputation, cleanup and queue accounting.
pub async fn five_sessions_three_tasks() {
    let started = Instant::now();
    let h = Harness::new();
    let router = h.router(false);
    let clinician = h.add_clinician("dr");
    let patient = h.add_patient(&clinician, "pt");
    let mut sessions = Vec::new();
    for s in 0..5 {
        // Tokens last 12 hours and sessions are a day apart.
        let pt_token = login(&router, "pt").await;
        let tasks = session_tasks(s);
        let (status, body) = upload(&router, &pt_token, &session_archive(&patient, &tasks).unwrap()).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        assert_eq!(body["status"], "received");
        sessions.push((body["session_id"].as_str().unwrap().to_string(), tasks));
        h.clock.advance_ms(DAY_MS);
    }

    let p = h.pipeline.clone();
    let handled = tokio::task::spawn_blocking(move || {
        assert_eq!(p.sweep().unwrap(), 5);
        p.drain().unwrap()
    })
    .await
    .unwrap();
    assert_eq!(handled, 15);

    let target_fps = h.config.pipeline.target_fps;
    let mut pairs = Vec::new();
    let mut expected: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (session_id, tasks) in &sessions {
        assert_eq!(h.pipeline.db.session(session_id).unwrap().status, SessionStatus::Complete);
        for task in tasks {
            let row = h.pipeline.db.result(session_id, &task.task_kind, "oracle").unwrap();
            assert_eq!(row.task_status, TaskStatus::Ok);
            let truth = task.truth();
            for f in &row.frames {
                let d = f.analysis.detection().expect("oracle detects every frame");
                pairs.push((truth[f.frame_index as usize].clone(), d.landmarks.clone()));
            }
            expected.entry(task.task_kind.as_str()).or_default().push(offline_lp(task, target_fps));
        }
    }
    let b = face_box();
    assert_eq!(dataset_nme(pairs.iter().map(|(t, p)| (t, p, &b)), &FaceRegion::ALL).unwrap(), 0.0);

    let dr_token = login(&router, "dr").await;
    for kind in TASKS {
        let (status, body) =
            call(&router, "GET", &format!("/patients/{patient}/series?task={kind}"), Some(&dr_token), None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let series: Vec<SeriesPoint> = serde_json::from_value(body).unwrap();
        let values: Vec<f64> = series.iter().map(|p| p.value.unwrap()).collect();
        assert_eq!(values, expected[kind], "{kind}");
        assert!(series.iter().all(|p| !p.flagged));
        assert!(series.windows(2).all(|w| w[0].session_timestamp < w[1].session_timestamp));
    }

    assert!(h.temp_objects().is_empty(), "{:?}", h.temp_objects());
    for (_, q) in h.pipeline.queues() {
        let s = q.stats();
        assert_eq!((s.enqueued, s.acked, s.dead_lettered, s.visible, s.in_flight), (15, 15, 0, 0, 0));
    }
    assert!(started.elapsed() < Duration::from_secs(60));
}
