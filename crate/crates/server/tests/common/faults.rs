//! Randomized fault schedules against the orchestrator and consumers.

use std::collections::BTreeSet;

use super::Harness;
use oromon_server::db::{SessionStatus, TaskState};
use oromon_server::pipeline::{Disposition, Worker};
use oromon_server::queue::{JobKey, JobPayload, QueueMessage};
use oromon_server::synth::{session_archive, SynthTask};
use oromon_store::ObjectKey;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TASKS: [&str; 3] = ["maximum_smile", "lips_protrusion", "maximum_mouth_opening"];

pub struct Outcome {
    pub results: usize,
    pub dead: usize,
    pub enqueued: u64,
    pub acked: u64,
    pub dead_lettered: u64,
}

fn handle(h: &Harness, msg: &QueueMessage, apply: bool) -> Disposition {
    let mut worker = Worker::new(&h.pipeline, &msg.analyzer_id);
    let d = worker.handle(msg);
    if apply {
        worker.apply(msg, &d).unwrap();
    }
    d
}

/// Runs one randomized schedule of duplicate deliveries, crashes before
/// and after the work, forced redeliveries and restarts, drives it to
/// completion and checks the per-seed invariants.
pub fn run_schedule(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Harness::new();
    let clinician = h.add_clinician("dr");
    let patient = h.add_patient(&clinician, "pt");
    let visibility = h.config.pipeline.visibility_timeout_s as i64 * 1000;

    let sessions = rng.gen_range(1..=2);
    let mut keys: Vec<ObjectKey> = Vec::new();
    let mut poisoned = BTreeSet::new();
    for s in 0..sessions {
        let tasks: Vec<SynthTask> = TASKS
            .iter()
            .map(|k| {
                let mut t = SynthTask::ramp(k, 10.0, 10, 2.0);
                if rng.gen_bool(0.15) {
                    t.omit_sidecar = true;
                    poisoned.insert((format!("s{s}"), k.to_string()));
                }
                t
            })
            .collect();
        let key = h.put_archive(&patient, &format!("s{s}"), &session_archive(&patient, &tasks).unwrap());
        // Some uploads miss their notification and wait for the sweep.
        if rng.gen_bool(0.7) {
            h.pipeline.orchestrate(&key).unwrap();
        }
        keys.push(key);
    }

    // Messages a slow worker holds on to and finishes later.
    let mut held: Vec<QueueMessage> = Vec::new();
    for _ in 0..rng.gen_range(5..40) {
        match rng.gen_range(0..100) {
            0..=39 => {
                let batch = h.pipeline.queue("oracle").unwrap().poll_batch(rng.gen_range(1..=3)).unwrap();
                for msg in batch {
                    match rng.gen_range(0..100) {
                        // Normal processing.
                        0..=39 => {
                            handle(&h, &msg, true);
                        }
                        // Crash after the work, before the ack.
                        40..=59 => {
                            handle(&h, &msg, false);
                        }
                        // Duplicate delivery handled twice.
                        60..=74 => {
                            handle(&h, &msg, true);
                            handle(&h, &msg, true);
                        }
                        // Crash before doing anything.
                        75..=84 => {}
                        _ => held.push(msg),
                    }
                }
            }
            40..=54 => {
                if !held.is_empty() {
                    let msg = held.swap_remove(rng.gen_range(0..held.len()));
                    handle(&h, &msg, true);
                }
            }
            // Forced redelivery of everything in flight.
            55..=69 => h.clock.advance_ms(visibility + 1),
            // Duplicate notifications and raw duplicate enqueues.
            70..=79 => {
                let key = &keys[rng.gen_range(0..keys.len())];
                h.pipeline.orchestrate(key).unwrap();
            }
            80..=84 => {
                let s = rng.gen_range(0..sessions);
                let kind = TASKS[rng.gen_range(0..TASKS.len())];
                if let Some(task) = h.pipeline.db.task(&format!("s{s}"), kind, "oracle").unwrap() {
                    h.pipeline
                        .queue("oracle")
                        .unwrap()
                        .enqueue(JobPayload {
                            key: JobKey {
                                session_id: task.session_id,
                                task_kind: task.task_kind,
                                analyzer_id: task.analyzer_id,
                            },
                            object_key: task.object_key,
                        })
                        .unwrap();
                }
            }
            85..=92 => {
                h.pipeline.sweep().unwrap();
            }
            // Whole-process crash: every in-memory receipt is lost.
            _ => {
                held.clear();
                h.restart();
            }
        }
    }

    // Let every lease lapse and run to completion.
    for msg in held.drain(..) {
        handle(&h, &msg, true);
    }
    h.pipeline.sweep().unwrap();
    for _ in 0..20 {
        h.clock.advance_ms(visibility + 1);
        h.pipeline.drain().unwrap();
        let stats = h.pipeline.queue("oracle").unwrap().stats();
        if stats.visible == 0 && stats.in_flight == 0 {
            break;
        }
    }

    let db = &h.pipeline.db;
    let counts = db.result_key_counts().unwrap();
    for (key, n) in &counts {
        assert_eq!(*n, 1, "seed {seed}: {key:?} stored {n} times");
    }
    let mut dead = 0;
    for s in 0..sessions {
        let id = format!("s{s}");
        let mut session_dead = 0;
        for t in db.tasks_of(&id).unwrap() {
            let poison = poisoned.contains(&(id.clone(), t.task_kind.clone()));
            // Attempts count deliveries, so enough crashes can exhaust a
            // healthy job too. A poisoned one can never finish.
            match t.state {
                TaskState::Done => assert!(!poison, "seed {seed}: {id}/{} has no sidecar", t.task_kind),
                TaskState::Dead => session_dead += 1,
                TaskState::Pending => panic!("seed {seed}: {id}/{} still pending", t.task_kind),
            }
            let has_result = counts.iter().any(|((sid, k, _), _)| *sid == id && *k == t.task_kind);
            assert_eq!(has_result, t.state == TaskState::Done, "seed {seed}: {id}/{}", t.task_kind);
        }
        let expected = if session_dead > 0 { SessionStatus::Failed } else { SessionStatus::Complete };
        assert_eq!(db.session(&id).unwrap().status, expected, "seed {seed}: session {id}");
        assert_eq!(db.dead_letters_of(&id).unwrap().len(), session_dead, "seed {seed}");
        dead += session_dead;
    }
    assert!(h.temp_objects().is_empty(), "seed {seed}: temporary objects left behind");

    let stats = h.pipeline.queue("oracle").unwrap().stats();
    Outcome {
        results: counts.len(),
        dead,
        enqueued: stats.enqueued,
        acked: stats.acked,
        dead_lettered: stats.dead_lettered,
    }
}
