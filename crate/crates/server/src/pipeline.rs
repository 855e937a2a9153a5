//! Orchestrator and queue consumers.
//!
//! The orchestrator turns an uploaded archive into a session record, work
//! rows and one queue message per (task file × applicable analyzer). Workers
//! poll their analyzer's queue, analyze the sampled frames of one task per
//! message, write the result idempotently and acknowledge. When the last
//! task of a session finishes, its temporary objects are deleted and the
//! session settles.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use oromon_core::{lp_index, sample_frames, FrameAnalysis, GestureTable, TaskCatalog};
use oromon_store::{unpack_session, ArchiveError, BucketRole, ObjectKey, ObjectStore, UnpackLimits};

use crate::analyzers::{AnalyzerCache, AnalyzerRegistry};
use crate::clock::{iso8601, Clock};
use crate::db::{
    Db, DeadLetter, FrameResult, NeutralSource, QualityReport, ResultRow, SessionStatus, TaskRow, TaskState,
    TaskStatus,
};
use crate::decode::DecoderRegistry;
use crate::queue::{desired_workers, JobKey, JobPayload, JournalQueue, QueueMessage};

#[derive(Debug, Clone)]
pub struct PipelineSettings {
    pub target_fps: f64,
    pub batch: usize,
    pub max_workers: usize,
    pub max_attempts: u32,
    pub limits: UnpackLimits,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self { target_fps: 8.0, batch: 4, max_workers: 8, max_attempts: 5, limits: UnpackLimits::default() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Db(#[from] crate::db::DbError),
    #[error(transparent)]
    Store(#[from] oromon_store::StoreError),
    #[error(transparent)]
    Queue(#[from] crate::queue::QueueError),
    #[error("{0}")]
    Invalid(String),
}

/// What a worker should do with a message after handling it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disposition {
    Ack,
    DeadLetter(String),
    /// Leave the lease to expire so the message is redelivered.
    Retry(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrchestrateOutcome {
    /// Work was registered; the count is the number of messages newly
    /// enqueued by this call.
    Processing { enqueued: usize },
    /// The archive yielded no work and the session is complete.
    Empty,
    Malformed(String),
    /// The session was already settled.
    AlreadySettled(SessionStatus),
    /// Another call is orchestrating the same session.
    Busy,
}

/// Shared state of the analysis pipeline.
pub struct Pipeline {
    pub settings: PipelineSettings,
    pub db: Arc<Db>,
    pub store: Arc<dyn ObjectStore>,
    pub catalog: TaskCatalog,
    pub gestures: GestureTable,
    pub clock: Arc<dyn Clock>,
    queues: BTreeMap<String, JournalQueue>,
    analyzers: AnalyzerRegistry,
    decoders: DecoderRegistry,
    orchestrating: Mutex<HashSet<String>>,
}

/// Archive location of a session: `patient/<patient_id>/<session_id>.zip`.
pub fn archive_key(patient_id: &str, session_id: &str) -> Result<ObjectKey, oromon_store::StoreError> {
    ObjectKey::patient(format!("{patient_id}/{session_id}.zip"))
}

fn parse_archive_key(key: &ObjectKey) -> Option<(String, String)> {
    if key.bucket_role() != BucketRole::Patient {
        return None;
    }
    let (patient, file) = key.path().split_once('/')?;
    let session = file.strip_suffix(".zip")?;
    (!session.is_empty() && !session.contains('/')).then(|| (patient.to_string(), session.to_string()))
}

fn session_prefix(session_id: &str) -> String {
    format!("{session_id}/")
}

impl Pipeline {
    pub fn new(
        settings: PipelineSettings,
        db: Arc<Db>,
        store: Arc<dyn ObjectStore>,
        queues: BTreeMap<String, JournalQueue>,
        analyzers: AnalyzerRegistry,
        decoders: DecoderRegistry,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, PipelineError> {
        for d in analyzers.descriptors() {
            if !queues.contains_key(&d.analyzer_id) {
                return Err(PipelineError::Invalid(format!("no queue for analyzer {:?}", d.analyzer_id)));
            }
        }
        Ok(Self {
            settings,
            db,
            store,
            catalog: TaskCatalog::default(),
            gestures: GestureTable::default(),
            clock,
            queues,
            analyzers,
            decoders,
            orchestrating: Mutex::new(HashSet::new()),
        })
    }

    pub fn with_gestures(mut self, gestures: GestureTable) -> Self {
        self.gestures = gestures;
        self
    }

    pub fn queue(&self, analyzer_id: &str) -> Option<&JournalQueue> {
        self.queues.get(analyzer_id)
    }

    pub fn queues(&self) -> impl Iterator<Item = (&str, &JournalQueue)> {
        self.queues.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn analyzers(&self) -> &AnalyzerRegistry {
        &self.analyzers
    }

    pub fn now(&self) -> String {
        iso8601(self.clock.now())
    }

    /// Registers a session for an archive already in the patient bucket and
    /// fans out its work. Safe to call repeatedly for the same archive.
    pub fn orchestrate(&self, archive: &ObjectKey) -> Result<OrchestrateOutcome, PipelineError> {
        let (patient_id, session_id) = parse_archive_key(archive)
            .ok_or_else(|| PipelineError::Invalid(format!("{archive} is not a session archive key")))?;
        if !self.orchestrating.lock().expect("orchestrator lock").insert(session_id.clone()) {
            return Ok(OrchestrateOutcome::Busy);
        }
        let outcome = self.orchestrate_locked(archive, &patient_id, &session_id);
        self.orchestrating.lock().expect("orchestrator lock").remove(&session_id);
        outcome
    }

    fn orchestrate_locked(
        &self,
        archive: &ObjectKey,
        patient_id: &str,
        session_id: &str,
    ) -> Result<OrchestrateOutcome, PipelineError> {
        self.db.ensure_session(session_id, patient_id, &self.now(), archive)?;
        let session = self.db.session(session_id)?;
        match session.status {
            SessionStatus::Received => {}
            SessionStatus::Processing => return self.enqueue_pending(session_id),
            settled => return Ok(OrchestrateOutcome::AlreadySettled(settled)),
        }

        let bytes = self.store.get(archive)?;
        let dest = ObjectKey::temporary(session_id)?;
        let unpacked = match unpack_session(&bytes, self.store.as_ref(), &dest, &self.settings.limits, &self.catalog)
        {
            Ok(u) => u,
            Err(ArchiveError::Store(e)) => return Err(e.into()),
            Err(e) => return self.reject(session_id, e.to_string()),
        };
        if unpacked.manifest.patient_id != patient_id {
            return self.reject(
                session_id,
                format!("manifest patient {:?} does not match uploader", unpacked.manifest.patient_id),
            );
        }

        let mut rows = Vec::new();
        for task in &unpacked.manifest.tasks {
            let object_key = unpacked.key_for(&task.file_name).expect("unpacked files cover the manifest").clone();
            let sidecar_key = task.sidecar_file.as_deref().and_then(|n| unpacked.key_for(n)).cloned();
            for analyzer in self.analyzers.applicable(&task.task_kind) {
                rows.push(TaskRow {
                    session_id: session_id.to_string(),
                    task_kind: task.task_kind.clone(),
                    analyzer_id: analyzer.analyzer_id.clone(),
                    object_key: object_key.clone(),
                    mime: task.mime.clone(),
                    sidecar_key: sidecar_key.clone(),
                    neutral_frame: task.neutral_frame,
                    state: TaskState::Pending,
                });
            }
        }
        if rows.is_empty() {
            self.store.delete_prefix(BucketRole::Temporary, &session_prefix(session_id))?;
            self.db.set_session_status(session_id, SessionStatus::Complete, Some("no analyzable tasks"))?;
            return Ok(OrchestrateOutcome::Empty);
        }
        self.db.begin_processing(session_id, &rows)?;
        self.enqueue_pending(session_id)
    }

    fn reject(&self, session_id: &str, reason: String) -> Result<OrchestrateOutcome, PipelineError> {
        tracing::warn!(session_id, %reason, "rejecting malformed archive");
        self.store.delete_prefix(BucketRole::Temporary, &session_prefix(session_id))?;
        self.db.set_session_status(session_id, SessionStatus::Malformed, Some(&reason))?;
        Ok(OrchestrateOutcome::Malformed(reason))
    }

    fn enqueue_pending(&self, session_id: &str) -> Result<OrchestrateOutcome, PipelineError> {
        let mut enqueued = 0;
        for t in self.db.tasks_of(session_id)? {
            if t.state != TaskState::Pending {
                continue;
            }
            let queue = self
                .queues
                .get(&t.analyzer_id)
                .ok_or_else(|| PipelineError::Invalid(format!("no queue for analyzer {:?}", t.analyzer_id)))?;
            let payload = JobPayload {
                key: JobKey { session_id: t.session_id, task_kind: t.task_kind, analyzer_id: t.analyzer_id },
                object_key: t.object_key,
            };
            if queue.enqueue(payload)? == crate::queue::EnqueueOutcome::Enqueued {
                enqueued += 1;
            }
        }
        Ok(OrchestrateOutcome::Processing { enqueued })
    }

    /// Backstop for missed upload notifications: orchestrates every archive
    /// in the patient bucket whose session is not settled.
    pub fn sweep(&self) -> Result<usize, PipelineError> {
        let mut touched = 0;
        for key in self.store.list(BucketRole::Patient, "")? {
            let Some((_, session_id)) = parse_archive_key(&key) else { continue };
            let settled = match self.db.session(&session_id) {
                Ok(s) => s.status.is_terminal(),
                Err(crate::db::DbError::NotFound(_)) => false,
                Err(e) => return Err(e.into()),
            };
            if settled {
                continue;
            }
            match self.orchestrate(&key) {
                Ok(_) => touched += 1,
                Err(e) => tracing::warn!(%key, error = %e, "sweep could not orchestrate archive"),
            }
        }
        Ok(touched)
    }

    /// Deletes archives of settled sessions received more than `days` ago.
    pub fn expire_archives(&self, days: u32) -> Result<usize, PipelineError> {
        let cutoff = iso8601(self.clock.now() - chrono::Duration::days(i64::from(days)));
        let expired = self.db.expire_archives(&cutoff)?;
        for (_, key) in &expired {
            self.store.delete(key)?;
        }
        Ok(expired.len())
    }

    /// Deletes the session's temporary objects and settles it if no work is
    /// pending.
    fn settle(&self, session_id: &str) -> Result<(), PipelineError> {
        if self.db.pending_task_count(session_id)? > 0 {
            return Ok(());
        }
        self.store.delete_prefix(BucketRole::Temporary, &session_prefix(session_id))?;
        if let Some(status) = self.db.settle_session(session_id)? {
            tracing::info!(session_id, status = status.as_str(), "session settled");
        }
        Ok(())
    }

    /// Processes queues on the calling thread until none has visible
    /// messages. Returns the number of messages handled.
    pub fn drain(&self) -> Result<usize, PipelineError> {
        let mut workers: BTreeMap<String, Worker<'_>> =
            self.queues.keys().map(|id| (id.clone(), Worker::new(self, id))).collect();
        let mut handled = 0;
        loop {
            let mut progressed = false;
            for (id, queue) in &self.queues {
                let worker = workers.get_mut(id).expect("one worker per queue");
                for msg in queue.poll_batch(self.settings.batch)? {
                    let d = worker.handle(&msg);
                    worker.apply(&msg, &d)?;
                    handled += 1;
                    progressed = true;
                }
            }
            if !progressed {
                return Ok(handled);
            }
        }
    }
}

/// Consumes one analyzer's queue. Owns its analyzer instances.
pub struct Worker<'p> {
    pipeline: &'p Pipeline,
    analyzer_id: String,
    analyzers: AnalyzerCache,
}

impl<'p> Worker<'p> {
    pub fn new(pipeline: &'p Pipeline, analyzer_id: &str) -> Self {
        Self {
            pipeline,
            analyzer_id: analyzer_id.to_string(),
            analyzers: AnalyzerCache::new(pipeline.analyzers.clone()),
        }
    }

    pub fn queue(&self) -> &'p JournalQueue {
        self.pipeline.queues.get(&self.analyzer_id).expect("worker queue exists")
    }

    /// Does the work for a message and decides its fate, without touching
    /// the queue. Safe to call any number of times for the same job.
    pub fn handle(&mut self, msg: &QueueMessage) -> Disposition {
        match self.try_handle(msg) {
            Ok(d) => d,
            Err(e) => {
                let reason = e.to_string();
                tracing::warn!(message_id = %msg.message_id, attempt = msg.attempt, %reason, "task attempt failed");
                if let Err(e) =
                    self.pipeline.db.note_task_error(&msg.session_id, &msg.task_kind, &msg.analyzer_id, &reason)
                {
                    tracing::error!(error = %e, "could not record task error");
                }
                Disposition::Retry(reason)
            }
        }
    }

    /// Applies a disposition to the queue.
    pub fn apply(&self, msg: &QueueMessage, disposition: &Disposition) -> Result<(), PipelineError> {
        match disposition {
            Disposition::Ack => {
                self.queue().ack(&msg.message_id)?;
            }
            Disposition::DeadLetter(reason) => {
                self.queue().dead_letter(&msg.message_id, reason)?;
            }
            Disposition::Retry(_) => {}
        }
        Ok(())
    }

    fn try_handle(&mut self, msg: &QueueMessage) -> Result<Disposition, PipelineError> {
        let p = self.pipeline;
        let Some(task) = p.db.task(&msg.session_id, &msg.task_kind, &msg.analyzer_id)? else {
            return Err(PipelineError::Invalid(format!(
                "no work row for {}/{}/{}",
                msg.session_id, msg.task_kind, msg.analyzer_id
            )));
        };
        match task.state {
            TaskState::Done => {
                p.settle(&msg.session_id)?;
                return Ok(Disposition::Ack);
            }
            TaskState::Dead => {
                p.settle(&msg.session_id)?;
                return Ok(Disposition::DeadLetter("task already dead-lettered".into()));
            }
            TaskState::Pending => {}
        }
        if msg.attempt > p.settings.max_attempts {
            let last = p.db.last_task_error(&msg.session_id, &msg.task_kind, &msg.analyzer_id)?;
            let reason = format!(
                "gave up after {} attempts: {}",
                msg.attempt - 1,
                last.as_deref().unwrap_or("no error recorded")
            );
            p.db.record_dead_letter(&DeadLetter {
                session_id: msg.session_id.clone(),
                task_kind: msg.task_kind.clone(),
                analyzer_id: msg.analyzer_id.clone(),
                message_id: msg.message_id.clone(),
                attempts: msg.attempt - 1,
                reason: reason.clone(),
                created_at: p.now(),
            })?;
            p.settle(&msg.session_id)?;
            return Ok(Disposition::DeadLetter(reason));
        }

        let row = self.analyze(&task)?;
        p.db.upsert_result(&row)?;
        p.settle(&msg.session_id)?;
        Ok(Disposition::Ack)
    }

    fn analyze(&mut self, task: &TaskRow) -> Result<ResultRow, PipelineError> {
        let p = self.pipeline;
        let fail = |e: String| PipelineError::Invalid(e);
        let recording = p.store.get(&task.object_key)?;
        let sidecar = task.sidecar_key.as_ref().map(|k| p.store.get(k)).transpose()?;
        let scratch = tempfile::tempdir().map_err(|e| fail(format!("scratch directory: {e}")))?;
        let frames = p
            .decoders
            .decode(task.mime.as_deref(), &recording, scratch.path())
            .map_err(|e| fail(e.to_string()))?;
        let sampled: Vec<u64> = sample_frames(frames.meta().into(), p.settings.target_fps)
            .into_iter()
            .filter(|&i| i < frames.frame_count())
            .collect();
        let mut analyzer = self.analyzers.for_task(&task.analyzer_id, sidecar.as_deref()).map_err(fail)?;

        let mut results = Vec::with_capacity(sampled.len() + 1);
        for &index in &sampled {
            let image = frames.frame(index).map_err(|e| fail(e.to_string()))?;
            let analysis = analyzer.get().analyze_frame(index, &image).map_err(|e| fail(e.to_string()))?;
            results.push(FrameResult { frame_index: index, analysis });
        }
        let flagged = match task.neutral_frame {
            Some(i) if i < frames.frame_count() => match results.iter().find(|r| r.frame_index == i) {
                Some(r) => Some(r.analysis.clone()),
                None => {
                    let image = frames.frame(i).map_err(|e| fail(e.to_string()))?;
                    let analysis = analyzer.get().analyze_frame(i, &image).map_err(|e| fail(e.to_string()))?;
                    results.push(FrameResult { frame_index: i, analysis: analysis.clone() });
                    Some(analysis)
                }
            },
            _ => None,
        };
        drop(analyzer);

        let sampled_results: Vec<&FrameResult> = results.iter().filter(|r| sampled.contains(&r.frame_index)).collect();
        let detected: Vec<_> = sampled_results
            .iter()
            .filter_map(|r| r.analysis.detection().map(|d| (r.frame_index, d)))
            .collect();
        let mut quality = QualityReport {
            sampled_frames: sampled.len(),
            detected_frames: detected.len(),
            no_detection_frames: sampled.len() - detected.len(),
            low_quality_frames: detected.iter().filter(|(_, d)| d.is_low_quality()).count(),
            ..Default::default()
        };

        let mut lp = None;
        if sampled.is_empty() {
            quality.failure_reason = Some("recording has no frames".into());
        } else if quality.no_detection_frames * 2 > quality.sampled_frames {
            quality.failure_reason = Some(format!(
                "no face detected in {} of {} sampled frames",
                quality.no_detection_frames, quality.sampled_frames
            ));
        } else {
            let neutral = match (task.neutral_frame, flagged.as_ref().and_then(FrameAnalysis::detection)) {
                (Some(i), Some(d)) => Some((i, d, NeutralSource::Flagged)),
                _ => detected.first().map(|&(i, d)| (i, d, NeutralSource::FirstDetected)),
            };
            let (neutral_index, neutral, source) = neutral.expect("at least half the sampled frames are detected");
            quality.neutral_frame = Some(neutral_index);
            quality.neutral_source = Some(source);
            let trajectory: Vec<_> = detected.iter().map(|(_, d)| d.landmarks.clone()).collect();
            match lp_index(&trajectory, &neutral.landmarks, &task.task_kind, &p.gestures) {
                Ok(v) => {
                    quality.peak_frame = Some(v.peak_frame_index);
                    lp = Some(v.value);
                }
                Err(e) => quality.failure_reason = Some(e.to_string()),
            }
        }

        results.sort_by_key(|r| r.frame_index);
        Ok(ResultRow {
            session_id: task.session_id.clone(),
            task_kind: task.task_kind.clone(),
            analyzer_id: task.analyzer_id.clone(),
            created_at: p.now(),
            task_status: if lp.is_some() { TaskStatus::Ok } else { TaskStatus::Failed },
            lp_index: lp,
            quality,
            frames: results,
        })
    }
}

/// Background threads: a scaler that keeps `desired_workers` consumers per
/// queue alive, and a sweeper running the backstop sweep.
pub struct WorkerPool {
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

#[derive(Debug, Clone, Copy)]
pub struct PoolTiming {
    pub scale_interval: Duration,
    pub sweep_interval: Duration,
    pub retention_days: Option<u32>,
}

impl WorkerPool {
    pub fn start(pipeline: Arc<Pipeline>, timing: PoolTiming) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();

        let (p, s) = (pipeline.clone(), stop.clone());
        threads.push(std::thread::spawn(move || {
            let alive: BTreeMap<String, Arc<AtomicUsize>> =
                p.queues.keys().map(|k| (k.clone(), Arc::new(AtomicUsize::new(0)))).collect();
            let mut workers: Vec<JoinHandle<()>> = Vec::new();
            while !s.load(Ordering::Relaxed) {
                for (id, queue) in &p.queues {
                    let want = desired_workers(
                        queue.backlog(),
                        p.settings.batch as u64,
                        p.settings.max_workers as u64,
                    ) as usize;
                    let counter = &alive[id];
                    while counter.load(Ordering::SeqCst) < want {
                        counter.fetch_add(1, Ordering::SeqCst);
                        let (p, s, counter, id) = (p.clone(), s.clone(), counter.clone(), id.clone());
                        workers.push(std::thread::spawn(move || {
                            run_worker(&p, &id, &s);
                            counter.fetch_sub(1, Ordering::SeqCst);
                        }));
                    }
                }
                workers.retain(|w| !w.is_finished());
                std::thread::sleep(timing.scale_interval);
            }
            for w in workers {
                let _ = w.join();
            }
        }));

        let (p, s) = (pipeline, stop.clone());
        threads.push(std::thread::spawn(move || {
            let tick = Duration::from_millis(100);
            let mut waited = timing.sweep_interval;
            while !s.load(Ordering::Relaxed) {
                if waited >= timing.sweep_interval {
                    waited = Duration::ZERO;
                    if let Err(e) = p.sweep() {
                        tracing::warn!(error = %e, "sweep failed");
                    }
                    if let Some(days) = timing.retention_days {
                        if let Err(e) = p.expire_archives(days) {
                            tracing::warn!(error = %e, "archive expiry failed");
                        }
                    }
                }
                std::thread::sleep(tick);
                waited += tick;
            }
        }));
        Self { stop, threads }
    }

    pub fn shutdown(self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads {
            let _ = t.join();
        }
    }
}

fn run_worker(pipeline: &Pipeline, analyzer_id: &str, stop: &AtomicBool) {
    let mut worker = Worker::new(pipeline, analyzer_id);
    while !stop.load(Ordering::Relaxed) {
        let batch = match worker.queue().poll_batch(pipeline.settings.batch) {
            Ok(b) => b,
            Err(e) => {
                tracing::error!(error = %e, analyzer_id, "poll failed");
                return;
            }
        };
        if batch.is_empty() {
            return;
        }
        for msg in &batch {
            let d = worker.handle(msg);
            if let Err(e) = worker.apply(msg, &d) {
                tracing::error!(error = %e, message_id = %msg.message_id, "could not settle message");
            }
        }
    }
}
