//! Durable work queue backed by an append-only journal file.
//!
//! Delivery is at-least-once: a polled message is leased for the visibility
//! timeout and becomes visible again if it is not acknowledged in time.
//! Enqueue is idempotent on (session, task, analyzer).
//!
//! Journal format: UTF-8 JSON lines. The first line is a header
//! `{"journal":"oromon-queue","version":1,"queue":"<name>"}`; every further
//! line is one record with an `op` of `enqueue`, `lease`, `release`, `ack`
//! or `dead_letter`. State is rebuilt by replaying the records in order. A
//! torn final line (crash mid-append) is truncated on open.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use oromon_store::ObjectKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;

pub const JOURNAL_VERSION: u32 = 1;
const JOURNAL_MAGIC: &str = "oromon-queue";

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("journal I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("journal {path} is corrupt at line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },

    #[error("unknown receipt {0}")]
    UnknownReceipt(String),
}

/// The idempotency key of a unit of work.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JobKey {
    pub session_id: String,
    pub task_kind: String,
    pub analyzer_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobPayload {
    #[serde(flatten)]
    pub key: JobKey,
    pub object_key: ObjectKey,
}

/// One delivery of a job. `message_id` is unique per delivery attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueMessage {
    pub message_id: String,
    pub session_id: String,
    pub task_kind: String,
    pub analyzer_id: String,
    pub object_key: ObjectKey,
    pub attempt: u32,
}

impl QueueMessage {
    pub fn job_key(&self) -> JobKey {
        JobKey {
            session_id: self.session_id.clone(),
            task_kind: self.task_kind.clone(),
            analyzer_id: self.analyzer_id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Enqueued,
    /// A job with the same key already exists; nothing was written.
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckOutcome {
    Acked,
    /// The job was already acknowledged or dead-lettered.
    AlreadySettled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueueStats {
    pub enqueued: u64,
    pub acked: u64,
    pub dead_lettered: u64,
    /// Ready jobs plus leased jobs whose lease has expired.
    pub visible: u64,
    pub in_flight: u64,
    pub deliveries: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    journal: String,
    version: u32,
    queue: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Record {
    Enqueue { seq: u64, job: JobPayload, at: i64 },
    Lease { seq: u64, message_id: String, attempt: u32, until: i64 },
    Release { seq: u64, message_id: String },
    Ack { seq: u64, message_id: String },
    DeadLetter { seq: u64, message_id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum JobState {
    Ready,
    Leased { message_id: String, until: i64 },
    Acked,
    Dead,
}

#[derive(Debug, Clone)]
struct Job {
    payload: JobPayload,
    state: JobState,
    attempts: u32,
}

#[derive(Debug, Default)]
struct State {
    jobs: BTreeMap<u64, Job>,
    by_key: HashMap<JobKey, u64>,
    receipts: HashMap<String, u64>,
    next_seq: u64,
    deliveries: u64,
}

impl State {
    fn apply(&mut self, record: &Record) -> Result<(), String> {
        match record {
            Record::Enqueue { seq, job, .. } => {
                if self.jobs.contains_key(seq) {
                    return Err(format!("duplicate enqueue seq {seq}"));
                }
                self.by_key.insert(job.key.clone(), *seq);
                self.jobs.insert(*seq, Job { payload: job.clone(), state: JobState::Ready, attempts: 0 });
                self.next_seq = self.next_seq.max(seq + 1);
            }
            Record::Lease { seq, message_id, attempt, until } => {
                let job = self.jobs.get_mut(seq).ok_or_else(|| format!("lease of unknown seq {seq}"))?;
                job.attempts = *attempt;
                job.state = JobState::Leased { message_id: message_id.clone(), until: *until };
                self.receipts.insert(message_id.clone(), *seq);
                self.deliveries += 1;
            }
            Record::Release { seq, message_id } => {
                let job = self.jobs.get_mut(seq).ok_or_else(|| format!("release of unknown seq {seq}"))?;
                if matches!(&job.state, JobState::Leased { message_id: m, .. } if m == message_id) {
                    job.state = JobState::Ready;
                }
            }
            Record::Ack { seq, .. } => {
                let job = self.jobs.get_mut(seq).ok_or_else(|| format!("ack of unknown seq {seq}"))?;
                if job.state != JobState::Dead {
                    job.state = JobState::Acked;
                }
            }
            Record::DeadLetter { seq, .. } => {
                let job = self.jobs.get_mut(seq).ok_or_else(|| format!("dead letter of unknown seq {seq}"))?;
                if job.state != JobState::Acked {
                    job.state = JobState::Dead;
                }
            }
        }
        Ok(())
    }

    fn is_visible(job: &Job, now: i64) -> bool {
        match &job.state {
            JobState::Ready => true,
            JobState::Leased { until, .. } => *until <= now,
            JobState::Acked | JobState::Dead => false,
        }
    }
}

struct Journal {
    file: File,
    fsync: bool,
}

impl Journal {
    fn append(&mut self, records: &[Record]) -> std::io::Result<()> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("journal records serialize");
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

/// A named queue persisted to one journal file. Cheap to clone; clones share
/// state.
#[derive(Clone)]
pub struct JournalQueue {
    inner: Arc<Inner>,
}

struct Inner {
    name: String,
    path: PathBuf,
    visibility_timeout_ms: i64,
    clock: Arc<dyn Clock>,
    state: Mutex<(State, Journal)>,
}

#[derive(Debug, Clone)]
pub struct QueueOptions {
    pub visibility_timeout_ms: i64,
    /// `fdatasync` after every append.
    pub fsync: bool,
}

impl Default for QueueOptions {
    fn default() -> Self {
        Self { visibility_timeout_ms: 120_000, fsync: true }
    }
}

impl JournalQueue {
    /// Opens (or creates) the journal at `path` and replays it.
    pub fn open(
        name: &str,
        path: impl Into<PathBuf>,
        options: QueueOptions,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, QueueError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let state = replay(&path, &mut file, name)?;
        Ok(Self {
            inner: Arc::new(Inner {
                name: name.to_string(),
                path,
                visibility_timeout_ms: options.visibility_timeout_ms,
                clock,
                state: Mutex::new((state, Journal { file, fsync: options.fsync })),
            }),
        })
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn path(&self) -> &Path {
        &self.inner.path
    }

    pub fn visibility_timeout_ms(&self) -> i64 {
        self.inner.visibility_timeout_ms
    }

    pub fn enqueue(&self, payload: JobPayload) -> Result<EnqueueOutcome, QueueError> {
        let mut guard = self.inner.state.lock().expect("queue lock");
        let (state, journal) = &mut *guard;
        if state.by_key.contains_key(&payload.key) {
            return Ok(EnqueueOutcome::Duplicate);
        }
        let record = Record::Enqueue { seq: state.next_seq, job: payload, at: self.inner.clock.now_ms() };
        journal.append(std::slice::from_ref(&record))?;
        state.apply(&record).expect("fresh enqueue applies");
        Ok(EnqueueOutcome::Enqueued)
    }

    /// Leases up to `max_batch` visible messages, oldest first.
    pub fn poll_batch(&self, max_batch: usize) -> Result<Vec<QueueMessage>, QueueError> {
        let now = self.inner.clock.now_ms();
        let until = now + self.inner.visibility_timeout_ms;
        let mut guard = self.inner.state.lock().expect("queue lock");
        let (state, journal) = &mut *guard;
        let mut records = Vec::new();
        for (&seq, job) in &state.jobs {
            if records.len() == max_batch {
                break;
            }
            if State::is_visible(job, now) {
                records.push(Record::Lease {
                    seq,
                    message_id: format!("{}-{seq}-{}", self.inner.name, uuid::Uuid::new_v4().simple()),
                    attempt: job.attempts + 1,
                    until,
                });
            }
        }
        if records.is_empty() {
            return Ok(Vec::new());
        }
        journal.append(&records)?;
        let mut out = Vec::with_capacity(records.len());
        for r in &records {
            state.apply(r).expect("lease of live job applies");
            if let Record::Lease { seq, message_id, attempt, .. } = r {
                let p = &state.jobs[seq].payload;
                out.push(QueueMessage {
                    message_id: message_id.clone(),
                    session_id: p.key.session_id.clone(),
                    task_kind: p.key.task_kind.clone(),
                    analyzer_id: p.key.analyzer_id.clone(),
                    object_key: p.object_key.clone(),
                    attempt: *attempt,
                });
            }
        }
        Ok(out)
    }

    fn settle(&self, message_id: &str, make: impl FnOnce(u64) -> Record) -> Result<AckOutcome, QueueError> {
        let mut guard = self.inner.state.lock().expect("queue lock");
        let (state, journal) = &mut *guard;
        let seq = *state
            .receipts
            .get(message_id)
            .ok_or_else(|| QueueError::UnknownReceipt(message_id.to_string()))?;
        if matches!(state.jobs[&seq].state, JobState::Acked | JobState::Dead) {
            return Ok(AckOutcome::AlreadySettled);
        }
        let record = make(seq);
        journal.append(std::slice::from_ref(&record))?;
        state.apply(&record).expect("settling a live job applies");
        Ok(AckOutcome::Acked)
    }

    /// Marks the job done. A stale receipt from an earlier delivery still
    /// settles the job, since results are written idempotently.
    pub fn ack(&self, message_id: &str) -> Result<AckOutcome, QueueError> {
        self.settle(message_id, |seq| Record::Ack { seq, message_id: message_id.to_string() })
    }

    /// Parks the job permanently.
    pub fn dead_letter(&self, message_id: &str, reason: &str) -> Result<AckOutcome, QueueError> {
        self.settle(message_id, |seq| Record::DeadLetter {
            seq,
            message_id: message_id.to_string(),
            reason: reason.to_string(),
        })
    }

    /// Ends the lease early so the job is redelivered on the next poll. A
    /// receipt that no longer holds the lease is ignored.
    pub fn release(&self, message_id: &str) -> Result<(), QueueError> {
        let mut guard = self.inner.state.lock().expect("queue lock");
        let (state, journal) = &mut *guard;
        let seq = *state
            .receipts
            .get(message_id)
            .ok_or_else(|| QueueError::UnknownReceipt(message_id.to_string()))?;
        let holds = matches!(&state.jobs[&seq].state, JobState::Leased { message_id: m, .. } if m == message_id);
        if holds {
            let record = Record::Release { seq, message_id: message_id.to_string() };
            journal.append(std::slice::from_ref(&record))?;
            state.apply(&record).expect("release applies");
        }
        Ok(())
    }

    pub fn stats(&self) -> QueueStats {
        let now = self.inner.clock.now_ms();
        let guard = self.inner.state.lock().expect("queue lock");
        let state = &guard.0;
        let mut s = QueueStats { enqueued: state.jobs.len() as u64, deliveries: state.deliveries, ..Default::default() };
        for job in state.jobs.values() {
            match &job.state {
                JobState::Acked => s.acked += 1,
                JobState::Dead => s.dead_lettered += 1,
                JobState::Ready => s.visible += 1,
                JobState::Leased { until, .. } if *until <= now => s.visible += 1,
                JobState::Leased { .. } => s.in_flight += 1,
            }
        }
        s
    }

    /// Messages waiting to be polled.
    pub fn backlog(&self) -> u64 {
        self.stats().visible
    }

    pub fn contains(&self, key: &JobKey) -> bool {
        self.inner.state.lock().expect("queue lock").0.by_key.contains_key(key)
    }
}

fn replay(path: &Path, file: &mut File, name: &str) -> Result<State, QueueError> {
    let corrupt = |line: usize, reason: String| QueueError::Corrupt { path: path.to_path_buf(), line, reason };
    file.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&*file);
    let mut state = State::default();
    let mut line = String::new();
    let mut offset = 0u64;
    let mut good_len = 0u64;
    let mut line_no = 0usize;
    let mut torn_at: Option<usize> = None;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        offset += n as u64;
        if let Some(at) = torn_at {
            return Err(corrupt(at, "unparseable record followed by more data".into()));
        }
        let complete = line.ends_with('\n');
        let text = line.trim_end();
        if line_no == 1 {
            match serde_json::from_str::<Header>(text) {
                Ok(h) if complete && h.journal == JOURNAL_MAGIC && h.version == JOURNAL_VERSION && h.queue == name => {}
                Ok(h) if complete => {
                    return Err(corrupt(1, format!("header mismatch: {} v{} queue {:?}", h.journal, h.version, h.queue)))
                }
                _ => {
                    torn_at = Some(1);
                    continue;
                }
            }
        } else {
            match serde_json::from_str::<Record>(text) {
                Ok(record) if complete => state.apply(&record).map_err(|e| corrupt(line_no, e))?,
                _ => {
                    torn_at = Some(line_no);
                    continue;
                }
            }
        }
        good_len = offset;
    }
    drop(reader);
    if torn_at.is_some() {
        tracing::warn!(journal = %path.display(), "truncating torn journal tail");
        file.set_len(good_len)?;
    }
    if good_len == 0 {
        let header = Header { journal: JOURNAL_MAGIC.into(), version: JOURNAL_VERSION, queue: name.into() };
        let mut text = serde_json::to_string(&header).expect("header serializes");
        text.push('\n');
        file.write_all(text.as_bytes())?;
        file.sync_data()?;
    }
    Ok(state)
}

/// Workers to run for a backlog: one per `batch` messages, capped.
pub fn desired_workers(backlog: u64, batch: u64, max_workers: u64) -> u64 {
    let batch = batch.max(1);
    backlog.div_ceil(batch).min(max_workers)
}
