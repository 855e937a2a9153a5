//! Relational persistence (SQLite).

use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use oromon_core::FrameAnalysis;
use oromon_store::ObjectKey;
use rusqlite::{params, Connection, OptionalExtension, Transaction};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DbError {
    #[error("database error: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error("{0} not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("corrupt row: {0}")]
    Corrupt(String),
}

pub type DbResult<T> = Result<T, DbError>;

const MIGRATIONS: &[&str] = &[r#"
CREATE TABLE clinicians (
    clinician_id  TEXT PRIMARY KEY,
    username      TEXT NOT NULL UNIQUE,
    password_hash TEXT NOT NULL,
    display_name  TEXT NOT NULL,
    created_at    TEXT NOT NULL
);
CREATE TABLE patients (
    patient_id    TEXT PRIMARY KEY,
    clinician_id  TEXT NOT NULL REFERENCES clinicians(clinician_id),
    username      TEXT NOT NULL UNIQUE,
    password_hash TEXT NOT NULL,
    display_name  TEXT NOT NULL,
    als_frs_r     INTEGER CHECK (als_frs_r BETWEEN 0 AND 48),
    moca          INTEGER CHECK (moca BETWEEN 0 AND 30),
    doss          INTEGER CHECK (doss BETWEEN 1 AND 7),
    created_at    TEXT NOT NULL
);
CREATE TABLE auth_tokens (
    token_hash TEXT PRIMARY KEY,
    role       TEXT NOT NULL CHECK (role IN ('clinician', 'patient')),
    subject_id TEXT NOT NULL,
    expires_at INTEGER NOT NULL
);
CREATE TABLE schedules (
    patient_id TEXT NOT NULL REFERENCES patients(patient_id),
    date       TEXT NOT NULL,
    task_kinds TEXT NOT NULL,
    PRIMARY KEY (patient_id, date)
);
CREATE TABLE sessions (
    session_id  TEXT PRIMARY KEY,
    patient_id  TEXT NOT NULL,
    received_at TEXT NOT NULL,
    status      TEXT NOT NULL
                CHECK (status IN ('received', 'processing', 'complete', 'failed', 'malformed')),
    archive_key TEXT,
    detail      TEXT
);
CREATE INDEX sessions_by_patient ON sessions(patient_id, received_at);
CREATE TABLE tasks (
    session_id    TEXT NOT NULL REFERENCES sessions(session_id),
    task_kind     TEXT NOT NULL,
    analyzer_id   TEXT NOT NULL,
    object_key    TEXT NOT NULL,
    mime          TEXT,
    sidecar_key   TEXT,
    neutral_frame INTEGER,
    state         TEXT NOT NULL CHECK (state IN ('pending', 'done', 'dead')),
    last_error    TEXT,
    PRIMARY KEY (session_id, task_kind, analyzer_id)
);
CREATE TABLE results (
    session_id  TEXT NOT NULL,
    task_kind   TEXT NOT NULL,
    analyzer_id TEXT NOT NULL,
    created_at  TEXT NOT NULL,
    task_status TEXT NOT NULL CHECK (task_status IN ('ok', 'failed')),
    lp_index    REAL,
    quality     TEXT NOT NULL,
    frames      TEXT NOT NULL,
    PRIMARY KEY (session_id, task_kind, analyzer_id)
);
CREATE TRIGGER results_no_update BEFORE UPDATE ON results
BEGIN SELECT RAISE(ABORT, 'results are immutable'); END;
CREATE TRIGGER results_no_delete BEFORE DELETE ON results
BEGIN SELECT RAISE(ABORT, 'results are immutable'); END;
CREATE TABLE dead_letters (
    session_id  TEXT NOT NULL,
    task_kind   TEXT NOT NULL,
    analyzer_id TEXT NOT NULL,
    message_id  TEXT NOT NULL,
    attempts    INTEGER NOT NULL,
    reason      TEXT NOT NULL,
    created_at  TEXT NOT NULL,
    PRIMARY KEY (session_id, task_kind, analyzer_id)
);
"#];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Clinician,
    Patient,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Clinician => "clinician",
            Role::Patient => "patient",
        }
    }

    fn parse(s: &str) -> DbResult<Self> {
        match s {
            "clinician" => Ok(Role::Clinician),
            "patient" => Ok(Role::Patient),
            other => Err(DbError::Corrupt(format!("role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Received,
    Processing,
    Complete,
    Failed,
    Malformed,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Received => "received",
            SessionStatus::Processing => "processing",
            SessionStatus::Complete => "complete",
            SessionStatus::Failed => "failed",
            SessionStatus::Malformed => "malformed",
        }
    }

    fn parse(s: &str) -> DbResult<Self> {
        Ok(match s {
            "received" => SessionStatus::Received,
            "processing" => SessionStatus::Processing,
            "complete" => SessionStatus::Complete,
            "failed" => SessionStatus::Failed,
            "malformed" => SessionStatus::Malformed,
            other => return Err(DbError::Corrupt(format!("session status {other:?}"))),
        })
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, SessionStatus::Complete | SessionStatus::Failed | SessionStatus::Malformed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clinician {
    pub clinician_id: String,
    pub username: String,
    pub display_name: String,
    pub created_at: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalScores {
    pub als_frs_r: Option<u8>,
    pub moca: Option<u8>,
    pub doss: Option<u8>,
}

impl ClinicalScores {
    pub fn validate(&self) -> DbResult<()> {
        let check = |name: &str, v: Option<u8>, lo: u8, hi: u8| match v {
            Some(v) if !(lo..=hi).contains(&v) => Err(DbError::Invalid(format!("{name} must be in {lo}..={hi}, got {v}"))),
            _ => Ok(()),
        };
        check("als_frs_r", self.als_frs_r, 0, 48)?;
        check("moca", self.moca, 0, 30)?;
        check("doss", self.doss, 1, 7)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub clinician_id: String,
    pub username: String,
    pub display_name: String,
    #[serde(flatten)]
    pub scores: ClinicalScores,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    /// Calendar date, `YYYY-MM-DD`.
    pub date: String,
    pub task_kinds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub patient_id: String,
    pub received_at: String,
    pub status: SessionStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub archive_key: Option<ObjectKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    Done,
    Dead,
}

impl TaskState {
    fn as_str(self) -> &'static str {
        match self {
            TaskState::Pending => "pending",
            TaskState::Done => "done",
            TaskState::Dead => "dead",
        }
    }

    fn parse(s: &str) -> DbResult<Self> {
        Ok(match s {
            "pending" => TaskState::Pending,
            "done" => TaskState::Done,
            "dead" => TaskState::Dead,
            other => return Err(DbError::Corrupt(format!("task state {other:?}"))),
        })
    }
}

/// One unit of analysis work: a task file paired with an analyzer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub session_id: String,
    pub task_kind: String,
    pub analyzer_id: String,
    pub object_key: ObjectKey,
    pub mime: Option<String>,
    pub sidecar_key: Option<ObjectKey>,
    pub neutral_frame: Option<u64>,
    pub state: TaskState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_index: u64,
    #[serde(flatten)]
    pub analysis: FrameAnalysis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeutralSource {
    /// The frame flagged as at-rest in the manifest.
    Flagged,
    /// No usable flagged frame; the first detected sampled frame.
    FirstDetected,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub sampled_frames: usize,
    pub detected_frames: usize,
    pub no_detection_frames: usize,
    /// Detected frames with at least one undetected landmark.
    pub low_quality_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutral_frame: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutral_source: Option<NeutralSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_frame: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub session_id: String,
    pub task_kind: String,
    pub analyzer_id: String,
    pub created_at: String,
    pub task_status: TaskStatus,
    pub lp_index: Option<f64>,
    pub quality: QualityReport,
    pub frames: Vec<FrameResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub session_id: String,
    pub task_kind: String,
    pub analyzer_id: String,
    pub message_id: String,
    pub attempts: u32,
    pub reason: String,
    pub created_at: String,
}

/// A point of a patient's index series, flagged rather than dropped when
/// the underlying task or session did not produce a trustworthy value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub session_id: String,
    pub session_timestamp: String,
    pub task_kind: String,
    pub analyzer_id: String,
    pub value: Option<f64>,
    pub flagged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag_reason: Option<String>,
}

/// Completion status of one task, without any index values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub task_kind: String,
    pub analyzer_id: String,
    pub state: TaskState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsert {
    Inserted,
    AlreadyPresent,
}

pub struct Db {
    conn: Mutex<Connection>,
}

fn key_to_text(key: &ObjectKey) -> String {
    serde_json::to_string(key).expect("object keys serialize")
}

fn key_from_text(text: Option<String>) -> DbResult<Option<ObjectKey>> {
    text.map(|t| serde_json::from_str(&t).map_err(|e| DbError::Corrupt(format!("object key {t:?}: {e}"))))
        .transpose()
}

fn json_col<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> DbResult<T> {
    serde_json::from_str(text).map_err(|e| DbError::Corrupt(format!("{what}: {e}")))
}

fn is_check_violation(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.extended_code == rusqlite::ffi::SQLITE_CONSTRAINT_CHECK)
}

impl Db {
    pub fn open(path: &Path) -> DbResult<Self> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> DbResult<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(mut conn: Connection) -> DbResult<Self> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        let version: usize = conn.pragma_query_value(None, "user_version", |r| r.get(0))?;
        if version > MIGRATIONS.len() {
            return Err(DbError::Invalid(format!(
                "database schema version {version} is newer than this build ({})",
                MIGRATIONS.len()
            )));
        }
        for (i, sql) in MIGRATIONS.iter().enumerate().skip(version) {
            let tx = conn.transaction()?;
            tx.execute_batch(sql)?;
            tx.pragma_update(None, "user_version", i + 1)?;
            tx.commit()?;
        }
        Ok(Self { conn: Mutex::new(conn) })
    }

    pub fn schema_version(&self) -> DbResult<usize> {
        Ok(self.lock().pragma_query_value(None, "user_version", |r| r.get(0))?)
    }

    fn lock(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn with_tx<T>(&self, f: impl FnOnce(&Transaction<'_>) -> DbResult<T>) -> DbResult<T> {
        let mut conn = self.lock();
        let tx = conn.transaction()?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    // Identities

    fn username_taken(tx: &Transaction<'_>, username: &str) -> DbResult<bool> {
        let n: i64 = tx.query_row(
            "SELECT (SELECT COUNT(*) FROM clinicians WHERE username = ?1)
                  + (SELECT COUNT(*) FROM patients WHERE username = ?1)",
            [username],
            |r| r.get(0),
        )?;
        Ok(n > 0)
    }

    pub fn insert_clinician(&self, c: &Clinician, password_hash: &str) -> DbResult<()> {
        self.with_tx(|tx| {
            if Self::username_taken(tx, &c.username)? {
                return Err(DbError::Conflict(format!("username {:?} is taken", c.username)));
            }
            tx.execute(
                "INSERT INTO clinicians (clinician_id, username, password_hash, display_name, created_at)
                 VALUES (?1, ?2, ?3, ?4, ?5)",
                params![c.clinician_id, c.username, password_hash, c.display_name, c.created_at],
            )?;
            Ok(())
        })
    }

    pub fn insert_patient(&self, p: &Patient, password_hash: &str) -> DbResult<()> {
        p.scores.validate()?;
        self.with_tx(|tx| {
            if Self::username_taken(tx, &p.username)? {
                return Err(DbError::Conflict(format!("username {:?} is taken", p.username)));
            }
            tx.execute(
                "INSERT INTO patients (patient_id, clinician_id, username, password_hash, display_name,
                                       als_frs_r, moca, doss, created_at)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
                params![
                    p.patient_id,
                    p.clinician_id,
                    p.username,
                    password_hash,
                    p.display_name,
                    p.scores.als_frs_r,
                    p.scores.moca,
                    p.scores.doss,
                    p.created_at
                ],
            )
            .map_err(|e| if is_check_violation(&e) { DbError::Invalid(e.to_string()) } else { e.into() })?;
            Ok(())
        })
    }

    /// Looks up a login name in both identity tables.
    pub fn credentials(&self, username: &str) -> DbResult<Option<(Role, String, String)>> {
        let conn = self.lock();
        let row = conn
            .query_row(
                "SELECT 'clinician', clinician_id, password_hash FROM clinicians WHERE username = ?1
                 UNION ALL
                 SELECT 'patient', patient_id, password_hash FROM patients WHERE username = ?1",
                [username],
                |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?)),
            )
            .optional()?;
        row.map(|(role, id, hash)| Ok((Role::parse(&role)?, id, hash))).transpose()
    }

    pub fn clinician(&self, clinician_id: &str) -> DbResult<Clinician> {
        self.lock()
            .query_row(
                "SELECT clinician_id, username, display_name, created_at FROM clinicians WHERE clinician_id = ?1",
                [clinician_id],
                |r| {
                    Ok(Clinician {
                        clinician_id: r.get(0)?,
                        username: r.get(1)?,
                        display_name: r.get(2)?,
                        created_at: r.get(3)?,
                    })
                },
            )
            .optional()?
            .ok_or_else(|| DbError::NotFound(format!("clinician {clinician_id}")))
    }

    fn patient_from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<Patient> {
        Ok(Patient {
            patient_id: r.get(0)?,
            clinician_id: r.get(1)?,
            username: r.get(2)?,
            display_name: r.get(3)?,
            scores: ClinicalScores { als_frs_r: r.get(4)?, moca: r.get(5)?, doss: r.get(6)? },
            created_at: r.get(7)?,
        })
    }

    const PATIENT_COLS: &'static str =
        "patient_id, clinician_id, username, display_name, als_frs_r, moca, doss, created_at";

    pub fn patient(&self, patient_id: &str) -> DbResult<Patient> {
        self.lock()
            .query_row(
                &format!("SELECT {} FROM patients WHERE patient_id = ?1", Self::PATIENT_COLS),
                [patient_id],
                Self::patient_from_row,
            )
            .optional()?
            .ok_or_else(|| DbError::NotFound(format!("patient {patient_id}")))
    }

    pub fn patients_of(&self, clinician_id: &str) -> DbResult<Vec<Patient>> {
        let conn = self.lock();
        let mut stmt = conn.prepare(&format!(
            "SELECT {} FROM patients WHERE clinician_id = ?1 ORDER BY created_at, patient_id",
            Self::PATIENT_COLS
        ))?;
        let rows = stmt.query_map([clinician_id], Self::patient_from_row)?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn update_patient(&self, patient_id: &str, display_name: &str, scores: &ClinicalScores) -> DbResult<Patient> {
        scores.validate()?;
        let n = self.lock().execute(
            "UPDATE patients SET display_name = ?2, als_frs_r = ?3, moca = ?4, doss = ?5 WHERE patient_id = ?1",
            params![patient_id, display_name, scores.als_frs_r, scores.moca, scores.doss],
        )?;
        if n == 0 {
            return Err(DbError::NotFound(format!("patient {patient_id}")));
        }
        self.patient(patient_id)
    }

    // Tokens

    pub fn insert_token(&self, token_hash: &str, role: Role, subject_id: &str, expires_at_ms: i64) -> DbResult<()> {
        self.lock().execute(
            "INSERT INTO auth_tokens (token_hash, role, subject_id, expires_at) VALUES (?1, ?2, ?3, ?4)",
            params![token_hash, role.as_str(), subject_id, expires_at_ms],
        )?;
        Ok(())
    }

    pub fn token(&self, token_hash: &str, now_ms: i64) -> DbResult<Option<(Role, String)>> {
        let conn = self.lock();
        conn.execute("DELETE FROM auth_tokens WHERE expires_at <= ?1", [now_ms])?;
        let row = conn
            .query_row(
                "SELECT role, subject_id FROM auth_tokens WHERE token_hash = ?1",
                [token_hash],
                |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)),
            )
            .optional()?;
        row.map(|(role, id)| Ok((Role::parse(&role)?, id))).transpose()
    }

    // Schedules

    pub fn schedule(&self, patient_id: &str) -> DbResult<Vec<ScheduleEntry>> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT date, task_kinds FROM schedules WHERE patient_id = ?1 ORDER BY date")?;
        let rows = stmt.query_map([patient_id], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
        rows.map(|row| {
            let (date, kinds) = row?;
            Ok(ScheduleEntry { date, task_kinds: json_col(&kinds, "schedule task kinds")? })
        })
        .collect()
    }

    /// Replaces the patient's whole schedule.
    pub fn replace_schedule(&self, patient_id: &str, entries: &[ScheduleEntry]) -> DbResult<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in entries {
            if !seen.insert(e.date.as_str()) {
                return Err(DbError::Invalid(format!("date {} listed twice", e.date)));
            }
        }
        self.with_tx(|tx| {
            tx.execute("DELETE FROM schedules WHERE patient_id = ?1", [patient_id])?;
            for e in entries {
                tx.execute(
                    "INSERT INTO schedules (patient_id, date, task_kinds) VALUES (?1, ?2, ?3)",
                    params![patient_id, e.date, serde_json::to_string(&e.task_kinds).expect("strings serialize")],
                )?;
            }
            Ok(())
        })
    }

    pub fn delete_schedule_entry(&self, patient_id: &str, date: &str) -> DbResult<()> {
        let n = self
            .lock()
            .execute("DELETE FROM schedules WHERE patient_id = ?1 AND date = ?2", params![patient_id, date])?;
        if n == 0 {
            return Err(DbError::NotFound(format!("schedule entry {date}")));
        }
        Ok(())
    }

    // Sessions

    /// Creates the session if absent. `received_at` of an existing session
    /// is never changed. Returns whether a row was created.
    pub fn ensure_session(
        &self,
        session_id: &str,
        patient_id: &str,
        received_at: &str,
        archive_key: &ObjectKey,
    ) -> DbResult<bool> {
        let n = self.lock().execute(
            "INSERT OR IGNORE INTO sessions (session_id, patient_id, received_at, status, archive_key)
             VALUES (?1, ?2, ?3, 'received', ?4)",
            params![session_id, patient_id, received_at, key_to_text(archive_key)],
        )?;
        Ok(n == 1)
    }

    fn session_from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<(SessionRecord, String, Option<String>)> {
        Ok((
            SessionRecord {
                session_id: r.get(0)?,
                patient_id: r.get(1)?,
                received_at: r.get(2)?,
                status: SessionStatus::Received,
                archive_key: None,
                detail: r.get(5)?,
            },
            r.get(3)?,
            r.get(4)?,
        ))
    }

    fn finish_session(raw: (SessionRecord, String, Option<String>)) -> DbResult<SessionRecord> {
        let (mut rec, status, key) = raw;
        rec.status = SessionStatus::parse(&status)?;
        rec.archive_key = key_from_text(key)?;
        Ok(rec)
    }

    const SESSION_COLS: &'static str = "session_id, patient_id, received_at, status, archive_key, detail";

    pub fn session(&self, session_id: &str) -> DbResult<SessionRecord> {
        let raw = self
            .lock()
            .query_row(
                &format!("SELECT {} FROM sessions WHERE session_id = ?1", Self::SESSION_COLS),
                [session_id],
                Self::session_from_row,
            )
            .optional()?
            .ok_or_else(|| DbError::NotFound(format!("session {session_id}")))?;
        Self::finish_session(raw)
    }

    fn sessions_where(&self, clause: &str, param: &dyn rusqlite::ToSql) -> DbResult<Vec<SessionRecord>> {
        let conn = self.lock();
        let mut stmt = conn.prepare(&format!(
            "SELECT {} FROM sessions WHERE {clause} ORDER BY received_at, rowid",
            Self::SESSION_COLS
        ))?;
        let rows = stmt.query_map([param], Self::session_from_row)?;
        rows.map(|r| Self::finish_session(r?)).collect()
    }

    /// Sessions of a patient in `received_at` order.
    pub fn sessions_of(&self, patient_id: &str) -> DbResult<Vec<SessionRecord>> {
        self.sessions_where("patient_id = ?1", &patient_id)
    }

    pub fn sessions_with_status(&self, status: SessionStatus) -> DbResult<Vec<SessionRecord>> {
        self.sessions_where("status = ?1", &status.as_str())
    }

    pub fn set_session_status(&self, session_id: &str, status: SessionStatus, detail: Option<&str>) -> DbResult<()> {
        self.lock().execute(
            "UPDATE sessions SET status = ?2, detail = ?3 WHERE session_id = ?1",
            params![session_id, status.as_str(), detail],
        )?;
        Ok(())
    }

    /// Drops the archive reference of sessions received before `cutoff`
    /// and returns the keys that were referenced.
    pub fn expire_archives(&self, cutoff: &str) -> DbResult<Vec<(String, ObjectKey)>> {
        self.with_tx(|tx| {
            let mut stmt = tx.prepare(
                "SELECT session_id, archive_key FROM sessions
                 WHERE received_at < ?1 AND archive_key IS NOT NULL AND status IN ('complete', 'failed', 'malformed')",
            )?;
            let rows: Vec<(String, String)> =
                stmt.query_map([cutoff], |r| Ok((r.get(0)?, r.get(1)?)))?.collect::<Result<_, _>>()?;
            let mut out = Vec::with_capacity(rows.len());
            for (id, key) in rows {
                tx.execute("UPDATE sessions SET archive_key = NULL WHERE session_id = ?1", [&id])?;
                if let Some(key) = key_from_text(Some(key))? {
                    out.push((id, key));
                }
            }
            Ok(out)
        })
    }

    // Tasks

    /// Registers work rows and moves the session to `processing` atomically.
    /// Existing rows are kept as they are.
    pub fn begin_processing(&self, session_id: &str, tasks: &[TaskRow]) -> DbResult<()> {
        self.with_tx(|tx| {
            for t in tasks {
                tx.execute(
                    "INSERT OR IGNORE INTO tasks
                     (session_id, task_kind, analyzer_id, object_key, mime, sidecar_key, neutral_frame, state)
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
                    params![
                        t.session_id,
                        t.task_kind,
                        t.analyzer_id,
                        key_to_text(&t.object_key),
                        t.mime,
                        t.sidecar_key.as_ref().map(key_to_text),
                        t.neutral_frame.map(|f| f as i64),
                        t.state.as_str()
                    ],
                )?;
            }
            tx.execute(
                "UPDATE sessions SET status = 'processing' WHERE session_id = ?1 AND status = 'received'",
                [session_id],
            )?;
            Ok(())
        })
    }

    fn task_from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<(TaskRow, String, Option<String>, String)> {
        Ok((
            TaskRow {
                session_id: r.get(0)?,
                task_kind: r.get(1)?,
                analyzer_id: r.get(2)?,
                object_key: ObjectKey::temporary("placeholder").expect("static key is valid"),
                mime: r.get(4)?,
                sidecar_key: None,
                neutral_frame: r.get::<_, Option<i64>>(6)?.map(|f| f as u64),
                state: TaskState::Pending,
            },
            r.get(3)?,
            r.get(5)?,
            r.get(7)?,
        ))
    }

    fn finish_task(raw: (TaskRow, String, Option<String>, String)) -> DbResult<TaskRow> {
        let (mut t, key, sidecar, state) = raw;
        t.object_key = key_from_text(Some(key))?.expect("some in, some out");
        t.sidecar_key = key_from_text(sidecar)?;
        t.state = TaskState::parse(&state)?;
        Ok(t)
    }

    const TASK_COLS: &'static str =
        "session_id, task_kind, analyzer_id, object_key, mime, sidecar_key, neutral_frame, state";

    pub fn task(&self, session_id: &str, task_kind: &str, analyzer_id: &str) -> DbResult<Option<TaskRow>> {
        let raw = self
            .lock()
            .query_row(
                &format!(
                    "SELECT {} FROM tasks WHERE session_id = ?1 AND task_kind = ?2 AND analyzer_id = ?3",
                    Self::TASK_COLS
                ),
                params![session_id, task_kind, analyzer_id],
                Self::task_from_row,
            )
            .optional()?;
        raw.map(Self::finish_task).transpose()
    }

    pub fn tasks_of(&self, session_id: &str) -> DbResult<Vec<TaskRow>> {
        let conn = self.lock();
        let mut stmt = conn.prepare(&format!(
            "SELECT {} FROM tasks WHERE session_id = ?1 ORDER BY task_kind, analyzer_id",
            Self::TASK_COLS
        ))?;
        let rows = stmt.query_map([session_id], Self::task_from_row)?;
        rows.map(|r| Self::finish_task(r?)).collect()
    }

    // Results

    /// Writes a result and marks its task done in one transaction. A second
    /// write for the same key leaves the first row untouched.
    pub fn upsert_result(&self, row: &ResultRow) -> DbResult<Upsert> {
        self.with_tx(|tx| {
            let n = tx.execute(
                "INSERT INTO results
                 (session_id, task_kind, analyzer_id, created_at, task_status, lp_index, quality, frames)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)
                 ON CONFLICT (session_id, task_kind, analyzer_id) DO NOTHING",
                params![
                    row.session_id,
                    row.task_kind,
                    row.analyzer_id,
                    row.created_at,
                    match row.task_status {
                        TaskStatus::Ok => "ok",
                        TaskStatus::Failed => "failed",
                    },
                    row.lp_index,
                    serde_json::to_string(&row.quality).expect("quality serializes"),
                    serde_json::to_string(&row.frames).expect("frames serialize"),
                ],
            )?;
            tx.execute(
                "UPDATE tasks SET state = 'done'
                 WHERE session_id = ?1 AND task_kind = ?2 AND analyzer_id = ?3 AND state = 'pending'",
                params![row.session_id, row.task_kind, row.analyzer_id],
            )?;
            Ok(if n == 1 { Upsert::Inserted } else { Upsert::AlreadyPresent })
        })
    }

    fn result_from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<(ResultRow, String, String, String)> {
        Ok((
            ResultRow {
                session_id: r.get(0)?,
                task_kind: r.get(1)?,
                analyzer_id: r.get(2)?,
                created_at: r.get(3)?,
                task_status: TaskStatus::Ok,
                lp_index: r.get(5)?,
                quality: QualityReport::default(),
                frames: Vec::new(),
            },
            r.get(4)?,
            r.get(6)?,
            r.get(7)?,
        ))
    }

    fn finish_result(raw: (ResultRow, String, String, String)) -> DbResult<ResultRow> {
        let (mut row, status, quality, frames) = raw;
        row.task_status = match status.as_str() {
            "ok" => TaskStatus::Ok,
            "failed" => TaskStatus::Failed,
            other => return Err(DbError::Corrupt(format!("task status {other:?}"))),
        };
        row.quality = json_col(&quality, "quality")?;
        row.frames = json_col(&frames, "frames")?;
        Ok(row)
    }

    const RESULT_COLS: &'static str =
        "session_id, task_kind, analyzer_id, created_at, task_status, lp_index, quality, frames";

    pub fn result(&self, session_id: &str, task_kind: &str, analyzer_id: &str) -> DbResult<ResultRow> {
        let raw = self
            .lock()
            .query_row(
                &format!(
                    "SELECT {} FROM results WHERE session_id = ?1 AND task_kind = ?2 AND analyzer_id = ?3",
                    Self::RESULT_COLS
                ),
                params![session_id, task_kind, analyzer_id],
                Self::result_from_row,
            )
            .optional()?
            .ok_or_else(|| DbError::NotFound(format!("result {session_id}/{task_kind}/{analyzer_id}")))?;
        Self::finish_result(raw)
    }

    pub fn has_result(&self, session_id: &str, task_kind: &str, analyzer_id: &str) -> DbResult<bool> {
        Ok(self
            .lock()
            .query_row(
                "SELECT 1 FROM results WHERE session_id = ?1 AND task_kind = ?2 AND analyzer_id = ?3",
                params![session_id, task_kind, analyzer_id],
                |_| Ok(()),
            )
            .optional()?
            .is_some())
    }

    /// Results of a patient's sessions, in session order.
    pub fn results_of_patient(&self, patient_id: &str) -> DbResult<Vec<ResultRow>> {
        let conn = self.lock();
        let cols = Self::RESULT_COLS.split(", ").map(|c| format!("r.{c}")).collect::<Vec<_>>().join(", ");
        let mut stmt = conn.prepare(&format!(
            "SELECT {cols} FROM results r JOIN sessions s ON s.session_id = r.session_id
             WHERE s.patient_id = ?1 ORDER BY s.received_at, s.rowid, r.task_kind, r.analyzer_id"
        ))?;
        let rows = stmt.query_map([patient_id], Self::result_from_row)?;
        rows.map(|r| Self::finish_result(r?)).collect()
    }

    /// Total number of rows per idempotency key; used by audits.
    pub fn result_key_counts(&self) -> DbResult<Vec<((String, String, String), i64)>> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT session_id, task_kind, analyzer_id, COUNT(*) FROM results
             GROUP BY session_id, task_kind, analyzer_id ORDER BY 1, 2, 3",
        )?;
        let rows = stmt.query_map([], |r| Ok(((r.get(0)?, r.get(1)?, r.get(2)?), r.get(3)?)))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    // Dead letters

    /// Records a permanently failed task and marks it dead.
    pub fn record_dead_letter(&self, d: &DeadLetter) -> DbResult<()> {
        self.with_tx(|tx| {
            tx.execute(
                "INSERT OR IGNORE INTO dead_letters
                 (session_id, task_kind, analyzer_id, message_id, attempts, reason, created_at)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                params![d.session_id, d.task_kind, d.analyzer_id, d.message_id, d.attempts, d.reason, d.created_at],
            )?;
            tx.execute(
                "UPDATE tasks SET state = 'dead'
                 WHERE session_id = ?1 AND task_kind = ?2 AND analyzer_id = ?3 AND state = 'pending'",
                params![d.session_id, d.task_kind, d.analyzer_id],
            )?;
            Ok(())
        })
    }

    pub fn dead_letters_of(&self, session_id: &str) -> DbResult<Vec<DeadLetter>> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT session_id, task_kind, analyzer_id, message_id, attempts, reason, created_at
             FROM dead_letters WHERE session_id = ?1 ORDER BY task_kind, analyzer_id",
        )?;
        let rows = stmt.query_map([session_id], |r| {
            Ok(DeadLetter {
                session_id: r.get(0)?,
                task_kind: r.get(1)?,
                analyzer_id: r.get(2)?,
                message_id: r.get(3)?,
                attempts: r.get(4)?,
                reason: r.get(5)?,
                created_at: r.get(6)?,
            })
        })?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// Settles a session whose work rows are all finished: `complete`, or
    /// `failed` if any task was dead-lettered. Returns the new status, or
    /// `None` if work is still pending or the session was already settled.
    pub fn settle_session(&self, session_id: &str) -> DbResult<Option<SessionStatus>> {
        self.with_tx(|tx| {
            let (pending, dead): (i64, i64) = tx.query_row(
                "SELECT COALESCE(SUM(state = 'pending'), 0), COALESCE(SUM(state = 'dead'), 0)
                 FROM tasks WHERE session_id = ?1",
                [session_id],
                |r| Ok((r.get(0)?, r.get(1)?)),
            )?;
            if pending > 0 {
                return Ok(None);
            }
            let (status, detail) = if dead > 0 {
                (SessionStatus::Failed, Some(format!("{dead} task(s) dead-lettered")))
            } else {
                (SessionStatus::Complete, None)
            };
            let n = tx.execute(
                "UPDATE sessions SET status = ?2, detail = ?3 WHERE session_id = ?1 AND status = 'processing'",
                params![session_id, status.as_str(), detail],
            )?;
            Ok((n == 1).then_some(status))
        })
    }

    /// Remembers why the latest attempt at a task failed.
    pub fn note_task_error(&self, session_id: &str, task_kind: &str, analyzer_id: &str, error: &str) -> DbResult<()> {
        self.lock().execute(
            "UPDATE tasks SET last_error = ?4 WHERE session_id = ?1 AND task_kind = ?2 AND analyzer_id = ?3",
            params![session_id, task_kind, analyzer_id, error],
        )?;
        Ok(())
    }

    pub fn last_task_error(&self, session_id: &str, task_kind: &str, analyzer_id: &str) -> DbResult<Option<String>> {
        Ok(self
            .lock()
            .query_row(
                "SELECT last_error FROM tasks WHERE session_id = ?1 AND task_kind = ?2 AND analyzer_id = ?3",
                params![session_id, task_kind, analyzer_id],
                |r| r.get(0),
            )
            .optional()?
            .flatten())
    }

    pub fn pending_task_count(&self, session_id: &str) -> DbResult<i64> {
        Ok(self.lock().query_row(
            "SELECT COUNT(*) FROM tasks WHERE session_id = ?1 AND state = 'pending'",
            [session_id],
            |r| r.get(0),
        )?)
    }

    // Views

    pub fn task_progress(&self, session_id: &str) -> DbResult<Vec<TaskProgress>> {
        Ok(self
            .tasks_of(session_id)?
            .into_iter()
            .map(|t| TaskProgress { task_kind: t.task_kind, analyzer_id: t.analyzer_id, state: t.state })
            .collect())
    }

    /// LP-index series of a patient for one task, in `received_at` order.
    /// Only settled sessions contribute. Each result gives one point; tasks
    /// that were dead-lettered give a flagged point without a value.
    pub fn lp_series(&self, patient_id: &str, task_kind: &str, analyzer_id: Option<&str>) -> DbResult<Vec<SeriesPoint>> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT s.session_id, s.received_at, t.analyzer_id, t.state, r.task_status, r.lp_index, r.quality
             FROM sessions s
             JOIN tasks t ON t.session_id = s.session_id
             LEFT JOIN results r ON r.session_id = t.session_id AND r.task_kind = t.task_kind
                                AND r.analyzer_id = t.analyzer_id
             WHERE s.patient_id = ?1 AND t.task_kind = ?2 AND s.status IN ('complete', 'failed')
               AND (?3 IS NULL OR t.analyzer_id = ?3)
             ORDER BY s.received_at, s.rowid, t.analyzer_id",
        )?;
        let rows = stmt.query_map(params![patient_id, task_kind, analyzer_id], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, Option<String>>(4)?,
                r.get::<_, Option<f64>>(5)?,
                r.get::<_, Option<String>>(6)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (session_id, ts, analyzer, state, status, value, quality) = row?;
            let (flagged, flag_reason) = match (TaskState::parse(&state)?, status.as_deref()) {
                (TaskState::Dead, _) => (true, Some("analysis dead-lettered".to_string())),
                (_, Some("failed")) => {
                    let q: QualityReport = json_col(quality.as_deref().unwrap_or("{}"), "quality")?;
                    (true, Some(q.failure_reason.unwrap_or_else(|| "task failed".into())))
                }
                (_, Some(_)) => {
                    let q: QualityReport = json_col(quality.as_deref().unwrap_or("{}"), "quality")?;
                    if q.no_detection_frames > 0 || q.low_quality_frames > 0 {
                        (
                            true,
                            Some(format!(
                                "{} of {} frames without detection, {} low quality",
                                q.no_detection_frames, q.sampled_frames, q.low_quality_frames
                            )),
                        )
                    } else {
                        (false, None)
                    }
                }
                (_, None) => (true, Some("no result".to_string())),
            };
            out.push(SeriesPoint {
                session_id,
                session_timestamp: ts,
                task_kind: task_kind.to_string(),
                analyzer_id: analyzer,
                value,
                flagged,
                flag_reason,
            });
        }
        Ok(out)
    }
}
