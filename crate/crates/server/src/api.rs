//! HTTP+JSON API for clinicians and patients.
//!
//! Every route except `/health`, `/tasks` and `/auth/login` needs an
//! `Authorization: Bearer <token>` header. Patients only reach their own
//! data and never see index values; clinicians reach the patients they
//! registered. Results are read-only: other methods on result routes answer
//! 405.

use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use oromon_core::TaskKind;
use oromon_store::{read_manifest, ArchiveError, ObjectStore};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::auth::{generate_password, new_token, token_hash, PasswordHasher};
use crate::db::{
    ClinicalScores, Db, DbError, DeadLetter, Patient, ResultRow, Role, ScheduleEntry, SessionRecord, SeriesPoint,
    TaskProgress,
};
use crate::pipeline::{archive_key, Pipeline};

#[derive(Clone)]
pub struct ApiState {
    pub pipeline: Arc<Pipeline>,
    pub hasher: PasswordHasher,
    pub token_ttl_ms: i64,
    pub max_upload_bytes: u64,
    /// Run orchestration as soon as an upload lands.
    pub notify_on_upload: bool,
}

impl ApiState {
    fn db(&self) -> &Db {
        &self.pipeline.db
    }

    fn store(&self) -> &dyn ObjectStore {
        self.pipeline.store.as_ref()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token")
    }

    fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "not permitted")
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<DbError> for ApiError {
    fn from(e: DbError) -> Self {
        match e {
            DbError::NotFound(what) => ApiError::new(StatusCode::NOT_FOUND, format!("{what} not found")),
            DbError::Conflict(m) => ApiError::new(StatusCode::CONFLICT, m),
            DbError::Invalid(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m),
            other => {
                tracing::error!(error = %other, "database failure");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "database failure")
            }
        }
    }
}

impl From<oromon_store::StoreError> for ApiError {
    fn from(e: oromon_store::StoreError) -> Self {
        match e {
            oromon_store::StoreError::NotFound(k) => ApiError::new(StatusCode::NOT_FOUND, format!("{k} not found")),
            other => {
                tracing::error!(error = %other, "storage failure");
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "storage unavailable, retry later")
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking database/storage work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("handler panicked: {e}"))))
}

#[derive(Debug, Clone)]
pub struct Caller {
    pub role: Role,
    pub subject_id: String,
}

fn caller(state: &ApiState, headers: &HeaderMap) -> ApiResult<Caller> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(ApiError::unauthorized)?;
    let (role, subject_id) = state
        .db()
        .token(&token_hash(token.trim()), state.pipeline.clock.now_ms())?
        .ok_or_else(ApiError::unauthorized)?;
    Ok(Caller { role, subject_id })
}

fn require_clinician(c: &Caller) -> ApiResult<()> {
    if c.role == Role::Clinician {
        Ok(())
    } else {
        Err(ApiError::forbidden())
    }
}

/// Loads a patient the caller may see: the patient themself, or the
/// clinician who registered them.
fn visible_patient(state: &ApiState, c: &Caller, patient_id: &str) -> ApiResult<Patient> {
    match c.role {
        Role::Patient if c.subject_id != patient_id => Err(ApiError::forbidden()),
        Role::Patient => Ok(state.db().patient(patient_id)?),
        Role::Clinician => {
            let p = state.db().patient(patient_id)?;
            if p.clinician_id == c.subject_id {
                Ok(p)
            } else {
                Err(ApiError::forbidden())
            }
        }
    }
}

fn owned_patient(state: &ApiState, c: &Caller, patient_id: &str) -> ApiResult<Patient> {
    require_clinician(c)?;
    visible_patient(state, c, patient_id)
}

fn visible_session(state: &ApiState, c: &Caller, session_id: &str) -> ApiResult<SessionRecord> {
    let s = match state.db().session(session_id) {
        Ok(s) => s,
        // Patients learn nothing about sessions that are not theirs.
        Err(DbError::NotFound(_)) if c.role == Role::Patient => return Err(ApiError::forbidden()),
        Err(e) => return Err(e.into()),
    };
    visible_patient(state, c, &s.patient_id)?;
    Ok(s)
}

pub fn router(state: ApiState) -> Router {
    let upload_limit = usize::try_from(state.max_upload_bytes).unwrap_or(usize::MAX).saturating_add(64 * 1024);
    Router::new()
        .route("/health", get(health))
        .route("/tasks", get(tasks))
        .route("/auth/login", post(login))
        .route("/patients", post(register_patient).get(list_patients))
        .route("/patients/{id}", get(get_patient).put(update_patient))
        .route("/patients/{id}/schedule", get(get_schedule).put(put_schedule))
        .route("/patients/{id}/schedule/{date}", delete(delete_schedule_entry))
        .route("/patients/{id}/sessions", get(patient_sessions))
        .route("/patients/{id}/series", get(series))
        .route("/patients/{id}/results", get(patient_results))
        .route("/sessions", post(upload_session).layer(DefaultBodyLimit::max(upload_limit)))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/archive", get(session_archive))
        .route("/sessions/{id}/results/{task}/{analyzer}", get(get_result))
        .with_state(state)
}

async fn health(State(state): State<ApiState>) -> Json<serde_json::Value> {
    let queues: serde_json::Map<String, serde_json::Value> = state
        .pipeline
        .queues()
        .map(|(id, q)| (id.to_string(), serde_json::to_value(q.stats()).expect("stats serialize")))
        .collect();
    Json(json!({ "status": "ok", "queues": queues }))
}

async fn tasks(State(state): State<ApiState>) -> Json<Vec<TaskKind>> {
    Json(state.pipeline.catalog.iter().cloned().collect())
}

#[derive(Debug, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    pub role: Role,
    pub subject_id: String,
    pub expires_at: String,
}

async fn login(State(state): State<ApiState>, Json(req): Json<LoginRequest>) -> ApiResult<Json<LoginResponse>> {
    blocking(move || {
        let denied = || ApiError::new(StatusCode::UNAUTHORIZED, "unknown user or wrong password");
        let (role, subject_id, hash) = state.db().credentials(&req.username)?.ok_or_else(denied)?;
        if !state.hasher.verify(&req.password, &hash) {
            return Err(denied());
        }
        let (token, token_hash) = new_token();
        let expires = state.pipeline.clock.now_ms() + state.token_ttl_ms;
        state.db().insert_token(&token_hash, role, &subject_id, expires)?;
        let expires_at = crate::clock::iso8601(
            chrono::DateTime::from_timestamp_millis(expires).expect("token expiry within chrono range"),
        );
        Ok(Json(LoginResponse { token, role, subject_id, expires_at }))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct NewPatient {
    pub username: String,
    pub display_name: String,
    /// Initial password; generated when absent.
    #[serde(default)]
    pub password: Option<String>,
    #[serde(flatten)]
    pub scores: ClinicalScores,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Credentials {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegisteredPatient {
    pub patient: Patient,
    pub credentials: Credentials,
}

async fn register_patient(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Json(req): Json<NewPatient>,
) -> ApiResult<(StatusCode, Json<RegisteredPatient>)> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        require_clinician(&c)?;
        if req.username.trim().is_empty() {
            return Err(ApiError::bad_request("username must not be empty"));
        }
        req.scores.validate()?;
        let password = req.password.unwrap_or_else(generate_password);
        let patient = Patient {
            patient_id: uuid::Uuid::new_v4().to_string(),
            clinician_id: c.subject_id,
            username: req.username.clone(),
            display_name: req.display_name,
            scores: req.scores,
            created_at: state.pipeline.now(),
        };
        state.db().insert_patient(&patient, &state.hasher.hash(&password))?;
        Ok((
            StatusCode::CREATED,
            Json(RegisteredPatient { patient, credentials: Credentials { username: req.username, password } }),
        ))
    })
    .await
}

async fn list_patients(State(state): State<ApiState>, headers: HeaderMap) -> ApiResult<Json<Vec<Patient>>> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        require_clinician(&c)?;
        Ok(Json(state.db().patients_of(&c.subject_id)?))
    })
    .await
}

async fn get_patient(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<Patient>> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        Ok(Json(visible_patient(&state, &c, &id)?))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct PatientUpdate {
    pub display_name: String,
    #[serde(flatten)]
    pub scores: ClinicalScores,
}

async fn update_patient(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<PatientUpdate>,
) -> ApiResult<Json<Patient>> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        owned_patient(&state, &c, &id)?;
        Ok(Json(state.db().update_patient(&id, &req.display_name, &req.scores)?))
    })
    .await
}

async fn get_schedule(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<ScheduleEntry>>> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        visible_patient(&state, &c, &id)?;
        Ok(Json(state.db().schedule(&id)?))
    })
    .await
}

async fn put_schedule(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(entries): Json<Vec<ScheduleEntry>>,
) -> ApiResult<Json<Vec<ScheduleEntry>>> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        owned_patient(&state, &c, &id)?;
        for e in &entries {
            chrono::NaiveDate::parse_from_str(&e.date, "%Y-%m-%d")
                .map_err(|_| ApiError::bad_request(format!("date {:?} is not YYYY-MM-DD", e.date)))?;
            if let Some(k) = e.task_kinds.iter().find(|k| !state.pipeline.catalog.contains(k)) {
                return Err(ApiError::bad_request(format!("unknown task kind {k:?}")));
            }
        }
        state.db().replace_schedule(&id, &entries)?;
        Ok(Json(state.db().schedule(&id)?))
    })
    .await
}

async fn delete_schedule_entry(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path((id, date)): Path<(String, String)>,
) -> ApiResult<StatusCode> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        owned_patient(&state, &c, &id)?;
        state.db().delete_schedule_entry(&id, &date)?;
        Ok(StatusCode::NO_CONTENT)
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UploadResponse {
    pub session_id: String,
    pub status: crate::db::SessionStatus,
    pub received_at: String,
}

async fn upload_session(
    State(state): State<ApiState>,
    headers: HeaderMap,
    mut multipart: Multipart,
) -> ApiResult<(StatusCode, Json<UploadResponse>)> {
    let st = state.clone();
    let c = blocking(move || caller(&st, &headers)).await?;
    if c.role != Role::Patient {
        return Err(ApiError::forbidden());
    }
    let mut archive = None;
    while let Some(field) = multipart.next_field().await.map_err(multipart_error)? {
        if field.name() == Some("archive") {
            archive = Some(field.bytes().await.map_err(multipart_error)?);
        }
    }
    let archive = archive.ok_or_else(|| ApiError::bad_request("multipart field \"archive\" is missing"))?;
    if archive.len() as u64 > state.max_upload_bytes {
        return Err(ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "archive exceeds the upload size cap"));
    }

    let st = state.clone();
    let (response, key) = blocking(move || {
        let manifest = read_manifest(&archive, &st.pipeline.catalog).map_err(|e| match e {
            ArchiveError::TooLarge { .. } => ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, e.to_string()),
            other => ApiError::bad_request(other.to_string()),
        })?;
        if manifest.patient_id != c.subject_id {
            return Err(ApiError::bad_request("manifest patient_id does not match the uploading patient"));
        }
        let session_id = uuid::Uuid::new_v4().to_string();
        let key = archive_key(&c.subject_id, &session_id)?;
        st.store().put(&key, &archive)?;
        let received_at = st.pipeline.now();
        st.db().ensure_session(&session_id, &c.subject_id, &received_at, &key)?;
        let session = st.db().session(&session_id)?;
        Ok((
            UploadResponse { session_id, status: session.status, received_at: session.received_at },
            key,
        ))
    })
    .await?;

    if state.notify_on_upload {
        let pipeline = state.pipeline.clone();
        tokio::task::spawn_blocking(move || {
            if let Err(e) = pipeline.orchestrate(&key) {
                tracing::warn!(%key, error = %e, "orchestration after upload failed; the sweep will retry");
            }
        });
    }
    Ok((StatusCode::CREATED, Json(response)))
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    ApiError::new(e.status(), e.body_text())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub session: SessionRecord,
    pub tasks: Vec<TaskProgress>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dead_letters: Vec<DeadLetter>,
}

fn session_view(state: &ApiState, c: &Caller, mut session: SessionRecord) -> ApiResult<SessionView> {
    let tasks = state.db().task_progress(&session.session_id)?;
    let dead_letters = match c.role {
        Role::Clinician => state.db().dead_letters_of(&session.session_id)?,
        Role::Patient => {
            session.archive_key = None;
            session.detail = None;
            Vec::new()
        }
    };
    Ok(SessionView { session, tasks, dead_letters })
}

async fn get_session(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionView>> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        let s = visible_session(&state, &c, &id)?;
        Ok(Json(session_view(&state, &c, s)?))
    })
    .await
}

async fn patient_sessions(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<SessionView>>> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        visible_patient(&state, &c, &id)?;
        let sessions = state.db().sessions_of(&id)?;
        Ok(Json(sessions.into_iter().map(|s| session_view(&state, &c, s)).collect::<ApiResult<_>>()?))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct SeriesQuery {
    pub task: String,
    #[serde(default)]
    pub analyzer: Option<String>,
}

async fn series(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<SeriesQuery>,
) -> ApiResult<Json<Vec<SeriesPoint>>> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        owned_patient(&state, &c, &id)?;
        if !state.pipeline.catalog.contains(&q.task) {
            return Err(ApiError::bad_request(format!("unknown task kind {:?}", q.task)));
        }
        Ok(Json(state.db().lp_series(&id, &q.task, q.analyzer.as_deref())?))
    })
    .await
}

/// A result without its per-frame landmarks.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultSummary {
    pub session_id: String,
    pub task_kind: String,
    pub analyzer_id: String,
    pub created_at: String,
    pub task_status: crate::db::TaskStatus,
    pub lp_index: Option<f64>,
    pub quality: crate::db::QualityReport,
}

impl From<ResultRow> for ResultSummary {
    fn from(r: ResultRow) -> Self {
        Self {
            session_id: r.session_id,
            task_kind: r.task_kind,
            analyzer_id: r.analyzer_id,
            created_at: r.created_at,
            task_status: r.task_status,
            lp_index: r.lp_index,
            quality: r.quality,
        }
    }
}

/// Patient-facing completion status. Carries no index values.
#[derive(Debug, Serialize, Deserialize)]
pub struct CompletionStatus {
    pub session_id: String,
    pub received_at: String,
    pub status: crate::db::SessionStatus,
    pub tasks: Vec<TaskProgress>,
}

async fn patient_results(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        visible_patient(&state, &c, &id)?;
        match c.role {
            Role::Clinician => {
                let rows: Vec<ResultSummary> = state.db().results_of_patient(&id)?.into_iter().map(Into::into).collect();
                Ok(Json(rows).into_response())
            }
            Role::Patient => {
                let mut out = Vec::new();
                for s in state.db().sessions_of(&id)? {
                    out.push(CompletionStatus {
                        tasks: state.db().task_progress(&s.session_id)?,
                        session_id: s.session_id,
                        received_at: s.received_at,
                        status: s.status,
                    });
                }
                Ok(Json(out).into_response())
            }
        }
    })
    .await
}

async fn get_result(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path((id, task, analyzer)): Path<(String, String, String)>,
) -> ApiResult<Json<ResultRow>> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        require_clinician(&c)?;
        visible_session(&state, &c, &id)?;
        Ok(Json(state.db().result(&id, &task, &analyzer)?))
    })
    .await
}

async fn session_archive(
    State(state): State<ApiState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    blocking(move || {
        let c = caller(&state, &headers)?;
        require_clinician(&c)?;
        let s = visible_session(&state, &c, &id)?;
        let key = s
            .archive_key
            .ok_or_else(|| ApiError::new(StatusCode::GONE, "archive expired under the retention policy"))?;
        let bytes = state.store().get(&key)?;
        Ok(([(header::CONTENT_TYPE, "application/zip")], bytes).into_response())
    })
    .await
}
