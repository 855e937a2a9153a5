#![allow(dead_code)]

pub mod e2e;
pub mod faults;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use oromon_server::api::{router, ApiState};
use oromon_server::app;
use oromon_server::auth::PasswordHasher;
use oromon_server::clock::{Clock, ManualClock};
use oromon_server::config::Config;
use oromon_server::db::{ClinicalScores, Clinician, Patient};
use oromon_server::pipeline::Pipeline;
use oromon_store::{BucketRole, ObjectKey};
use serde_json::Value;
use tower::ServiceExt;

pub const PASSWORD: &str = "correct horse battery";
pub const DAY_MS: i64 = 86_400_000;

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub config: Config,
    pub clock: Arc<ManualClock>,
    pub pipeline: Arc<Pipeline>,
}

impl Harness {
    pub fn new() -> Self {
        Self::with(|_| {})
    }

    /// Starts from a config with a short visibility timeout, three attempts
    /// and no fsync, then applies `tweak`.
    pub fn with(tweak: impl FnOnce(&mut Config)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut config = Config::parse(&format!(
            "data_dir = {:?}\n[pipeline]\nvisibility_timeout_s = 10\nfsync = false\nmax_attempts = 3\n",
            dir.path().display().to_string()
        ))
        .unwrap();
        tweak(&mut config);
        // 2024-03-01T00:00:00Z
        let clock = Arc::new(ManualClock::new(1_709_251_200_000));
        let pipeline = app::build_pipeline(&config, clock.clone() as Arc<dyn Clock>, None).unwrap();
        Self { dir, config, clock, pipeline }
    }

    /// Simulates a process restart: queues and database are reopened from
    /// disk and all in-memory state is lost.
    pub fn restart(&mut self) {
        let clock = self.clock.clone() as Arc<dyn Clock>;
        self.pipeline = app::build_pipeline(&self.config, clock, None).unwrap();
    }

    pub fn router(&self, notify_on_upload: bool) -> Router {
        let mut state: ApiState = app::api_state(&self.config, self.pipeline.clone());
        state.hasher = PasswordHasher::fast();
        state.notify_on_upload = notify_on_upload;
        router(state)
    }

    pub fn add_clinician(&self, username: &str) -> String {
        let c = Clinician {
            clinician_id: format!("clin-{username}"),
            username: username.into(),
            display_name: username.into(),
            created_at: self.pipeline.now(),
        };
        self.pipeline.db.insert_clinician(&c, &PasswordHasher::fast().hash(PASSWORD)).unwrap();
        c.clinician_id
    }

    pub fn add_patient(&self, clinician_id: &str, username: &str) -> String {
        let p = Patient {
            patient_id: format!("pat-{username}"),
            clinician_id: clinician_id.into(),
            username: username.into(),
            display_name: username.into(),
            scores: ClinicalScores::default(),
            created_at: self.pipeline.now(),
        };
        self.pipeline.db.insert_patient(&p, &PasswordHasher::fast().hash(PASSWORD)).unwrap();
        p.patient_id
    }

    pub fn temp_objects(&self) -> Vec<ObjectKey> {
        self.pipeline.store.list(BucketRole::Temporary, "").unwrap()
    }

    /// Drops an archive straight into the patient bucket, as if uploaded,
    /// and returns its key.
    pub fn put_archive(&self, patient_id: &str, session_id: &str, archive: &[u8]) -> ObjectKey {
        let key = oromon_server::pipeline::archive_key(patient_id, session_id).unwrap();
        self.pipeline.store.put(&key, archive).unwrap();
        key
    }
}

pub async fn call(router: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    send(router, req).await
}

pub async fn send(router: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn login(router: &Router, username: &str) -> String {
    let (status, body) = call(
        router,
        "POST",
        "/auth/login",
        None,
        Some(serde_json::json!({ "username": username, "password": PASSWORD })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body["token"].as_str().unwrap().to_string()
}

pub fn multipart_request(token: &str, field: &str, payload: &[u8]) -> Request<Body> {
    let boundary = "oromon-test-boundary";
    let mut body = Vec::new();
    body.extend_from_slice(
        format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"session.zip\"\r\n\
             Content-Type: application/zip\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(payload);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    Request::builder()
        .method("POST")
        .uri("/sessions")
        .header("authorization", format!("Bearer {token}"))
        .header("content-type", format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap()
}

pub async fn upload(router: &Router, token: &str, archive: &[u8]) -> (StatusCode, Value) {
    send(router, multipart_request(token, "archive", archive)).await
}
