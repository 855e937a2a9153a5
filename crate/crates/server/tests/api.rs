mod common;

use axum::http::StatusCode;
use common::*;
use oromon_server::db::SessionStatus;
use oromon_server::synth::{session_archive, SynthTask};
use serde_json::json;

struct World {
    h: Harness,
    router: axum::Router,
    /// Tokens: clinician A, clinician B, patient P (of A), patient Q (of B).
    a: String,
    b: String,
    p: String,
    q: String,
    p_id: String,
    q_id: String,
}

async fn world_with(h: Harness) -> World {
    let router = h.router(false);
    let a_id = h.add_clinician("a");
    let b_id = h.add_clinician("b");
    let p_id = h.add_patient(&a_id, "p");
    let q_id = h.add_patient(&b_id, "q");
    World {
        a: login(&router, "a").await,
        b: login(&router, "b").await,
        p: login(&router, "p").await,
        q: login(&router, "q").await,
        h,
        router,
        p_id,
        q_id,
    }
}

async fn world() -> World {
    world_with(Harness::new()).await
}

fn tasks() -> Vec<SynthTask> {
    vec![SynthTask::ramp("maximum_smile", 10.0, 10, 2.0), SynthTask::ramp("lips_stretching", 10.0, 10, 3.0)]
}

/// Uploads a session for P and processes it.
async fn processed_session(w: &World) -> String {
    let (status, body) = upload(&w.router, &w.p, &session_archive(&w.p_id, &tasks()).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let p = w.h.pipeline.clone();
    tokio::task::spawn_blocking(move || {
        p.sweep().unwrap();
        p.drain().unwrap();
    })
    .await
    .unwrap();
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn public_endpoints() {
    let w = world().await;
    let (status, body) = call(&w.router, "GET", "/health", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert!(body["queues"]["oracle"].is_object());
    let (status, body) = call(&w.router, "GET", "/tasks", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_array().unwrap().len(), 6);
}

#[tokio::test]
async fn login_and_tokens() {
    let w = world().await;
    let bad = json!({ "username": "a", "password": "wrong" });
    assert_eq!(call(&w.router, "POST", "/auth/login", None, Some(bad)).await.0, StatusCode::UNAUTHORIZED);
    let nobody = json!({ "username": "nobody", "password": PASSWORD });
    assert_eq!(call(&w.router, "POST", "/auth/login", None, Some(nobody)).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&w.router, "GET", "/patients", None, None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&w.router, "GET", "/patients", Some("garbage"), None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&w.router, "GET", "/patients", Some(&w.a), None).await.0, StatusCode::OK);

    // Tokens expire after the configured lifetime.
    w.h.clock.advance_ms(w.h.config.auth.token_ttl_s as i64 * 1000 + 1);
    assert_eq!(call(&w.router, "GET", "/patients", Some(&w.a), None).await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn role_and_ownership_matrix() {
    let w = world().await;
    let session = processed_session(&w).await;
    let p = &w.p_id;
    let q = &w.q_id;
    use StatusCode as S;

    // (method, uri, body, [A, B, P, Q])
    let cases: Vec<(&str, String, Option<serde_json::Value>, [StatusCode; 4])> = vec![
        ("GET", "/patients".into(), None, [S::OK, S::OK, S::FORBIDDEN, S::FORBIDDEN]),
        ("GET", format!("/patients/{p}"), None, [S::OK, S::FORBIDDEN, S::OK, S::FORBIDDEN]),
        ("GET", format!("/patients/{q}"), None, [S::FORBIDDEN, S::OK, S::FORBIDDEN, S::OK]),
        (
            "PUT",
            format!("/patients/{p}"),
            Some(json!({ "display_name": "P", "als_frs_r": 40 })),
            [S::OK, S::FORBIDDEN, S::FORBIDDEN, S::FORBIDDEN],
        ),
        ("GET", format!("/patients/{p}/schedule"), None, [S::OK, S::FORBIDDEN, S::OK, S::FORBIDDEN]),
        (
            "PUT",
            format!("/patients/{p}/schedule"),
            Some(json!([{ "date": "2024-03-04", "task_kinds": ["maximum_smile"] }])),
            [S::OK, S::FORBIDDEN, S::FORBIDDEN, S::FORBIDDEN],
        ),
        ("GET", format!("/patients/{p}/sessions"), None, [S::OK, S::FORBIDDEN, S::OK, S::FORBIDDEN]),
        (
            "GET",
            format!("/patients/{p}/series?task=maximum_smile"),
            None,
            [S::OK, S::FORBIDDEN, S::FORBIDDEN, S::FORBIDDEN],
        ),
        ("GET", format!("/patients/{p}/results"), None, [S::OK, S::FORBIDDEN, S::OK, S::FORBIDDEN]),
        ("GET", format!("/sessions/{session}"), None, [S::OK, S::FORBIDDEN, S::OK, S::FORBIDDEN]),
        ("GET", format!("/sessions/{session}/archive"), None, [S::OK, S::FORBIDDEN, S::FORBIDDEN, S::FORBIDDEN]),
        (
            "GET",
            format!("/sessions/{session}/results/maximum_smile/oracle"),
            None,
            [S::OK, S::FORBIDDEN, S::FORBIDDEN, S::FORBIDDEN],
        ),
        ("GET", "/sessions/does-not-exist".into(), None, [S::NOT_FOUND, S::NOT_FOUND, S::FORBIDDEN, S::FORBIDDEN]),
        ("GET", "/patients/does-not-exist".into(), None, [S::NOT_FOUND, S::NOT_FOUND, S::FORBIDDEN, S::FORBIDDEN]),
    ];
    let tokens = [&w.a, &w.b, &w.p, &w.q];
    for (method, uri, body, expected) in cases {
        for (who, (token, want)) in ["A", "B", "P", "Q"].iter().zip(tokens.iter().zip(expected)) {
            let (got, resp) = call(&w.router, method, &uri, Some(token), body.clone()).await;
            assert_eq!(got, want, "{who} {method} {uri}: {resp}");
        }
    }

    // Only patients upload, and only for themselves.
    let archive = session_archive(p, &tasks()).unwrap();
    assert_eq!(upload(&w.router, &w.a, &archive).await.0, StatusCode::FORBIDDEN);
    let (status, body) = upload(&w.router, &w.q, &archive).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
}

#[tokio::test]
async fn patients_never_see_index_values() {
    let w = world().await;
    let session = processed_session(&w).await;

    let (status, body) = call(&w.router, "GET", &format!("/patients/{}/results", w.p_id), Some(&w.p), None).await;
    assert_eq!(status, StatusCode::OK);
    let text = body.to_string();
    assert!(!text.contains("lp_index") && !text.contains("value"), "{text}");
    assert_eq!(body[0]["tasks"].as_array().unwrap().len(), 2);

    let (_, body) = call(&w.router, "GET", &format!("/sessions/{session}"), Some(&w.p), None).await;
    assert!(body.get("archive_key").is_none(), "{body}");

    let (_, body) = call(&w.router, "GET", &format!("/patients/{}/results", w.p_id), Some(&w.a), None).await;
    assert_eq!(body.as_array().unwrap().len(), 2);
    assert!(body[0]["lp_index"].is_number());
    assert!(body[0].get("frames").is_none());

    let uri = format!("/sessions/{session}/results/maximum_smile/oracle");
    let (_, body) = call(&w.router, "GET", &uri, Some(&w.a), None).await;
    assert_eq!(body["frames"].as_array().unwrap().len(), 8);
}

#[tokio::test]
async fn results_cannot_be_mutated() {
    let w = world().await;
    let session = processed_session(&w).await;
    let uri = format!("/sessions/{session}/results/maximum_smile/oracle");
    let (_, before) = call(&w.router, "GET", &uri, Some(&w.a), None).await;
    for method in ["PUT", "PATCH", "DELETE", "POST"] {
        let (status, _) = call(&w.router, method, &uri, Some(&w.a), Some(json!({ "lp_index": 9.0 }))).await;
        assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED, "{method}");
    }
    let (_, after) = call(&w.router, "GET", &uri, Some(&w.a), None).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn schedule_crud() {
    let w = world().await;
    let uri = format!("/patients/{}/schedule", w.p_id);
    let entries = json!([
        { "date": "2024-03-04", "task_kinds": ["maximum_smile", "lips_protrusion"] },
        { "date": "2024-03-11", "task_kinds": ["maximum_mouth_opening"] },
    ]);
    let (status, body) = call(&w.router, "PUT", &uri, Some(&w.a), Some(entries.clone())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body, entries);
    let (_, body) = call(&w.router, "GET", &uri, Some(&w.p), None).await;
    assert_eq!(body, entries);

    let bad_date = json!([{ "date": "04/03/2024", "task_kinds": [] }]);
    assert_eq!(call(&w.router, "PUT", &uri, Some(&w.a), Some(bad_date)).await.0, StatusCode::BAD_REQUEST);
    let bad_task = json!([{ "date": "2024-03-04", "task_kinds": ["juggling"] }]);
    assert_eq!(call(&w.router, "PUT", &uri, Some(&w.a), Some(bad_task)).await.0, StatusCode::BAD_REQUEST);

    let (status, _) = call(&w.router, "DELETE", &format!("{uri}/2024-03-04"), Some(&w.a), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (_, body) = call(&w.router, "GET", &uri, Some(&w.a), None).await;
    assert_eq!(body, json!([entries[1]]));
    let (status, _) = call(&w.router, "DELETE", &format!("{uri}/2024-03-04"), Some(&w.a), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn patient_registration() {
    let w = world().await;
    let (status, body) = call(
        &w.router,
        "POST",
        "/patients",
        Some(&w.a),
        Some(json!({ "username": "new", "display_name": "New", "moca": 27 })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let password = body["credentials"]["password"].as_str().unwrap();
    assert!(password.len() >= 12);
    let (status, _) =
        call(&w.router, "POST", "/auth/login", None, Some(json!({ "username": "new", "password": password }))).await;
    assert_eq!(status, StatusCode::OK);

    let dup = json!({ "username": "a", "display_name": "clash" });
    assert_eq!(call(&w.router, "POST", "/patients", Some(&w.a), Some(dup)).await.0, StatusCode::CONFLICT);
    let out_of_range = json!({ "username": "x", "display_name": "x", "als_frs_r": 49 });
    assert_eq!(
        call(&w.router, "POST", "/patients", Some(&w.a), Some(out_of_range)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let by_patient = json!({ "username": "y", "display_name": "y" });
    assert_eq!(call(&w.router, "POST", "/patients", Some(&w.p), Some(by_patient)).await.0, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn upload_validation() {
    let w = world_with(Harness::with(|c| c.limits.max_upload_bytes = 64 * 1024)).await;

    let (status, body) = upload(&w.router, &w.p, b"definitely not a zip").await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");

    let (status, _) = send(&w.router, multipart_request(&w.p, "wrong-field", b"x")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let big = SynthTask::ramp("maximum_smile", 30.0, 3000, 2.0);
    let archive = session_archive(&w.p_id, &[big]).unwrap();
    assert!(archive.len() > 64 * 1024);
    let (status, _) = upload(&w.router, &w.p, &archive).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);

    // Nothing was stored for rejected uploads.
    let (_, body) = call(&w.router, "GET", &format!("/patients/{}/sessions", w.p_id), Some(&w.p), None).await;
    assert_eq!(body, json!([]));
}

#[tokio::test]
async fn archive_that_unpacks_too_large_is_malformed() {
    let w = world_with(Harness::with(|c| c.limits.max_decompressed_bytes = 4096)).await;
    let (status, body) = upload(&w.router, &w.p, &session_archive(&w.p_id, &tasks()).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let session = body["session_id"].as_str().unwrap().to_string();
    let p = w.h.pipeline.clone();
    tokio::task::spawn_blocking(move || p.sweep().unwrap()).await.unwrap();
    let (_, body) = call(&w.router, "GET", &format!("/sessions/{session}"), Some(&w.a), None).await;
    assert_eq!(body["status"], "malformed", "{body}");
    assert!(body["detail"].as_str().unwrap().contains("limit"), "{body}");
    assert!(w.h.temp_objects().is_empty());
    assert_eq!(w.h.pipeline.queue("oracle").unwrap().stats().enqueued, 0);
}

#[tokio::test]
async fn timestamps_round_trip() {
    let w = world().await;
    w.h.clock.set_ms(1_709_291_045_123); // 2024-03-01T11:04:05.123Z
    let (status, body) = upload(&w.router, &w.p, &session_archive(&w.p_id, &tasks()).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["received_at"], "2024-03-01T11:04:05.123Z");
    let session = body["session_id"].as_str().unwrap().to_string();

    // Processing later never moves the receipt time.
    w.h.clock.advance_ms(3 * DAY_MS);
    let p = w.h.pipeline.clone();
    tokio::task::spawn_blocking(move || {
        p.sweep().unwrap();
        p.drain().unwrap();
    })
    .await
    .unwrap();
    let record = w.h.pipeline.db.session(&session).unwrap();
    assert_eq!(record.status, SessionStatus::Complete);
    assert_eq!(record.received_at, "2024-03-01T11:04:05.123Z");
    let a = login(&w.router, "a").await;
    let (_, body) =
        call(&w.router, "GET", &format!("/patients/{}/series?task=maximum_smile", w.p_id), Some(&a), None).await;
    assert_eq!(body[0]["session_timestamp"], "2024-03-01T11:04:05.123Z");
    let (_, body) =
        call(&w.router, "GET", &format!("/sessions/{session}/results/maximum_smile/oracle"), Some(&a), None).await;
    assert_eq!(body["created_at"], "2024-03-04T11:04:05.123Z");
}

#[tokio::test]
async fn archives_expire_under_retention() {
    let w = world_with(Harness::with(|c| c.retention_days = Some(30))).await;
    let session = processed_session(&w).await;
    let uri = format!("/sessions/{session}/archive");
    let (status, _) = call(&w.router, "GET", &uri, Some(&w.a), None).await;
    assert_eq!(status, StatusCode::OK);

    w.h.clock.advance_ms(29 * DAY_MS);
    assert_eq!(w.h.pipeline.expire_archives(30).unwrap(), 0);
    w.h.clock.advance_ms(2 * DAY_MS);
    assert_eq!(w.h.pipeline.expire_archives(30).unwrap(), 1);
    let a = login(&w.router, "a").await;
    assert_eq!(call(&w.router, "GET", &uri, Some(&a), None).await.0, StatusCode::GONE);
    // Results outlive the archive.
    let (status, _) =
        call(&w.router, "GET", &format!("/sessions/{session}/results/maximum_smile/oracle"), Some(&a), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn failed_tasks_show_up_flagged() {
    let w = world().await;
    let mut broken = SynthTask::ramp("maximum_smile", 10.0, 10, 2.0);
    broken.omit_sidecar = true;
    let ok = SynthTask::ramp("lips_stretching", 10.0, 10, 2.0);
    let (status, body) = upload(&w.router, &w.p, &session_archive(&w.p_id, &[broken, ok]).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED);
    let session = body["session_id"].as_str().unwrap().to_string();
    let h = &w.h;
    let p = h.pipeline.clone();
    let clock = h.clock.clone();
    let visibility = h.config.pipeline.visibility_timeout_s as i64 * 1000;
    tokio::task::spawn_blocking(move || {
        p.sweep().unwrap();
        for _ in 0..5 {
            p.drain().unwrap();
            clock.advance_ms(visibility + 1);
        }
    })
    .await
    .unwrap();
    let a = login(&w.router, "a").await;
    let (_, body) = call(&w.router, "GET", &format!("/sessions/{session}"), Some(&a), None).await;
    assert_eq!(body["status"], "failed", "{body}");
    let dead = &body["dead_letters"][0];
    assert_eq!(dead["task_kind"], "maximum_smile");
    assert!(dead["reason"].as_str().unwrap().contains("sidecar"), "{dead}");
    let (_, body) =
        call(&w.router, "GET", &format!("/patients/{}/series?task=maximum_smile", w.p_id), Some(&a), None).await;
    assert_eq!(body[0]["flagged"], true);
    assert!(body[0]["value"].is_null());
    let (_, body) =
        call(&w.router, "GET", &format!("/patients/{}/series?task=lips_stretching", w.p_id), Some(&a), None).await;
    assert_eq!(body[0]["flagged"], false);
    assert!(w.h.temp_objects().is_empty());
}
