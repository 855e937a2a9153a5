//! Minimal S3-compatible server: path-style object PUT/GET/DELETE and
//! ListObjectsV2 with small pages so pagination is exercised.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::any;
use axum::Router;
use sha2::{Digest, Sha256};

const PAGE: usize = 2;

#[derive(Default)]
struct Inner {
    objects: Mutex<BTreeMap<(String, String), Vec<u8>>>,
    sse_puts: AtomicUsize,
    unsigned: AtomicUsize,
}

pub struct MockS3 {
    addr: SocketAddr,
    inner: Arc<Inner>,
}

impl MockS3 {
    pub fn start() -> Self {
        let inner = Arc::new(Inner::default());
        let state = Arc::clone(&inner);
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let app = Router::new()
                    .route("/{bucket}", any(list))
                    .route("/{bucket}/{*key}", any(object))
                    .with_state(state);
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        Self { addr: rx.recv().unwrap(), inner }
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn sse_puts(&self) -> usize {
        self.inner.sse_puts.load(Ordering::SeqCst)
    }

    pub fn unsigned_requests(&self) -> usize {
        self.inner.unsigned.load(Ordering::SeqCst)
    }
}

fn check_signature(inner: &Inner, headers: &HeaderMap, body: &[u8]) -> bool {
    let auth_ok = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("AWS4-HMAC-SHA256 Credential="));
    let hash_ok = headers
        .get("x-amz-content-sha256")
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v == hex::encode(Sha256::digest(body)));
    let ok = auth_ok && hash_ok && headers.contains_key("x-amz-date");
    if !ok {
        inner.unsigned.fetch_add(1, Ordering::SeqCst);
    }
    ok
}

async fn object(
    State(inner): State<Arc<Inner>>,
    method: Method,
    Path((bucket, key)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    if !check_signature(&inner, &headers, &body) {
        return StatusCode::FORBIDDEN.into_response();
    }
    let mut objects = inner.objects.lock().unwrap();
    match method {
        Method::PUT => {
            if headers.get("x-amz-server-side-encryption").is_some() {
                inner.sse_puts.fetch_add(1, Ordering::SeqCst);
            }
            objects.insert((bucket, key), body.to_vec());
            StatusCode::OK.into_response()
        }
        Method::GET => match objects.get(&(bucket, key)) {
            Some(data) => data.clone().into_response(),
            None => (StatusCode::NOT_FOUND, "<Error><Code>NoSuchKey</Code></Error>").into_response(),
        },
        Method::DELETE => {
            objects.remove(&(bucket, key));
            StatusCode::NO_CONTENT.into_response()
        }
        _ => StatusCode::METHOD_NOT_ALLOWED.into_response(),
    }
}

async fn list(
    State(inner): State<Arc<Inner>>,
    Path(bucket): Path<String>,
    Query(q): Query<BTreeMap<String, String>>,
    headers: HeaderMap,
) -> Response {
    if !check_signature(&inner, &headers, b"") {
        return StatusCode::FORBIDDEN.into_response();
    }
    let prefix = q.get("prefix").cloned().unwrap_or_default();
    let after = q.get("continuation-token").cloned();
    let objects = inner.objects.lock().unwrap();
    let keys: Vec<&String> = objects
        .keys()
        .filter(|(b, k)| *b == bucket && k.starts_with(&prefix))
        .map(|(_, k)| k)
        .filter(|k| after.as_ref().is_none_or(|a| k.as_str() > a.as_str()))
        .collect();
    let page: Vec<&String> = keys.iter().take(PAGE).copied().collect();
    let truncated = keys.len() > PAGE;
    let mut xml = String::from(r#"<?xml version="1.0" encoding="UTF-8"?><ListBucketResult xmlns="http://s3.amazonaws.com/doc/2006-03-01/">"#);
    xml.push_str(&format!("<Name>{bucket}</Name><KeyCount>{}</KeyCount><IsTruncated>{truncated}</IsTruncated>", page.len()));
    if truncated {
        xml.push_str(&format!("<NextContinuationToken>{}</NextContinuationToken>", escape(page.last().unwrap())));
    }
    for k in &page {
        xml.push_str(&format!("<Contents><Key>{}</Key></Contents>", escape(k)));
    }
    xml.push_str("</ListBucketResult>");
    xml.into_response()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
