//! Wiring a [`Config`] into a running service.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use oromon_core::BoxGate;
use oromon_store::{EncryptionKey, LocalStore, ObjectStore, S3Config, S3Credentials, S3Store, UnpackLimits};

use crate::analyzers::{AnalyzerRegistry, ModelLoader};
use crate::api::ApiState;
use crate::auth::PasswordHasher;
use crate::clock::{Clock, SystemClock};
use crate::config::{Config, StorageBackend};
use crate::db::Db;
use crate::decode::DecoderRegistry;
use crate::pipeline::{Pipeline, PipelineSettings, PoolTiming};
use crate::queue::{JournalQueue, QueueOptions};

pub fn open_store(config: &Config) -> anyhow::Result<Arc<dyn ObjectStore>> {
    let encrypted = config.storage.encrypted_buckets.clone();
    Ok(match config.storage.backend {
        StorageBackend::Local => {
            let mut store = LocalStore::open(config.object_root()).context("opening object store")?;
            if !encrypted.is_empty() {
                let path = config
                    .storage
                    .encryption_key_file
                    .as_ref()
                    .context("storage.encrypted_buckets needs storage.encryption_key_file")?;
                let hex = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                store = store.with_encryption(EncryptionKey::from_hex(hex.trim())?, encrypted);
            }
            Arc::new(store)
        }
        StorageBackend::S3 => {
            let s3 = config.storage.s3.as_ref().context("missing [storage.s3]")?;
            let env = |name: &str| std::env::var(name).with_context(|| format!("environment variable {name}"));
            Arc::new(S3Store::new(S3Config {
                endpoint: s3.endpoint.clone(),
                region: s3.region.clone(),
                patient_bucket: s3.patient_bucket.clone(),
                temporary_bucket: s3.temporary_bucket.clone(),
                credentials: S3Credentials {
                    access_key_id: env(&s3.access_key_env)?,
                    secret_access_key: env(&s3.secret_key_env)?,
                    session_token: std::env::var("OROMON_S3_SESSION_TOKEN").ok(),
                },
                encrypted_buckets: encrypted.into_iter().collect(),
                timeout_s: 60,
            })?)
        }
    })
}

/// Builds the pipeline from configuration with the given clock.
pub fn build_pipeline(
    config: &Config,
    clock: Arc<dyn Clock>,
    loader: Option<Arc<dyn ModelLoader>>,
) -> anyhow::Result<Arc<Pipeline>> {
    config.validate()?;
    std::fs::create_dir_all(&config.data_dir).with_context(|| format!("creating {}", config.data_dir.display()))?;
    let db = Arc::new(Db::open(&config.database_path()).context("opening database")?);
    let store = open_store(config)?;
    let p = &config.pipeline;
    let options = QueueOptions { visibility_timeout_ms: p.visibility_timeout_s as i64 * 1000, fsync: p.fsync };
    let mut queues = BTreeMap::new();
    for a in &config.analyzers {
        let path = config.queue_dir().join(format!("{}.journal", a.analyzer_id));
        let q = JournalQueue::open(&a.analyzer_id, &path, options.clone(), clock.clone())
            .with_context(|| format!("opening queue {}", path.display()))?;
        queues.insert(a.analyzer_id.clone(), q);
    }
    let mut registry = AnalyzerRegistry::new(config.analyzers.clone(), BoxGate::new(p.confidence_threshold));
    if let Some(loader) = loader {
        registry = registry.with_loader(loader);
    }
    let settings = PipelineSettings {
        target_fps: p.target_fps,
        batch: p.batch,
        max_workers: p.max_workers,
        max_attempts: p.max_attempts,
        limits: UnpackLimits { max_decompressed_bytes: config.limits.max_decompressed_bytes },
    };
    let pipeline = Pipeline::new(settings, db, store, queues, registry, DecoderRegistry::default(), clock)?
        .with_gestures(config.gesture_table()?);
    Ok(Arc::new(pipeline))
}

pub fn api_state(config: &Config, pipeline: Arc<Pipeline>) -> ApiState {
    ApiState {
        pipeline,
        hasher: PasswordHasher::default(),
        token_ttl_ms: config.auth.token_ttl_s as i64 * 1000,
        max_upload_bytes: config.limits.max_upload_bytes,
        notify_on_upload: true,
    }
}

pub fn pool_timing(config: &Config) -> PoolTiming {
    PoolTiming {
        scale_interval: Duration::from_millis(config.pipeline.scale_interval_ms),
        sweep_interval: Duration::from_secs(config.pipeline.sweep_interval_s),
        retention_days: config.retention_days,
    }
}

pub fn system_clock() -> Arc<dyn Clock> {
    Arc::new(SystemClock)
}
