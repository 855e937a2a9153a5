//! TOML configuration file.
//!
//! ```toml
//! data_dir = "/var/lib/oromon"
//! listen = "127.0.0.1:8080"
//!
//! [pipeline]
//! target_fps = 8.0
//! confidence_threshold = 0.75
//! batch = 4
//! max_workers = 8
//! visibility_timeout_s = 120
//! max_attempts = 5
//!
//! [storage]
//! backend = "local"            # or "s3"
//! encrypted_buckets = ["patient"]
//! encryption_key_file = "/etc/oromon/key.hex"
//!
//! [[analyzers]]
//! analyzer_id = "flmask"
//! kind = "model_backed"
//! model_ref = "models/flmask.onnx"
//! ```

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use oromon_core::{AnalyzerDescriptor, AnalyzerKind, GestureSpec, GestureTable, DEFAULT_CONFIDENCE_THRESHOLD};
use oromon_store::BucketRole;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub storage: StorageConfig,
    #[serde(default)]
    pub limits: LimitsConfig,
    #[serde(default)]
    pub auth: AuthConfig,
    #[serde(default = "default_analyzers")]
    pub analyzers: Vec<AnalyzerDescriptor>,
    /// Per-task override of the gesture landmarks used for the LP-index.
    #[serde(default)]
    pub gestures: BTreeMap<String, GestureSpec>,
    /// Days to keep uploaded archives. Unset means keep forever.
    #[serde(default)]
    pub retention_days: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub target_fps: f64,
    pub confidence_threshold: f64,
    pub batch: usize,
    pub max_workers: usize,
    pub visibility_timeout_s: u64,
    pub max_attempts: u32,
    /// Seconds between backstop sweeps of the patient bucket.
    pub sweep_interval_s: u64,
    /// Milliseconds between worker-scaling decisions.
    pub scale_interval_ms: u64,
    pub fsync: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target_fps: 8.0,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            batch: 4,
            max_workers: 8,
            visibility_timeout_s: 120,
            max_attempts: 5,
            sweep_interval_s: 60,
            scale_interval_ms: 500,
            fsync: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageBackend {
    #[default]
    Local,
    S3,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageConfig {
    pub backend: StorageBackend,
    /// Local backend root; defaults to `<data_dir>/objects`.
    pub root: Option<PathBuf>,
    pub encrypted_buckets: Vec<BucketRole>,
    /// File holding a hex-encoded 256-bit key, for the local backend.
    pub encryption_key_file: Option<PathBuf>,
    pub s3: Option<S3Section>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct S3Section {
    pub endpoint: String,
    pub region: String,
    pub patient_bucket: String,
    pub temporary_bucket: String,
    /// Credentials are read from these environment variables.
    #[serde(default = "default_access_env")]
    pub access_key_env: String,
    #[serde(default = "default_secret_env")]
    pub secret_key_env: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsConfig {
    pub max_upload_bytes: u64,
    pub max_decompressed_bytes: u64,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self { max_upload_bytes: 1 << 30, max_decompressed_bytes: 2 << 30 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    pub token_ttl_s: u64,
}

impl Default for AuthConfig {
    fn default() -> Self {
        Self { token_ttl_s: 12 * 3600 }
    }
}

fn default_listen() -> SocketAddr {
    ([127, 0, 0, 1], 8080).into()
}

fn default_access_env() -> String {
    "OROMON_S3_ACCESS_KEY".into()
}

fn default_secret_env() -> String {
    "OROMON_S3_SECRET_KEY".into()
}

fn default_analyzers() -> Vec<AnalyzerDescriptor> {
    vec![AnalyzerDescriptor::oracle("oracle")]
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut config = Self::parse(&text)?;
        if config.data_dir.is_relative() {
            if let Some(dir) = path.parent() {
                config.data_dir = dir.join(&config.data_dir);
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Defaults with the given data directory.
    pub fn with_data_dir(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            listen: default_listen(),
            pipeline: PipelineConfig::default(),
            storage: StorageConfig::default(),
            limits: LimitsConfig::default(),
            auth: AuthConfig::default(),
            analyzers: default_analyzers(),
            gestures: BTreeMap::new(),
            retention_days: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.pipeline;
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if !(p.target_fps.is_finite() && p.target_fps > 0.0) {
            return bad("pipeline.target_fps must be positive");
        }
        if !(0.0..=1.0).contains(&p.confidence_threshold) {
            return bad("pipeline.confidence_threshold must be in [0, 1]");
        }
        if p.batch == 0 || p.max_workers == 0 || p.max_attempts == 0 {
            return bad("pipeline.batch, max_workers and max_attempts must be at least 1");
        }
        if p.visibility_timeout_s == 0 {
            return bad("pipeline.visibility_timeout_s must be at least 1");
        }
        let mut ids = std::collections::BTreeSet::new();
        for a in &self.analyzers {
            if a.analyzer_id.is_empty()
                || !a.analyzer_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return Err(ConfigError::Invalid(format!("analyzer id {:?} must be [A-Za-z0-9_-]+", a.analyzer_id)));
            }
            if !ids.insert(a.analyzer_id.as_str()) {
                return Err(ConfigError::Invalid(format!("analyzer id {:?} listed twice", a.analyzer_id)));
            }
            if a.kind == AnalyzerKind::ModelBacked && a.model_ref.is_none() {
                return Err(ConfigError::Invalid(format!("analyzer {:?} needs a model_ref", a.analyzer_id)));
            }
        }
        if self.storage.backend == StorageBackend::S3 && self.storage.s3.is_none() {
            return bad("storage.backend = \"s3\" requires a [storage.s3] section");
        }
        self.gesture_table()?;
        Ok(())
    }

    pub fn gesture_table(&self) -> Result<GestureTable, ConfigError> {
        let mut table = GestureTable::default();
        for (task, spec) in &self.gestures {
            table.insert(task.clone(), spec.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(table)
    }

    pub fn object_root(&self) -> PathBuf {
        self.storage.root.clone().unwrap_or_else(|| self.data_dir.join("objects"))
    }

    pub fn database_path(&self) -> PathBuf {
        self.data_dir.join("oromon.sqlite3")
    }

    pub fn queue_dir(&self) -> PathBuf {
        self.data_dir.join("queues")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = Config::parse("data_dir = \"/tmp/x\"").unwrap();
        assert_eq!(c.pipeline.target_fps, 8.0);
        assert_eq!(c.pipeline.max_attempts, 5);
        assert_eq!(c.pipeline.visibility_timeout_s, 120);
        assert_eq!(c.analyzers, vec![AnalyzerDescriptor::oracle("oracle")]);
        assert_eq!(c.limits.max_decompressed_bytes, 2 << 30);
        assert_eq!(c.retention_days, None);
    }

    #[test]
    fn full_config_parses() {
        let c = Config::parse(
            r#"
            data_dir = "/srv"
            listen = "0.0.0.0:9000"
            retention_days = 365
            [pipeline]
            target_fps = 10
            batch = 2
            [storage]
            backend = "s3"
            encrypted_buckets = ["patient", "temporary"]
            [storage.s3]
            endpoint = "http://minio:9000"
            region = "eu-south-1"
            patient_bucket = "p"
            temporary_bucket = "t"
            [[analyzers]]
            analyzer_id = "flmask"
            kind = "model_backed"
            model_ref = "models/a.onnx"
            task_kinds = ["lips_protrusion"]
            [gestures.lips_protrusion]
            kind = "pair"
            a = 48
            b = 54
            "#,
        )
        .unwrap();
        assert_eq!(c.pipeline.batch, 2);
        assert_eq!(c.storage.encrypted_buckets.len(), 2);
        assert!(c.analyzers[0].applies_to("lips_protrusion"));
        assert!(!c.analyzers[0].applies_to("maximum_smile"));
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "data_dir = \"x\"\n[pipeline]\nbatch = 0",
            "data_dir = \"x\"\n[pipeline]\nconfidence_threshold = 1.5",
            "data_dir = \"x\"\n[[analyzers]]\nanalyzer_id = \"m\"\nkind = \"model_backed\"",
            "data_dir = \"x\"\n[[analyzers]]\nanalyzer_id = \"a/b\"\nkind = \"oracle\"",
            "data_dir = \"x\"\n[storage]\nbackend = \"s3\"",
            "data_dir = \"x\"\nunknown = 1",
            "data_dir = \"x\"\n[gestures.t]\nkind = \"pair\"\na = 1\nb = 99",
        ] {
            assert!(Config::parse(text).is_err(), "{text}");
        }
    }
}
