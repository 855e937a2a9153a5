//! Ingestion, analysis pipeline and clinician/patient API.
//!
//! Uploaded session archives land in the patient bucket. The
//! [orchestrator](pipeline::Pipeline::orchestrate) expands them into the
//! temporary bucket and enqueues one message per task and analyzer on a
//! durable [journal queue](queue::JournalQueue). Workers analyze the sampled
//! frames, store results in the [database](db::Db) and clean up. The
//! [API](api::router) serves the results.

pub mod analyzers;
pub mod api;
pub mod app;
pub mod auth;
pub mod clock;
pub mod config;
pub mod db;
pub mod decode;
pub mod models;
pub mod pipeline;
pub mod queue;
pub mod synth;
