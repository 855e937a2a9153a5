//! Orofacial landmark analysis primitives.
//!
//! This crate holds everything that is a pure function of landmark data:
//! the 68-point face scheme and its regions, the normalized mean error used
//! to score landmark detectors, the gesture indices computed from task
//! recordings, heatmap decoding, box gating and frame sampling. It performs
//! no I/O beyond decoding in-memory frames, so it compiles for `wasm32`.

pub mod analyzer;
pub mod annotation;
mod error;
pub mod gate;
pub mod gesture;
pub mod heatmap;
pub mod landmarks;
pub mod metrics;
pub mod sampling;
pub mod task;

pub use analyzer::{
    AnalyzerDescriptor, AnalyzerKind, Detection, FrameAnalysis, FrameAnalyzer, GraphOutput,
    InferenceGraph, ModelBackedAnalyzer, OracleAnalyzer,
};
pub use annotation::{AnnotationRecord, Cohort, FrameRef};
pub use error::{Error, Result};
pub use gate::{gate_boxes, BoxGate, DEFAULT_CONFIDENCE_THRESHOLD};
pub use gesture::{
    gesture_distance, interocular_distance, lp_index, GestureSpec, GestureTable, LpIndex,
    LpIndexPoint,
};
pub use heatmap::{decode_heatmaps, DecodedLandmarks, HeatmapOrigin, HeatmapStack};
pub use landmarks::{FaceBox, FaceRegion, Landmark, LandmarkSet, Point, LANDMARK_COUNT};
pub use metrics::{dataset_nme, nme};
pub use sampling::{sample_frames, VideoMeta};
pub use task::{DurationMode, TaskCatalog, TaskKind};
