//! Offline evaluation tooling: dataset split manifests, per-region NME
//! reports and side-by-side comparison of analyzer variants.

pub mod compare;
mod error;
pub mod predict;
pub mod report;
pub mod split;

pub use compare::{compare, Comparison, ComparisonRow};
pub use error::EvalError;
pub use predict::{ImagePredictor, NoisyOracle, Oracle, Predictor, Replay};
pub use report::{evaluate, predict_all, score, FrameCounts, Prediction, RegionScore, Report};
pub use split::{
    make_split_toronto, make_split_vw, Fractions, Gender, SplitManifest, SplitPolicy, Subject, Subset, TestCell,
    VideoEntry,
};

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
