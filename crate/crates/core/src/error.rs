use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A normalizing length (box diagonal, interocular distance) was zero.
    #[error("invalid normalizer: {0}")]
    InvalidNormalizer(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid landmark set: {0}")]
    InvalidLandmarks(String),

    #[error("invalid face box: {0}")]
    InvalidBox(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("invalid heatmap stack: {0}")]
    InvalidHeatmaps(String),

    /// The analyzer could not run. Callers treat this as retriable.
    #[error("analyzer failure: {0}")]
    AnalyzerFailure(String),

    /// Ground truth required by the oracle analyzer is absent.
    #[error("data missing: {0}")]
    DataMissing(String),

    #[error("frame decode failed: {0}")]
    FrameDecode(String),
}
