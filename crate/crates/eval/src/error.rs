use oromon_core::{Cohort, FrameRef};

use crate::split::Gender;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid split parameters: {0}")]
    InvalidSplit(String),
    #[error("invalid analyzer: {0}")]
    InvalidAnalyzer(String),
    #[error("{videos} videos cannot fill {subsets} subsets")]
    TooFewVideos { videos: usize, subsets: usize },
    #[error("test set needs {needed} {cohort}/{gender} subjects, only {available} available")]
    Infeasible { cohort: Cohort, gender: Gender, needed: usize, available: usize },
    #[error("subject {0} appears in more than one subset")]
    SubjectOverlap(String),
    #[error("frame {0} appears more than once")]
    DuplicateFrame(FrameRef),
    #[error("no prediction for frame {0}")]
    MissingPrediction(FrameRef),
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error("compare needs at least two reports, got {0}")]
    TooFewReports(usize),
    #[error("report {analyzer} covers regions [{found}], expected [{expected}]")]
    RegionMismatch { analyzer: String, expected: String, found: String },
    #[error("analyzer failed on {frame}: {source}")]
    Analyzer { frame: FrameRef, source: oromon_core::Error },
    #[error("cannot read frame {frame}: {source}")]
    Frame { frame: FrameRef, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] oromon_core::Error),
}
