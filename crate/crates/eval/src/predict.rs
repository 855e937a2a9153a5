//! Sources of per-frame predictions for evaluation.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use oromon_core::analyzer::decode_frame;
use oromon_core::{AnnotationRecord, Detection, FrameAnalysis, FrameAnalyzer, FrameRef, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::report::Prediction;
use crate::{EvalError, Result};

pub trait Predictor {
    fn analyzer_id(&self) -> &str;
    fn predict(&mut self, record: &AnnotationRecord) -> Result<FrameAnalysis>;
}

/// Returns the ground truth, optionally shifted by a fixed offset.
#[derive(Debug, Clone)]
pub struct Oracle {
    id: String,
    offset: (f64, f64),
}

impl Oracle {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), offset: (0.0, 0.0) }
    }

    pub fn with_offset(mut self, dx: f64, dy: f64) -> Self {
        self.offset = (dx, dy);
        self
    }
}

impl Predictor for Oracle {
    fn analyzer_id(&self) -> &str {
        &self.id
    }

    fn predict(&mut self, record: &AnnotationRecord) -> Result<FrameAnalysis> {
        let landmarks = if self.offset == (0.0, 0.0) {
            record.landmarks.clone()
        } else {
            record.landmarks.translated(self.offset.0, self.offset.1)?
        };
        Ok(FrameAnalysis::Detected(Detection { face_box: record.face_box, landmarks, undetected: Vec::new() }))
    }
}

/// Ground truth plus independent Gaussian noise on every coordinate, with
/// an optional chance of reporting no detection at all.
///
/// Each frame draws from its own stream seeded by the frame reference, so
/// the prediction for a frame does not depend on evaluation order.
#[derive(Debug, Clone)]
pub struct NoisyOracle {
    id: String,
    noise: Normal<f64>,
    miss_rate: f64,
    seed: u64,
}

impl NoisyOracle {
    pub fn new(id: impl Into<String>, sigma: f64, miss_rate: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(EvalError::InvalidAnalyzer(format!("noise sigma {sigma} must be a non-negative number")));
        }
        let noise = Normal::new(0.0, sigma).map_err(|e| EvalError::InvalidAnalyzer(format!("noise sigma {sigma}: {e}")))?;
        if !(0.0..=1.0).contains(&miss_rate) {
            return Err(EvalError::InvalidAnalyzer(format!("miss rate {miss_rate} outside [0, 1]")));
        }
        Ok(Self { id: id.into(), noise, miss_rate, seed })
    }
}

fn frame_seed(seed: u64, frame: &FrameRef) -> u64 {
    // FNV-1a, stable across builds unlike the std hasher.
    frame.to_string().bytes().fold(0xcbf2_9ce4_8422_2325 ^ seed, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl Predictor for NoisyOracle {
    fn analyzer_id(&self) -> &str {
        &self.id
    }

    fn predict(&mut self, record: &AnnotationRecord) -> Result<FrameAnalysis> {
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(self.seed, &record.frame_ref));
        if self.miss_rate > 0.0 && rng.gen_bool(self.miss_rate) {
            return Ok(FrameAnalysis::NoDetection);
        }
        let landmarks = record
            .landmarks
            .map_points(|p| Point::new(p.x + self.noise.sample(&mut rng), p.y + self.noise.sample(&mut rng)))?;
        Ok(FrameAnalysis::Detected(Detection { face_box: record.face_box, landmarks, undetected: Vec::new() }))
    }
}

/// Plays back previously dumped predictions.
#[derive(Debug, Clone)]
pub struct Replay {
    id: String,
    predictions: HashMap<FrameRef, FrameAnalysis>,
}

impl Replay {
    pub fn new(id: impl Into<String>, predictions: impl IntoIterator<Item = Prediction>) -> Result<Self> {
        let mut map = HashMap::new();
        for p in predictions {
            if map.insert(p.frame_ref.clone(), p.analysis).is_some() {
                return Err(EvalError::DuplicateFrame(p.frame_ref));
            }
        }
        Ok(Self { id: id.into(), predictions: map })
    }
}

impl Predictor for Replay {
    fn analyzer_id(&self) -> &str {
        &self.id
    }

    fn predict(&mut self, record: &AnnotationRecord) -> Result<FrameAnalysis> {
        self.predictions
            .get(&record.frame_ref)
            .cloned()
            .ok_or_else(|| EvalError::MissingPrediction(record.frame_ref.clone()))
    }
}

/// Runs a frame analyzer on images read from disk.
///
/// Path references resolve against `frames_root`. Video references resolve
/// to `<frames_root>/<video_id>/<frame_index, six digits>.png`.
pub struct ImagePredictor<A> {
    id: String,
    analyzer: A,
    frames_root: PathBuf,
}

impl<A: FrameAnalyzer> ImagePredictor<A> {
    pub fn new(id: impl Into<String>, analyzer: A, frames_root: impl Into<PathBuf>) -> Self {
        Self { id: id.into(), analyzer, frames_root: frames_root.into() }
    }

    pub fn frame_path(&self, frame: &FrameRef) -> PathBuf {
        resolve(&self.frames_root, frame)
    }
}

fn resolve(root: &Path, frame: &FrameRef) -> PathBuf {
    match frame {
        FrameRef::Path(p) => root.join(p),
        FrameRef::Video { video_id, frame_index } => root.join(video_id).join(format!("{frame_index:06}.png")),
    }
}

impl<A: FrameAnalyzer> Predictor for ImagePredictor<A> {
    fn analyzer_id(&self) -> &str {
        &self.id
    }

    fn predict(&mut self, record: &AnnotationRecord) -> Result<FrameAnalysis> {
        let frame = &record.frame_ref;
        let bytes = std::fs::read(self.frame_path(frame))
            .map_err(|source| EvalError::Frame { frame: frame.clone(), source })?;
        let image = decode_frame(&bytes).map_err(|source| EvalError::Analyzer { frame: frame.clone(), source })?;
        self.analyzer
            .analyze_frame(frame.frame_index().unwrap_or(0), &image)
            .map_err(|source| EvalError::Analyzer { frame: frame.clone(), source })
    }
}
