//! Frame analyzers: a model-backed path and a ground-truth oracle.

use std::collections::HashMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::heatmap::decode_heatmaps;
use crate::{BoxGate, Error, FaceBox, HeatmapStack, LandmarkSet, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzerKind {
    ModelBacked,
    Oracle,
}

/// Registry entry for an analyzer deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerDescriptor {
    pub analyzer_id: String,
    pub kind: AnalyzerKind,
    /// Object key of the serialized inference graph for model-backed analyzers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_ref: Option<String>,
    /// Task kinds this analyzer applies to. `None` means every task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_kinds: Option<Vec<String>>,
}

impl AnalyzerDescriptor {
    pub fn oracle(analyzer_id: impl Into<String>) -> Self {
        Self { analyzer_id: analyzer_id.into(), kind: AnalyzerKind::Oracle, model_ref: None, task_kinds: None }
    }

    pub fn model(analyzer_id: impl Into<String>, model_ref: impl Into<String>) -> Self {
        Self {
            analyzer_id: analyzer_id.into(),
            kind: AnalyzerKind::ModelBacked,
            model_ref: Some(model_ref.into()),
            task_kinds: None,
        }
    }

    pub fn applies_to(&self, task_kind: &str) -> bool {
        self.task_kinds.as_ref().is_none_or(|kinds| kinds.iter().any(|k| k == task_kind))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub face_box: FaceBox,
    pub landmarks: LandmarkSet,
    /// Landmarks the model could not localize (see [`crate::DecodedLandmarks`]).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undetected: Vec<usize>,
}

impl Detection {
    pub fn is_low_quality(&self) -> bool {
        !self.undetected.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FrameAnalysis {
    Detected(Detection),
    NoDetection,
}

impl FrameAnalysis {
    pub fn detection(&self) -> Option<&Detection> {
        match self {
            FrameAnalysis::Detected(d) => Some(d),
            FrameAnalysis::NoDetection => None,
        }
    }
}

/// One analyzer instance is owned by one worker at a time.
pub trait FrameAnalyzer: Send {
    fn analyze_frame(&mut self, frame_index: u64, frame: &RgbImage) -> Result<FrameAnalysis>;
}

impl<T: FrameAnalyzer + ?Sized> FrameAnalyzer for Box<T> {
    fn analyze_frame(&mut self, frame_index: u64, frame: &RgbImage) -> Result<FrameAnalysis> {
        (**self).analyze_frame(frame_index, frame)
    }
}

/// Decodes an encoded still image (PNG) into RGB.
pub fn decode_frame(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::FrameDecode(e.to_string()))
}

/// Returns the sidecar annotation for each frame verbatim, optionally
/// displaced by a fixed offset.
#[derive(Debug, Clone, Default)]
pub struct OracleAnalyzer {
    sidecar: HashMap<u64, (FaceBox, LandmarkSet)>,
    offset: (f64, f64),
}

impl OracleAnalyzer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_annotations(entries: impl IntoIterator<Item = (u64, FaceBox, LandmarkSet)>) -> Self {
        let mut oracle = Self::new();
        for (frame, b, set) in entries {
            oracle.insert(frame, b, set);
        }
        oracle
    }

    pub fn insert(&mut self, frame_index: u64, face_box: FaceBox, landmarks: LandmarkSet) {
        self.sidecar.insert(frame_index, (face_box, landmarks.with_frame_index(frame_index)));
    }

    /// Shifts every returned landmark by `(dx, dy)` pixels.
    pub fn with_offset(mut self, dx: f64, dy: f64) -> Self {
        self.offset = (dx, dy);
        self
    }

    pub fn len(&self) -> usize {
        self.sidecar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sidecar.is_empty()
    }

    pub fn lookup(&self, frame_index: u64) -> Result<Detection> {
        let (face_box, set) = self
            .sidecar
            .get(&frame_index)
            .ok_or_else(|| Error::DataMissing(format!("no sidecar annotation for frame {frame_index}")))?;
        let landmarks = if self.offset == (0.0, 0.0) {
            set.clone()
        } else {
            set.translated(self.offset.0, self.offset.1)?
        };
        Ok(Detection { face_box: *face_box, landmarks, undetected: Vec::new() })
    }
}

impl FrameAnalyzer for OracleAnalyzer {
    fn analyze_frame(&mut self, frame_index: u64, _frame: &RgbImage) -> Result<FrameAnalysis> {
        self.lookup(frame_index).map(FrameAnalysis::Detected)
    }
}

/// Raw result of running an inference graph on one frame: candidate boxes
/// with one heatmap stack per box, aligned to source-frame pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphOutput {
    pub boxes: Vec<FaceBox>,
    pub heatmaps: Vec<HeatmapStack>,
}

/// A loaded landmark model. Implementations own any runtime state.
pub trait InferenceGraph: Send {
    fn run(&mut self, frame: &RgbImage) -> Result<GraphOutput>;
}

impl<T: InferenceGraph + ?Sized> InferenceGraph for Box<T> {
    fn run(&mut self, frame: &RgbImage) -> Result<GraphOutput> {
        (**self).run(frame)
    }
}

/// Runs a graph, keeps the single best box above the gate threshold and
/// decodes its heatmaps.
pub struct ModelBackedAnalyzer<G> {
    graph: G,
    gate: BoxGate,
}

impl<G: InferenceGraph> ModelBackedAnalyzer<G> {
    pub fn new(graph: G, gate: BoxGate) -> Self {
        Self { graph, gate }
    }

    pub fn graph_mut(&mut self) -> &mut G {
        &mut self.graph
    }
}

impl<G: InferenceGraph> FrameAnalyzer for ModelBackedAnalyzer<G> {
    fn analyze_frame(&mut self, frame_index: u64, frame: &RgbImage) -> Result<FrameAnalysis> {
        let output = self.graph.run(frame)?;
        if output.boxes.len() != output.heatmaps.len() {
            return Err(Error::AnalyzerFailure(format!(
                "graph returned {} boxes but {} heatmap stacks",
                output.boxes.len(),
                output.heatmaps.len()
            )));
        }
        let Some(face_box) = self.gate.select(&output.boxes) else {
            return Ok(FrameAnalysis::NoDetection);
        };
        let pos = output
            .boxes
            .iter()
            .position(|b| *b == face_box)
            .expect("selected box comes from the candidate list");
        let decoded = decode_heatmaps(&output.heatmaps[pos], frame_index);
        let max_x = frame.width().saturating_sub(1) as f64;
        let max_y = frame.height().saturating_sub(1) as f64;
        let landmarks = decoded
            .landmarks
            .map_points(|p| Point::new(p.x.clamp(0.0, max_x), p.y.clamp(0.0, max_y)))?;
        Ok(FrameAnalysis::Detected(Detection {
            face_box,
            landmarks,
            undetected: decoded.undetected,
        }))
    }
}
