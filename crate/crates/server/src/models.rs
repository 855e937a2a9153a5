//! ONNX-backed analyzers.

use std::path::PathBuf;

use oromon_core::{AnalyzerDescriptor, BoxGate, FrameAnalyzer, ModelBackedAnalyzer};
use oromon_onnx::OnnxGraph;

use crate::analyzers::ModelLoader;

/// Loads `model_ref` as an ONNX file. Relative paths resolve against `root`,
/// normally the data directory.
pub struct OnnxLoader {
    root: PathBuf,
}

impl OnnxLoader {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ModelLoader for OnnxLoader {
    fn load(&self, descriptor: &AnalyzerDescriptor, gate: BoxGate) -> Result<Box<dyn FrameAnalyzer>, String> {
        let model_ref = descriptor
            .model_ref
            .as_deref()
            .ok_or_else(|| format!("analyzer {} has no model_ref", descriptor.analyzer_id))?;
        let graph = OnnxGraph::load(&self.root.join(model_ref)).map_err(|e| e.to_string())?;
        Ok(Box::new(ModelBackedAnalyzer::new(graph, gate)))
    }
}
