//! Registered analyzers and how workers instantiate them.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use oromon_core::annotation::parse_jsonl;
use oromon_core::{AnalyzerDescriptor, AnalyzerKind, BoxGate, FrameAnalyzer, FrameRef, OracleAnalyzer};

/// Loads the inference graph behind a model-backed analyzer.
pub trait ModelLoader: Send + Sync {
    fn load(&self, descriptor: &AnalyzerDescriptor, gate: BoxGate) -> Result<Box<dyn FrameAnalyzer>, String>;
}

/// Frame index a sidecar record refers to: either an explicit video frame
/// or a canonical frame file name such as `frame_000012.png`.
pub fn sidecar_frame_index(frame_ref: &FrameRef) -> Option<u64> {
    match frame_ref {
        FrameRef::Video { frame_index, .. } => Some(*frame_index),
        FrameRef::Path(p) => {
            let name = Path::new(p).file_name()?.to_str()?;
            name.strip_prefix("frame_")?.strip_suffix(".png")?.parse().ok()
        }
    }
}

/// Builds an oracle from a JSON-lines sidecar.
pub fn oracle_from_sidecar(text: &str) -> Result<OracleAnalyzer, String> {
    let records = parse_jsonl(text).map_err(|e| format!("sidecar: {e}"))?;
    let mut oracle = OracleAnalyzer::new();
    for r in records {
        let frame = sidecar_frame_index(&r.frame_ref)
            .ok_or_else(|| format!("sidecar record {} does not name a frame index", r.frame_ref))?;
        oracle.insert(frame, r.face_box, r.landmarks);
    }
    Ok(oracle)
}

#[derive(Clone)]
pub struct AnalyzerRegistry {
    descriptors: Vec<AnalyzerDescriptor>,
    loader: Option<Arc<dyn ModelLoader>>,
    gate: BoxGate,
}

impl AnalyzerRegistry {
    pub fn new(descriptors: Vec<AnalyzerDescriptor>, gate: BoxGate) -> Self {
        Self { descriptors, loader: None, gate }
    }

    pub fn with_loader(mut self, loader: Arc<dyn ModelLoader>) -> Self {
        self.loader = Some(loader);
        self
    }

    pub fn descriptors(&self) -> &[AnalyzerDescriptor] {
        &self.descriptors
    }

    pub fn get(&self, analyzer_id: &str) -> Option<&AnalyzerDescriptor> {
        self.descriptors.iter().find(|d| d.analyzer_id == analyzer_id)
    }

    pub fn applicable(&self, task_kind: &str) -> impl Iterator<Item = &AnalyzerDescriptor> {
        let task_kind = task_kind.to_string();
        self.descriptors.iter().filter(move |d| d.applies_to(&task_kind))
    }
}

/// A worker's analyzer instances. Model-backed analyzers are loaded once
/// and reused; oracles are built per task from its sidecar.
pub struct AnalyzerCache {
    registry: AnalyzerRegistry,
    models: HashMap<String, Box<dyn FrameAnalyzer>>,
}

pub enum TaskAnalyzer<'a> {
    Cached(&'a mut Box<dyn FrameAnalyzer>),
    Owned(Box<dyn FrameAnalyzer>),
}

impl TaskAnalyzer<'_> {
    pub fn get(&mut self) -> &mut dyn FrameAnalyzer {
        match self {
            TaskAnalyzer::Cached(a) => a.as_mut(),
            TaskAnalyzer::Owned(a) => a.as_mut(),
        }
    }
}

impl AnalyzerCache {
    pub fn new(registry: AnalyzerRegistry) -> Self {
        Self { registry, models: HashMap::new() }
    }

    /// The analyzer for one task. `sidecar` is the task's annotation file,
    /// required by oracles and ignored otherwise.
    pub fn for_task(&mut self, analyzer_id: &str, sidecar: Option<&[u8]>) -> Result<TaskAnalyzer<'_>, String> {
        let descriptor = self
            .registry
            .get(analyzer_id)
            .ok_or_else(|| format!("analyzer {analyzer_id:?} is not registered"))?
            .clone();
        match descriptor.kind {
            AnalyzerKind::Oracle => {
                let sidecar = sidecar.ok_or("oracle analyzer needs a sidecar annotation file")?;
                let text = std::str::from_utf8(sidecar).map_err(|e| format!("sidecar is not UTF-8: {e}"))?;
                Ok(TaskAnalyzer::Owned(Box::new(oracle_from_sidecar(text)?)))
            }
            AnalyzerKind::ModelBacked => {
                if !self.models.contains_key(analyzer_id) {
                    let loader = self
                        .registry
                        .loader
                        .as_ref()
                        .ok_or_else(|| format!("no model loader available for {analyzer_id:?}"))?;
                    let model = loader.load(&descriptor, self.registry.gate)?;
                    self.models.insert(analyzer_id.to_string(), model);
                }
                Ok(TaskAnalyzer::Cached(self.models.get_mut(analyzer_id).expect("inserted above")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_frame_refs() {
        assert_eq!(sidecar_frame_index(&FrameRef::Path("x/frame_000012.png".into())), Some(12));
        assert_eq!(sidecar_frame_index(&FrameRef::Path("img.png".into())), None);
        assert_eq!(
            sidecar_frame_index(&FrameRef::Video { video_id: "v".into(), frame_index: 7 }),
            Some(7)
        );
    }

    #[test]
    fn oracle_needs_sidecar_and_models_need_loader() {
        let reg = AnalyzerRegistry::new(
            vec![AnalyzerDescriptor::oracle("o"), AnalyzerDescriptor::model("m", "m.onnx")],
            BoxGate::default(),
        );
        let mut cache = AnalyzerCache::new(reg);
        assert!(cache.for_task("o", None).is_err());
        assert!(cache.for_task("o", Some(b"")).is_ok());
        assert!(cache.for_task("m", None).is_err());
        assert!(cache.for_task("zzz", None).is_err());
    }
}
