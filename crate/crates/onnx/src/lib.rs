//! ONNX runtime for landmark models, built on `tract`.
//!
//! A model must have one input and four outputs:
//!
//! | name             | shape          | meaning                                        |
//! |------------------|----------------|------------------------------------------------|
//! | `image` (input)  | `[1, 3, H, W]` | RGB frame, `f32` in `[0, 1]`                   |
//! | `boxes`          | `[N, 4]`       | face boxes `x, y, w, h` in frame pixels        |
//! | `scores`         | `[N]`          | box confidences in `[0, 1]`                    |
//! | `heatmaps`       | `[N, 68, h, w]`| one response map per landmark and box          |
//! | `heatmap_origin` | `[N, 4]`       | `offset_x, offset_y, scale_x, scale_y` per box |
//!
//! Heatmap cell `(row, col)` of box `i` sits at frame pixel
//! `(offset_x + col * scale_x, offset_y + row * scale_y)`. Negative
//! responses are clamped to zero, so a map without a positive cell marks its
//! landmark undetected. Outputs are matched by name; a model whose outputs
//! are unnamed must list them in the order above.

use std::collections::HashMap;
use std::path::Path;

use image::RgbImage;
use oromon_core::{Error as CoreError, FaceBox, GraphOutput, HeatmapOrigin, HeatmapStack, InferenceGraph, LANDMARK_COUNT};
use tract_onnx::prelude::*;

pub const INPUT_NAME: &str = "image";
pub const OUTPUT_NAMES: [&str; 4] = ["boxes", "scores", "heatmaps", "heatmap_origin"];

#[derive(Debug, thiserror::Error)]
pub enum OnnxError {
    #[error("cannot load model: {0}")]
    Load(String),
    #[error("model does not follow the landmark output contract: {0}")]
    Contract(String),
    #[error("inference failed: {0}")]
    Run(String),
}

impl From<OnnxError> for CoreError {
    fn from(e: OnnxError) -> Self {
        CoreError::AnalyzerFailure(e.to_string())
    }
}

type Plan = TypedSimplePlan<TypedModel>;

/// A loaded model. Execution plans are specialized per frame size and
/// cached, so a worker pays the optimization cost once per resolution.
pub struct OnnxGraph {
    model: InferenceModel,
    /// Position of each contract output among the model outputs.
    output_order: [usize; 4],
    plans: HashMap<(u32, u32), Plan>,
}

impl std::fmt::Debug for OnnxGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxGraph").field("cached_plans", &self.plans.len()).finish()
    }
}

impl OnnxGraph {
    pub fn load(path: &Path) -> Result<Self, OnnxError> {
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| OnnxError::Load(format!("{}: {e}", path.display())))?;
        Self::from_model(model)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OnnxError> {
        let model = tract_onnx::onnx()
            .model_for_read(&mut std::io::Cursor::new(bytes))
            .map_err(|e| OnnxError::Load(e.to_string()))?;
        Self::from_model(model)
    }

    fn from_model(model: InferenceModel) -> Result<Self, OnnxError> {
        let inputs = model.input_outlets().map_err(|e| OnnxError::Contract(e.to_string()))?;
        if inputs.len() != 1 {
            return Err(OnnxError::Contract(format!("expected 1 input, found {}", inputs.len())));
        }
        let outputs = model.output_outlets().map_err(|e| OnnxError::Contract(e.to_string()))?;
        if outputs.len() != 4 {
            return Err(OnnxError::Contract(format!("expected 4 outputs, found {}", outputs.len())));
        }
        let labels: Vec<Option<&str>> = outputs
            .iter()
            .map(|o| model.outlet_label(*o).or_else(|| Some(model.node(o.node).name.as_str())))
            .collect();
        let mut order = [0, 1, 2, 3];
        let by_name: Vec<Option<usize>> =
            OUTPUT_NAMES.iter().map(|n| labels.iter().position(|l| *l == Some(*n))).collect();
        if by_name.iter().all(Option::is_some) {
            for (slot, pos) in order.iter_mut().zip(by_name) {
                *slot = pos.expect("checked above");
            }
        }
        Ok(Self { model, output_order: order, plans: HashMap::new() })
    }

    fn plan(&mut self, width: u32, height: u32) -> Result<&Plan, OnnxError> {
        if !self.plans.contains_key(&(width, height)) {
            let fact = InferenceFact::dt_shape(f32::datum_type(), tvec!(1, 3, height as usize, width as usize));
            let plan = self
                .model
                .clone()
                .with_input_fact(0, fact)
                .and_then(|m| m.into_optimized())
                .and_then(|m| m.into_runnable())
                .map_err(|e| OnnxError::Contract(format!("{width}x{height} input: {e}")))?;
            self.plans.insert((width, height), plan);
        }
        Ok(&self.plans[&(width, height)])
    }

    /// Runs the model and returns its raw tensors in contract order.
    fn infer(&mut self, frame: &RgbImage) -> Result<[Tensor; 4], OnnxError> {
        let (w, h) = frame.dimensions();
        let input = tract_ndarray::Array4::from_shape_fn((1, 3, h as usize, w as usize), |(_, c, y, x)| {
            frame.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
        });
        let order = self.output_order;
        let outputs = self
            .plan(w, h)?
            .run(tvec!(Tensor::from(input).into()))
            .map_err(|e| OnnxError::Run(e.to_string()))?;
        let take = |i: usize| -> Result<Tensor, OnnxError> {
            outputs[order[i]]
                .cast_to::<f32>()
                .map(|t| t.into_owned())
                .map_err(|e| OnnxError::Contract(format!("{}: {e}", OUTPUT_NAMES[i])))
        };
        Ok([take(0)?, take(1)?, take(2)?, take(3)?])
    }
}

fn shape_error(name: &str, expected: &str, got: &[usize]) -> OnnxError {
    OnnxError::Contract(format!("{name} has shape {got:?}, expected {expected}"))
}

impl InferenceGraph for OnnxGraph {
    fn run(&mut self, frame: &RgbImage) -> oromon_core::Result<GraphOutput> {
        let [boxes, scores, heatmaps, origins] = self.infer(frame)?;
        let n = scores.len();
        if scores.rank() != 1 {
            return Err(shape_error("scores", "[N]", scores.shape()).into());
        }
        if boxes.shape() != [n, 4] {
            return Err(shape_error("boxes", "[N, 4]", boxes.shape()).into());
        }
        if origins.shape() != [n, 4] {
            return Err(shape_error("heatmap_origin", "[N, 4]", origins.shape()).into());
        }
        let hs = heatmaps.shape();
        if hs.len() != 4 || hs[0] != n || hs[1] != LANDMARK_COUNT {
            return Err(shape_error("heatmaps", "[N, 68, h, w]", hs).into());
        }
        let (mh, mw) = (hs[2], hs[3]);
        let boxes = boxes.as_slice::<f32>().expect("cast to f32");
        let scores = scores.as_slice::<f32>().expect("cast to f32");
        let maps = heatmaps.as_slice::<f32>().expect("cast to f32");
        let origins = origins.as_slice::<f32>().expect("cast to f32");

        let mut out = GraphOutput { boxes: Vec::new(), heatmaps: Vec::new() };
        let per_box = LANDMARK_COUNT * mh * mw;
        for i in 0..n {
            let b = &boxes[i * 4..i * 4 + 4];
            let conf = f64::from(scores[i]).clamp(0.0, 1.0);
            // Degenerate candidates are dropped together with their maps.
            let Ok(face) = FaceBox::new(b[0].into(), b[1].into(), b[2].into(), b[3].into(), conf) else {
                continue;
            };
            let o = &origins[i * 4..i * 4 + 4];
            let origin = HeatmapOrigin {
                offset_x: o[0].into(),
                offset_y: o[1].into(),
                scale_x: o[2].into(),
                scale_y: o[3].into(),
            };
            let data: Vec<f32> = maps[i * per_box..(i + 1) * per_box].iter().map(|v| v.max(0.0)).collect();
            out.heatmaps.push(HeatmapStack::new(mh, mw, data, origin)?);
            out.boxes.push(face);
        }
        Ok(out)
    }
}
