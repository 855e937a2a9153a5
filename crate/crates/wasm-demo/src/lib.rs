//! Three operations from `oromon-core`, exported to JavaScript for the
//! static page in `www/`:
//!
//! - `nmeDemo`: perturb a template face and score it per region.
//! - `decodeDemo`: decode a heatmap stack built from clicked blobs.
//! - `lpDemo`: sample a synthetic task recording and compute its LP-index.
//!
//! Each has a plain Rust twin so the logic is testable off the browser.

mod face;

use oromon_core::sampling::{sample_frames, VideoMeta};
use oromon_core::{
    decode_heatmaps, lp_index, nme, FaceRegion, GestureTable, HeatmapOrigin, HeatmapStack, LandmarkSet, Point,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

pub use face::{template_box, template_face};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionRow {
    pub label: String,
    pub nme: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NmeDemo {
    pub face_box: [f64; 4],
    pub truth: Vec<[f64; 2]>,
    pub predicted: Vec<[f64; 2]>,
    pub rows: Vec<RegionRow>,
}

fn pairs(set: &LandmarkSet) -> Vec<[f64; 2]> {
    set.points().iter().map(|&p| p.into()).collect()
}

/// Adds Gaussian noise of `sigma` pixels to each coordinate of the template
/// face, then shifts everything by `(dx, dy)`.
pub fn noisy_face(sigma: f64, dx: f64, dy: f64, seed: u64) -> Result<NmeDemo, String> {
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = template_face();
    let predicted = truth
        .map_points(|p| Point::new(p.x + dx + noise.sample(&mut rng), p.y + dy + noise.sample(&mut rng)))
        .map_err(|e| e.to_string())?;
    let b = template_box();
    let rows = FaceRegion::report_order()
        .iter()
        .map(|region| {
            let label = if region.name() == "all" { "NME_68".to_string() } else { format!("NME_{}", region.name()) };
            nme(&truth, &predicted, &b, region).map(|nme| RegionRow { label, nme }).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok(NmeDemo {
        face_box: [b.x(), b.y(), b.width(), b.height()],
        truth: pairs(&truth),
        predicted: pairs(&predicted),
        rows,
    })
}

/// A Gaussian response centered on a grid cell of one landmark's map.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Blob {
    pub landmark: usize,
    pub row: f64,
    pub col: f64,
    pub spread: f64,
    pub amplitude: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeDemo {
    /// Response map of `shown` landmark, row-major, for drawing.
    pub map: Vec<f32>,
    pub points: Vec<[f64; 2]>,
    pub undetected: Vec<usize>,
}

/// Builds a `height x width` stack from blobs (overlapping blobs add up),
/// decodes it with a pixel scale of `scale`, and returns the map of landmark
/// `shown` along with every decoded point.
pub fn decode_blobs(height: usize, width: usize, scale: f64, blobs: &[Blob], shown: usize) -> Result<DecodeDemo, String> {
    let origin = HeatmapOrigin { offset_x: 0.0, offset_y: 0.0, scale_x: scale, scale_y: scale };
    let mut data = vec![0.0f32; 68 * height * width];
    for b in blobs {
        if b.landmark >= 68 {
            return Err(format!("landmark {} out of range", b.landmark));
        }
        let map = &mut data[b.landmark * height * width..][..height * width];
        for r in 0..height {
            for c in 0..width {
                let d2 = (r as f64 - b.row).powi(2) + (c as f64 - b.col).powi(2);
                map[r * width + c] += b.amplitude.max(0.0) * (-d2 / (2.0 * b.spread.max(1e-3).powi(2))).exp() as f32;
            }
        }
    }
    let stack = HeatmapStack::new(height, width, data, origin).map_err(|e| e.to_string())?;
    let decoded = decode_heatmaps(&stack, 0);
    Ok(DecodeDemo {
        map: stack.map(shown.min(67)).to_vec(),
        points: pairs(&decoded.landmarks),
        undetected: decoded.undetected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpDemo {
    pub source_frames: u64,
    pub sampled: Vec<u64>,
    /// Gesture distance of every sampled frame.
    pub distances: Vec<f64>,
    pub lp_index: f64,
    pub peak_frame_index: u64,
}

/// Synthesizes a rest-peak-rest recording whose gesture amplitude peaks at
/// `peak` pixels midway, samples it at `target_fps` and computes the index
/// with the first sampled frame as neutral.
pub fn lp_recording(source_fps: f64, duration_s: f64, target_fps: f64, peak: f64, task_kind: &str) -> Result<LpDemo, String> {
    let meta = VideoMeta { source_fps, duration_s };
    let total = meta.frame_count();
    let sampled = sample_frames(meta, target_fps);
    if sampled.is_empty() {
        return Err("no frames to sample; check the rates and duration".into());
    }
    let mid = total.saturating_sub(1).max(1) as f64 / 2.0;
    let frames: Vec<LandmarkSet> = sampled
        .iter()
        .map(|&i| face::gesture_face(peak * (1.0 - (i as f64 - mid).abs() / mid).max(0.0), i))
        .collect();
    let table = GestureTable::default();
    let lp = lp_index(&frames, &frames[0], task_kind, &table).map_err(|e| e.to_string())?;
    Ok(LpDemo {
        source_frames: total,
        distances: frames.iter().map(|f| table.distance(f, task_kind)).collect(),
        sampled,
        lp_index: lp.value,
        peak_frame_index: lp.peak_frame_index,
    })
}

fn to_js<T: Serialize>(value: Result<T, String>) -> Result<JsValue, JsError> {
    let value = value.map_err(|e| JsError::new(&e))?;
    serde_wasm_bindgen::to_value(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = nmeDemo)]
pub fn nme_demo(sigma: f64, dx: f64, dy: f64, seed: u32) -> Result<JsValue, JsError> {
    to_js(noisy_face(sigma, dx, dy, seed as u64))
}

#[wasm_bindgen(js_name = decodeDemo)]
pub fn decode_demo(height: usize, width: usize, scale: f64, blobs: JsValue, shown: usize) -> Result<JsValue, JsError> {
    let blobs: Vec<Blob> = serde_wasm_bindgen::from_value(blobs).map_err(|e| JsError::new(&e.to_string()))?;
    to_js(decode_blobs(height, width, scale, &blobs, shown))
}

#[wasm_bindgen(js_name = lpDemo)]
pub fn lp_demo(source_fps: f64, duration_s: f64, target_fps: f64, peak: f64, task_kind: &str) -> Result<JsValue, JsError> {
    to_js(lp_recording(source_fps, duration_s, target_fps, peak, task_kind))
}
