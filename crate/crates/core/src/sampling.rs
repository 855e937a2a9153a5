//! Frame sampling at a target rate.

use serde::{Deserialize, Serialize};

/// Timing of a decoded video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub source_fps: f64,
    pub duration_s: f64,
}

impl VideoMeta {
    /// Number of whole frames in the video.
    pub fn frame_count(&self) -> u64 {
        if !(self.source_fps > 0.0) || !(self.duration_s > 0.0) {
            return 0;
        }
        floor_snapped(self.source_fps * self.duration_s)
    }
}

// Products like 29.97 * 10.01 land a hair below the integer they represent.
const SNAP: f64 = 1e-9;

fn floor_snapped(x: f64) -> u64 {
    (x + SNAP * x.abs().max(1.0)).floor().max(0.0) as u64
}

fn ceil_snapped(x: f64) -> u64 {
    (x - SNAP * x.abs().max(1.0)).ceil().max(0.0) as u64
}

/// Selects frame indices approximating a `target_fps` stream.
///
/// Sample `k` is taken from frame `floor(k * source_fps / target_fps)` for
/// `k` in `0..ceil(duration_s * target_fps)`. When the target rate is at or
/// above the source rate every frame is returned. The result is strictly
/// increasing and every index is below [`VideoMeta::frame_count`].
pub fn sample_frames(meta: VideoMeta, target_fps: f64) -> Vec<u64> {
    let total = meta.frame_count();
    if total == 0 || !(target_fps > 0.0) {
        return Vec::new();
    }
    if target_fps >= meta.source_fps {
        return (0..total).collect();
    }
    let samples = ceil_snapped(meta.duration_s * target_fps);
    let stride = meta.source_fps / target_fps;
    let mut out: Vec<u64> = Vec::with_capacity(samples as usize);
    for k in 0..samples {
        let idx = floor_snapped(k as f64 * stride);
        if idx >= total {
            break;
        }
        if out.last().is_none_or(|&last| idx > last) {
            out.push(idx);
        }
    }
    out
}
