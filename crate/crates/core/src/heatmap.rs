//! Per-landmark response maps and their decoding to coordinates.

use serde::{Deserialize, Serialize};

use crate::{Error, LandmarkSet, Point, Result, LANDMARK_COUNT};

/// Affine map from heatmap grid cells to source-frame pixels:
/// `x = offset_x + col * scale_x`, `y = offset_y + row * scale_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapOrigin {
    pub offset_x: f64,
    pub offset_y: f64,
    pub scale_x: f64,
    pub scale_y: f64,
}

impl HeatmapOrigin {
    pub const IDENTITY: HeatmapOrigin =
        HeatmapOrigin { offset_x: 0.0, offset_y: 0.0, scale_x: 1.0, scale_y: 1.0 };

    pub fn cell_to_pixel(&self, row: f64, col: f64) -> Point {
        Point::new(self.offset_x + col * self.scale_x, self.offset_y + row * self.scale_y)
    }
}

impl Default for HeatmapOrigin {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// 68 equally sized, finite, non-negative response maps stored row-major,
/// one after another.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    height: usize,
    width: usize,
    data: Vec<f32>,
    origin: HeatmapOrigin,
}

impl HeatmapStack {
    pub fn new(height: usize, width: usize, data: Vec<f32>, origin: HeatmapOrigin) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidHeatmaps("maps must be non-empty".into()));
        }
        let expected = LANDMARK_COUNT * height * width;
        if data.len() != expected {
            return Err(Error::InvalidHeatmaps(format!(
                "expected {expected} values for 68x{height}x{width}, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidHeatmaps(format!(
                "value at flat position {pos} is negative or non-finite"
            )));
        }
        let o = origin;
        if ![o.offset_x, o.offset_y, o.scale_x, o.scale_y].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidHeatmaps("origin is not finite".into()));
        }
        Ok(Self { height, width, data, origin })
    }

    pub fn zeros(height: usize, width: usize, origin: HeatmapOrigin) -> Result<Self> {
        Self::new(height, width, vec![0.0; LANDMARK_COUNT * height * width], origin)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn origin(&self) -> HeatmapOrigin {
        self.origin
    }

    pub fn map(&self, landmark: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[landmark * n..(landmark + 1) * n]
    }

    pub fn set(&mut self, landmark: usize, row: usize, col: usize, value: f32) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidHeatmaps(format!("bad value {value}")));
        }
        if landmark >= LANDMARK_COUNT || row >= self.height || col >= self.width {
            return Err(Error::InvalidHeatmaps("cell out of range".into()));
        }
        let n = self.height * self.width;
        self.data[landmark * n + row * self.width + col] = value;
        Ok(())
    }
}

/// Landmarks recovered from a heatmap stack.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedLandmarks {
    pub landmarks: LandmarkSet,
    /// Landmarks whose map was entirely zero. Their coordinate is the map
    /// center and the frame should be treated as low quality.
    pub undetected: Vec<usize>,
}

impl DecodedLandmarks {
    pub fn is_low_quality(&self) -> bool {
        !self.undetected.is_empty()
    }
}

/// Decodes each map to the pixel position of its maximum cell. Ties go to
/// the lowest row-major index.
pub fn decode_heatmaps(stack: &HeatmapStack, frame_index: u64) -> DecodedLandmarks {
    let (h, w) = (stack.height, stack.width);
    let mut points = Vec::with_capacity(LANDMARK_COUNT);
    let mut undetected = Vec::new();
    for landmark in 0..LANDMARK_COUNT {
        let map = stack.map(landmark);
        let mut best = 0usize;
        for (i, &v) in map.iter().enumerate().skip(1) {
            if v > map[best] {
                best = i;
            }
        }
        let point = if map[best] > 0.0 {
            stack.origin.cell_to_pixel((best / w) as f64, (best % w) as f64)
        } else {
            undetected.push(landmark);
            stack.origin.cell_to_pixel((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0)
        };
        points.push(point);
    }
    let landmarks = LandmarkSet::from_points(points, frame_index)
        .expect("finite origin and bounded grid give finite points");
    DecodedLandmarks { landmarks, undetected }
}
