//! Face box acceptance.

use serde::{Deserialize, Serialize};

use crate::FaceBox;

/// Boxes scoring below this confidence are discarded.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGate {
    pub threshold: f64,
}

impl Default for BoxGate {
    fn default() -> Self {
        Self { threshold: DEFAULT_CONFIDENCE_THRESHOLD }
    }
}

impl BoxGate {
    pub fn new(threshold: f64) -> Self {
        Self { threshold }
    }

    /// At most one subject per frame: the most confident box that clears the
    /// threshold, earliest on ties. `None` means no detection.
    pub fn select(&self, candidates: &[FaceBox]) -> Option<FaceBox> {
        candidates
            .iter()
            .filter(|b| b.confidence() >= self.threshold)
            .fold(None, |best: Option<&FaceBox>, b| match best {
                Some(cur) if cur.confidence() >= b.confidence() => Some(cur),
                _ => Some(b),
            })
            .copied()
    }
}

/// [`BoxGate::select`] with the default threshold.
pub fn gate_boxes(candidates: &[FaceBox]) -> Option<FaceBox> {
    BoxGate::default().select(candidates)
}
