//! Gesture distances and the LP-index.
//!
//! A task's gesture distance is measured between two landmarks (or two
//! landmark centroids) chosen per task. The LP-index compares the gesture
//! distance at the peak frame of a recording with the neutral frame and
//! normalizes by the interocular distance of the neutral frame:
//!
//! ```text
//! index = (D_peak - D_neutral) / D_interocular
//! ```
//!
//! All distances are 2-D Euclidean in pixel space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::landmarks::{LEFT_EYE, MOUTH_LEFT_CORNER, MOUTH_RIGHT_CORNER, RIGHT_EYE};
use crate::task;
use crate::{Error, LandmarkSet, Point, Result};

/// Which landmarks a task's gesture distance is measured between.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GestureSpec {
    Pair { a: usize, b: usize },
    Centroids { a: Vec<usize>, b: Vec<usize> },
}

impl GestureSpec {
    pub const MOUTH_CORNERS: GestureSpec =
        GestureSpec::Pair { a: MOUTH_LEFT_CORNER, b: MOUTH_RIGHT_CORNER };
    /// Outer upper lip midpoint to outer lower lip midpoint.
    pub const LIP_OPENING: GestureSpec = GestureSpec::Pair { a: 51, b: 57 };

    pub fn distance(&self, set: &LandmarkSet) -> f64 {
        match self {
            GestureSpec::Pair { a, b } => set.point(*a).distance(set.point(*b)),
            GestureSpec::Centroids { a, b } => {
                let ca = Point::centroid(a.iter().map(|&i| set.point(i)));
                let cb = Point::centroid(b.iter().map(|&i| set.point(i)));
                match (ca, cb) {
                    (Some(ca), Some(cb)) => ca.distance(cb),
                    _ => 0.0,
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |i: &usize| *i < crate::LANDMARK_COUNT;
        let valid = match self {
            GestureSpec::Pair { a, b } => ok(a) && ok(b),
            GestureSpec::Centroids { a, b } => {
                !a.is_empty() && !b.is_empty() && a.iter().all(ok) && b.iter().all(ok)
            }
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidRegion(format!("bad gesture landmarks {self:?}")))
        }
    }
}

/// Per-task gesture configuration. Tasks without an entry use the fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureTable {
    #[serde(default)]
    tasks: BTreeMap<String, GestureSpec>,
    #[serde(default = "default_fallback")]
    fallback: GestureSpec,
}

fn default_fallback() -> GestureSpec {
    GestureSpec::MOUTH_CORNERS
}

impl Default for GestureTable {
    fn default() -> Self {
        let mut tasks = BTreeMap::new();
        for key in [
            task::MAXIMUM_SMILE,
            task::LIPS_STRETCHING,
            task::LIPS_PROTRUSION,
            task::MOUTH_PROTRUSION_STRETCHING,
        ] {
            tasks.insert(key.to_string(), GestureSpec::MOUTH_CORNERS);
        }
        for key in [task::MAXIMUM_MOUTH_OPENING, task::MOUTH_OPENING_CLOSING] {
            tasks.insert(key.to_string(), GestureSpec::LIP_OPENING);
        }
        Self { tasks, fallback: default_fallback() }
    }
}

impl GestureTable {
    pub fn empty(fallback: GestureSpec) -> Result<Self> {
        fallback.validate()?;
        Ok(Self { tasks: BTreeMap::new(), fallback })
    }

    pub fn insert(&mut self, task_kind: impl Into<String>, spec: GestureSpec) -> Result<()> {
        spec.validate()?;
        self.tasks.insert(task_kind.into(), spec);
        Ok(())
    }

    pub fn spec(&self, task_kind: &str) -> &GestureSpec {
        self.tasks.get(task_kind).unwrap_or(&self.fallback)
    }

    pub fn validate(&self) -> Result<()> {
        self.fallback.validate()?;
        self.tasks.values().try_for_each(GestureSpec::validate)
    }

    pub fn distance(&self, set: &LandmarkSet, task_kind: &str) -> f64 {
        self.spec(task_kind).distance(set)
    }
}

/// Gesture distance for `task_kind` using the default table.
pub fn gesture_distance(set: &LandmarkSet, task_kind: &str) -> f64 {
    GestureTable::default().distance(set, task_kind)
}

/// Distance between the left-eye (36–41) and right-eye (42–47) centroids.
pub fn interocular_distance(set: &LandmarkSet) -> Result<f64> {
    let left = Point::centroid(LEFT_EYE.iter().map(|&i| set.point(i)));
    let right = Point::centroid(RIGHT_EYE.iter().map(|&i| set.point(i)));
    let d = match (left, right) {
        (Some(l), Some(r)) => l.distance(r),
        _ => 0.0,
    };
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::InvalidNormalizer("interocular distance is zero"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpIndex {
    pub value: f64,
    /// Position of the peak frame within the input frame list.
    pub peak_position: usize,
    pub peak_frame_index: u64,
    pub neutral_distance: f64,
    pub peak_distance: f64,
    pub interocular_distance: f64,
}

/// Computes the LP-index of a task recording.
///
/// The peak is the frame whose gesture distance deviates most from the
/// neutral one in absolute value; the earliest such frame wins ties. The
/// returned value keeps its sign, so narrowing gestures are negative.
pub fn lp_index(
    frames: &[LandmarkSet],
    neutral: &LandmarkSet,
    task_kind: &str,
    table: &GestureTable,
) -> Result<LpIndex> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("task has no analyzed frames"));
    }
    let spec = table.spec(task_kind);
    let neutral_distance = spec.distance(neutral);
    let interocular = interocular_distance(neutral)?;

    let mut peak_position = 0;
    let mut peak_distance = spec.distance(&frames[0]);
    for (pos, frame) in frames.iter().enumerate().skip(1) {
        let d = spec.distance(frame);
        if (d - neutral_distance).abs() > (peak_distance - neutral_distance).abs() {
            peak_position = pos;
            peak_distance = d;
        }
    }
    let value = (peak_distance - neutral_distance) / interocular;
    if !value.is_finite() {
        return Err(Error::InvalidNormalizer("LP-index is not finite"));
    }
    Ok(LpIndex {
        value,
        peak_position,
        peak_frame_index: frames[peak_position].frame_index(),
        neutral_distance,
        peak_distance,
        interocular_distance: interocular,
    })
}

/// One value of a patient's index time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpIndexPoint {
    /// ISO-8601 UTC instant at which the session was received.
    pub session_timestamp: String,
    pub task_kind: String,
    pub value: f64,
}
