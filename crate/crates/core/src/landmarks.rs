//! The 68-point facial landmark scheme.
//!
//! Indices follow the widely used iBUG layout: jaw line 0–16, eyebrows
//! 17–26, nose 27–35, eyes 36–47 (left 36–41, right 42–47) and mouth 48–67
//! (outer lip 48–59, inner lip 60–67). "Left" and "right" are image-space,
//! i.e. the subject's right eye is the left eye in the frame.

use std::borrow::Cow;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LANDMARK_COUNT: usize = 68;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Arithmetic mean of a non-empty point list.
    pub fn centroid(points: impl IntoIterator<Item = Point>) -> Option<Point> {
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0, 0.0);
        for p in points {
            sx += p.x;
            sy += p.y;
            n += 1;
        }
        (n > 0).then(|| Point::new(sx / n as f64, sy / n as f64))
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point::new(x, y)
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// A single indexed landmark, as yielded by [`LandmarkSet::iter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

/// All 68 landmarks of one frame, ordered by index.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLandmarkSet", into = "RawLandmarkSet")]
pub struct LandmarkSet {
    points: [Point; LANDMARK_COUNT],
    frame_index: u64,
}

#[derive(Serialize, Deserialize)]
struct RawLandmarkSet {
    #[serde(default)]
    frame_index: u64,
    points: Vec<[f64; 2]>,
}

impl TryFrom<RawLandmarkSet> for LandmarkSet {
    type Error = Error;

    fn try_from(raw: RawLandmarkSet) -> Result<Self> {
        LandmarkSet::from_points(raw.points.into_iter().map(Point::from), raw.frame_index)
    }
}

impl From<LandmarkSet> for RawLandmarkSet {
    fn from(set: LandmarkSet) -> Self {
        RawLandmarkSet {
            frame_index: set.frame_index,
            points: set.points.iter().map(|&p| p.into()).collect(),
        }
    }
}

impl LandmarkSet {
    /// Builds a set from exactly 68 finite points given in index order.
    pub fn from_points(points: impl IntoIterator<Item = Point>, frame_index: u64) -> Result<Self> {
        let mut out = [Point::default(); LANDMARK_COUNT];
        let mut n = 0;
        for p in points {
            if n == LANDMARK_COUNT {
                return Err(Error::InvalidLandmarks(format!(
                    "expected {LANDMARK_COUNT} points, got more"
                )));
            }
            if !p.is_finite() {
                return Err(Error::InvalidLandmarks(format!(
                    "landmark {n} has a non-finite coordinate"
                )));
            }
            out[n] = p;
            n += 1;
        }
        if n != LANDMARK_COUNT {
            return Err(Error::InvalidLandmarks(format!(
                "expected {LANDMARK_COUNT} points, got {n}"
            )));
        }
        Ok(Self { points: out, frame_index })
    }

    /// Builds a set from landmarks in arbitrary order. Every index 0..67 must
    /// appear exactly once.
    pub fn from_landmarks(landmarks: &[Landmark], frame_index: u64) -> Result<Self> {
        let mut slots: [Option<Point>; LANDMARK_COUNT] = [None; LANDMARK_COUNT];
        for lm in landmarks {
            let slot = slots.get_mut(lm.index).ok_or_else(|| {
                Error::InvalidLandmarks(format!("landmark index {} out of range", lm.index))
            })?;
            if slot.replace(Point::new(lm.x, lm.y)).is_some() {
                return Err(Error::InvalidLandmarks(format!(
                    "landmark index {} appears twice",
                    lm.index
                )));
            }
        }
        let mut points = Vec::with_capacity(LANDMARK_COUNT);
        for (i, slot) in slots.iter().enumerate() {
            points.push(slot.ok_or_else(|| {
                Error::InvalidLandmarks(format!("landmark index {i} missing"))
            })?);
        }
        Self::from_points(points, frame_index)
    }

    pub fn points(&self) -> &[Point; LANDMARK_COUNT] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Point {
        self.points[index]
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn with_frame_index(mut self, frame_index: u64) -> Self {
        self.frame_index = frame_index;
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = Landmark> + '_ {
        self.points
            .iter()
            .enumerate()
            .map(|(index, p)| Landmark { index, x: p.x, y: p.y })
    }

    /// Applies `f` to every point. Fails if `f` produces a non-finite value.
    pub fn map_points(&self, f: impl FnMut(Point) -> Point) -> Result<Self> {
        Self::from_points(self.points.iter().copied().map(f), self.frame_index)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        self.map_points(|p| Point::new(p.x + dx, p.y + dy))
    }
}

impl fmt::Debug for LandmarkSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LandmarkSet")
            .field("frame_index", &self.frame_index)
            .field("points", &&self.points[..])
            .finish()
    }
}

/// Axis-aligned face rectangle with detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFaceBox", into = "RawFaceBox")]
pub struct FaceBox {
    x: f64,
    y: f64,
    width: f64,
    height: f64,
    confidence: f64,
}

#[derive(Serialize, Deserialize)]
struct RawFaceBox {
    x: f64,
    y: f64,
    #[serde(alias = "width")]
    w: f64,
    #[serde(alias = "height")]
    h: f64,
    #[serde(default = "full_confidence")]
    confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

impl TryFrom<RawFaceBox> for FaceBox {
    type Error = Error;

    fn try_from(r: RawFaceBox) -> Result<Self> {
        FaceBox::new(r.x, r.y, r.w, r.h, r.confidence)
    }
}

impl From<FaceBox> for RawFaceBox {
    fn from(b: FaceBox) -> Self {
        RawFaceBox { x: b.x, y: b.y, w: b.width, h: b.height, confidence: b.confidence }
    }
}

impl FaceBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64, confidence: f64) -> Result<Self> {
        if ![x, y, width, height, confidence].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBox("non-finite field".into()));
        }
        if width <= 0.0 || height <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "width and height must be positive, got {width}x{height}"
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidBox(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self { x, y, width, height, confidence })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x + dx, self.y + dy, self.width, self.height, self.confidence)
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.x * s, self.y * s, self.width * s, self.height * s, self.confidence)
    }
}

const CHIN: [usize; 17] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16];
const EYEBROWS: [usize; 10] = [17, 18, 19, 20, 21, 22, 23, 24, 25, 26];
const NOSE: [usize; 9] = [27, 28, 29, 30, 31, 32, 33, 34, 35];
const EYES: [usize; 12] = [36, 37, 38, 39, 40, 41, 42, 43, 44, 45, 46, 47];
const MOUTH: [usize; 20] = [
    48, 49, 50, 51, 52, 53, 54, 55, 56, 57, 58, 59, 60, 61, 62, 63, 64, 65, 66, 67,
];
const ALL: [usize; 68] = {
    let mut all = [0usize; 68];
    let mut i = 0;
    while i < 68 {
        all[i] = i;
        i += 1;
    }
    all
};

pub const LEFT_EYE: [usize; 6] = [36, 37, 38, 39, 40, 41];
pub const RIGHT_EYE: [usize; 6] = [42, 43, 44, 45, 46, 47];
pub const MOUTH_LEFT_CORNER: usize = 48;
pub const MOUTH_RIGHT_CORNER: usize = 54;

/// A named subset of landmark indices that NME can be evaluated over.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FaceRegion {
    name: Cow<'static, str>,
    indices: Cow<'static, [usize]>,
}

impl FaceRegion {
    pub const CHIN: FaceRegion = FaceRegion::fixed("chin", &CHIN);
    pub const EYEBROWS: FaceRegion = FaceRegion::fixed("eyebrows", &EYEBROWS);
    pub const NOSE: FaceRegion = FaceRegion::fixed("nose", &NOSE);
    pub const EYES: FaceRegion = FaceRegion::fixed("eyes", &EYES);
    pub const MOUTH: FaceRegion = FaceRegion::fixed("mouth", &MOUTH);
    pub const ALL: FaceRegion = FaceRegion::fixed("all", &ALL);

    const fn fixed(name: &'static str, indices: &'static [usize]) -> Self {
        Self { name: Cow::Borrowed(name), indices: Cow::Borrowed(indices) }
    }

    /// The five disjoint regions that together cover all 68 landmarks.
    pub fn partition() -> [FaceRegion; 5] {
        [Self::CHIN, Self::EYEBROWS, Self::NOSE, Self::EYES, Self::MOUTH]
    }

    /// `all` followed by the five partition regions, in report order.
    pub fn report_order() -> [FaceRegion; 6] {
        [Self::ALL, Self::CHIN, Self::EYEBROWS, Self::NOSE, Self::EYES, Self::MOUTH]
    }

    pub fn by_name(name: &str) -> Option<FaceRegion> {
        Self::report_order().into_iter().find(|r| r.name == name)
    }

    pub fn custom(name: impl Into<String>, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidRegion("region has no landmarks".into()));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= LANDMARK_COUNT) {
            return Err(Error::InvalidRegion(format!("index {bad} outside 0..67")));
        }
        Ok(Self { name: Cow::Owned(name.into()), indices: Cow::Owned(indices) })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_sizes() {
        assert_eq!(FaceRegion::CHIN.len(), 17);
        assert_eq!(FaceRegion::EYEBROWS.len(), 10);
        assert_eq!(FaceRegion::NOSE.len(), 9);
        assert_eq!(FaceRegion::EYES.len(), 12);
        assert_eq!(FaceRegion::MOUTH.len(), 20);
        assert_eq!(FaceRegion::ALL.len(), 68);
    }

    #[test]
    fn regions_partition_all_indices() {
        let mut seen = [0u8; LANDMARK_COUNT];
        for region in FaceRegion::partition() {
            for &i in region.indices() {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn region_lookup_by_name() {
        assert_eq!(FaceRegion::by_name("mouth"), Some(FaceRegion::MOUTH));
        assert_eq!(FaceRegion::by_name("ears"), None);
    }

    #[test]
    fn custom_region_rejects_out_of_range() {
        assert!(FaceRegion::custom("x", vec![68]).is_err());
        assert!(FaceRegion::custom("x", vec![]).is_err());
        assert_eq!(FaceRegion::custom("x", vec![3]).unwrap().indices(), &[3]);
    }

    #[test]
    fn landmark_set_requires_68_points() {
        let short = vec![Point::default(); 67];
        assert!(LandmarkSet::from_points(short, 0).is_err());
        let long = vec![Point::default(); 69];
        assert!(LandmarkSet::from_points(long, 0).is_err());
        let mut nan = vec![Point::default(); 68];
        nan[10].y = f64::NAN;
        assert!(LandmarkSet::from_points(nan, 0).is_err());
    }

    #[test]
    fn from_landmarks_checks_uniqueness() {
        let mut lms: Vec<Landmark> =
            (0..68).map(|i| Landmark { index: i, x: i as f64, y: 0.0 }).collect();
        lms.reverse();
        let set = LandmarkSet::from_landmarks(&lms, 3).unwrap();
        assert_eq!(set.point(5), Point::new(5.0, 0.0));
        lms[0].index = 1;
        assert!(LandmarkSet::from_landmarks(&lms, 3).is_err());
    }

    #[test]
    fn face_box_validation() {
        assert!(FaceBox::new(0.0, 0.0, 0.0, 10.0, 0.9).is_err());
        assert!(FaceBox::new(0.0, 0.0, 10.0, 10.0, 1.5).is_err());
        let b = FaceBox::new(0.0, 0.0, 30.0, 40.0, 0.9).unwrap();
        assert_eq!(b.diagonal(), 50.0);
    }

    #[test]
    fn serde_shapes() {
        let set = LandmarkSet::from_points((0..68).map(|i| Point::new(i as f64, 1.0)), 7).unwrap();
        let json = serde_json::to_string(&set).unwrap();
        let back: LandmarkSet = serde_json::from_str(&json).unwrap();
        assert_eq!(set, back);
        let b: FaceBox = serde_json::from_str(r#"{"x":1,"y":2,"w":3,"h":4}"#).unwrap();
        assert_eq!(b.confidence(), 1.0);
        assert!(serde_json::from_str::<FaceBox>(r#"{"x":1,"y":2,"w":0,"h":4}"#).is_err());
    }
}
