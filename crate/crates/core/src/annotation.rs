//! Ground-truth annotation records, one JSON object per line:
//!
//! ```json
//! {"frame_ref": {"video_id": "v01", "frame_index": 12},
//!  "box": {"x": 10, "y": 20, "w": 120, "h": 140},
//!  "landmarks": [[x0, y0], ..., [x67, y67]],
//!  "cohort": "als", "subject_id": "s07"}
//! ```
//!
//! `frame_ref` may also be a plain path string.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, FaceBox, LandmarkSet, Point, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrameRef {
    Path(String),
    Video { video_id: String, frame_index: u64 },
}

impl FrameRef {
    pub fn frame_index(&self) -> Option<u64> {
        match self {
            FrameRef::Path(_) => None,
            FrameRef::Video { frame_index, .. } => Some(*frame_index),
        }
    }
}

impl fmt::Display for FrameRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameRef::Path(p) => f.write_str(p),
            FrameRef::Video { video_id, frame_index } => write!(f, "{video_id}#{frame_index}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Healthy,
    #[serde(alias = "ALS")]
    Als,
    Stroke,
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cohort::Healthy => "healthy",
            Cohort::Als => "als",
            Cohort::Stroke => "stroke",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct AnnotationRecord {
    pub frame_ref: FrameRef,
    pub face_box: FaceBox,
    pub landmarks: LandmarkSet,
    pub cohort: Cohort,
    pub subject_id: String,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    frame_ref: FrameRef,
    #[serde(rename = "box")]
    face_box: FaceBox,
    landmarks: Vec<[f64; 2]>,
    cohort: Cohort,
    subject_id: String,
}

impl TryFrom<RawRecord> for AnnotationRecord {
    type Error = Error;

    fn try_from(raw: RawRecord) -> Result<Self> {
        let frame_index = raw.frame_ref.frame_index().unwrap_or(0);
        let landmarks =
            LandmarkSet::from_points(raw.landmarks.into_iter().map(Point::from), frame_index)?;
        Ok(Self {
            frame_ref: raw.frame_ref,
            face_box: raw.face_box,
            landmarks,
            cohort: raw.cohort,
            subject_id: raw.subject_id,
        })
    }
}

impl From<AnnotationRecord> for RawRecord {
    fn from(r: AnnotationRecord) -> Self {
        RawRecord {
            frame_ref: r.frame_ref,
            face_box: r.face_box,
            landmarks: r.landmarks.points().iter().map(|&p| p.into()).collect(),
            cohort: r.cohort,
            subject_id: r.subject_id,
        }
    }
}

/// A malformed line in an annotation file.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("annotation line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// Parses JSON lines, skipping blank lines. Line numbers are 1-based.
pub fn parse_jsonl(text: &str) -> std::result::Result<Vec<AnnotationRecord>, ParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ParseError { line: i + 1, message: e.to_string() })
        })
        .collect()
}

pub fn to_jsonl<'a>(records: impl IntoIterator<Item = &'a AnnotationRecord>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("annotation records always serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(frame_ref: &str) -> String {
        let pts: Vec<[f64; 2]> = (0..68).map(|i| [i as f64, 2.0]).collect();
        format!(
            r#"{{"frame_ref":{frame_ref},"box":{{"x":1,"y":2,"w":30,"h":40}},"landmarks":{},"cohort":"ALS","subject_id":"s1"}}"#,
            serde_json::to_string(&pts).unwrap()
        )
    }

    #[test]
    fn parses_both_frame_ref_forms() {
        let text = format!("{}\n\n{}\n", line(r#""a/b.png""#), line(r#"{"video_id":"v","frame_index":9}"#));
        let recs = parse_jsonl(&text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].frame_ref, FrameRef::Path("a/b.png".into()));
        assert_eq!(recs[1].landmarks.frame_index(), 9);
        assert_eq!(recs[1].cohort, Cohort::Als);
        assert_eq!(recs[0].face_box.diagonal(), 50.0);
        let again = parse_jsonl(&to_jsonl(&recs)).unwrap();
        assert_eq!(again, recs);
    }

    #[test]
    fn reports_line_numbers() {
        let text = format!("{}\n{{\"frame_ref\":\"x\"}}\n", line(r#""a""#));
        let err = parse_jsonl(&text).unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn rejects_short_landmark_lists() {
        let bad = r#"{"frame_ref":"a","box":{"x":1,"y":2,"w":30,"h":40},"landmarks":[[1,2]],"cohort":"healthy","subject_id":"s"}"#;
        assert!(parse_jsonl(bad).is_err());
    }
}
