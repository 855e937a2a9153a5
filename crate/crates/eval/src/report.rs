//! Per-region NME reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use oromon_core::{dataset_nme, AnnotationRecord, FaceBox, FaceRegion, FrameAnalysis, FrameRef, LandmarkSet};
use serde::{Deserialize, Serialize};

use crate::{EvalError, Predictor, Result};

/// One dumped prediction, written as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub frame_ref: FrameRef,
    pub analysis: FrameAnalysis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub region: String,
    pub nme: f64,
}

impl RegionScore {
    /// `NME_68` for the full set, `NME_<region>` otherwise.
    pub fn label(&self) -> String {
        region_label(&self.region)
    }
}

pub fn region_label(region: &str) -> String {
    if region == FaceRegion::ALL.name() {
        "NME_68".into()
    } else {
        format!("NME_{region}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub annotated: usize,
    pub evaluated: usize,
    /// Frames with no face above the gate. Excluded from every mean.
    pub no_detection: usize,
    /// Evaluated frames where some landmark had no heatmap response.
    pub low_quality: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub analyzer_id: String,
    /// Absent for reports transcribed from elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<FrameCounts>,
    pub rows: Vec<RegionScore>,
}

impl Report {
    pub fn nme(&self, region: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.region == region).map(|r| r.nme)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "analyzer: {}", self.analyzer_id);
        if let Some(f) = self.frames {
            let _ = writeln!(
                out,
                "frames: {} annotated, {} evaluated, {} without detection (excluded), {} low quality",
                f.annotated, f.evaluated, f.no_detection, f.low_quality
            );
        }
        let labels: Vec<String> = self.rows.iter().map(RegionScore::label).collect();
        let width = labels.iter().map(String::len).max().unwrap_or(0).max("region".len());
        let _ = writeln!(out, "{:<width$}  {:>9}", "region", "NME");
        for (label, row) in labels.iter().zip(&self.rows) {
            let _ = writeln!(out, "{label:<width$}  {:>9.4}", row.nme);
        }
        out
    }
}

/// Runs `predictor` over every record, in order.
pub fn predict_all(records: &[AnnotationRecord], predictor: &mut dyn Predictor) -> Result<Vec<Prediction>> {
    records
        .iter()
        .map(|r| Ok(Prediction { frame_ref: r.frame_ref.clone(), analysis: predictor.predict(r)? }))
        .collect()
}

/// Scores predictions against ground truth over the six report regions.
///
/// Frames are matched by reference and summed in reference order, so the
/// result does not depend on the order of either input. NME is normalized by
/// the ground-truth box. Predictions for frames without annotation are
/// ignored.
pub fn score(analyzer_id: &str, records: &[AnnotationRecord], predictions: &[Prediction]) -> Result<Report> {
    let mut truth: BTreeMap<&FrameRef, &AnnotationRecord> = BTreeMap::new();
    for r in records {
        if truth.insert(&r.frame_ref, r).is_some() {
            return Err(EvalError::DuplicateFrame(r.frame_ref.clone()));
        }
    }
    let mut predicted: BTreeMap<&FrameRef, &FrameAnalysis> = BTreeMap::new();
    for p in predictions {
        if predicted.insert(&p.frame_ref, &p.analysis).is_some() {
            return Err(EvalError::DuplicateFrame(p.frame_ref.clone()));
        }
    }

    let mut counts = FrameCounts { annotated: truth.len(), evaluated: 0, no_detection: 0, low_quality: 0 };
    let mut pairs: Vec<(&LandmarkSet, &LandmarkSet, &FaceBox)> = Vec::new();
    for (frame, record) in &truth {
        match predicted.get(frame) {
            None => return Err(EvalError::MissingPrediction((*frame).clone())),
            Some(FrameAnalysis::NoDetection) => counts.no_detection += 1,
            Some(FrameAnalysis::Detected(d)) => {
                counts.evaluated += 1;
                counts.low_quality += usize::from(d.is_low_quality());
                pairs.push((&record.landmarks, &d.landmarks, &record.face_box));
            }
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::Empty(format!(
            "{} annotated frames, none with a detection",
            counts.annotated
        )));
    }

    let rows = FaceRegion::report_order()
        .iter()
        .map(|region| {
            Ok(RegionScore { region: region.name().to_string(), nme: dataset_nme(pairs.iter().copied(), region)? })
        })
        .collect::<Result<_>>()?;
    Ok(Report { analyzer_id: analyzer_id.to_string(), frames: Some(counts), rows })
}

/// Predicts every record and scores the result. The predictions are
/// returned too so they can be dumped and rescored later.
pub fn evaluate(records: &[AnnotationRecord], predictor: &mut dyn Predictor) -> Result<(Report, Vec<Prediction>)> {
    if records.is_empty() {
        return Err(EvalError::Empty("no annotated frames".into()));
    }
    let predictions = predict_all(records, predictor)?;
    let report = score(predictor.analyzer_id(), records, &predictions)?;
    Ok((report, predictions))
}
