//! Train/val/test split manifests.
//!
//! Video datasets are split by whole video, with every `stride`-th frame
//! kept. Subject datasets pick a test set that meets a cohort/gender quota
//! and share the remaining subjects between train and val. Either way no
//! subject ends up in two subsets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use oromon_core::{AnnotationRecord, Cohort, FrameRef};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{EvalError, Result};

pub const SUBSET_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub frame_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Fractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        let parts = f.as_array();
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(EvalError::InvalidSplit(format!("fractions must be non-negative, got {f}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(EvalError::InvalidSplit(format!("fractions must sum to 1, got {f}")));
        }
        Ok(f)
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl fmt::Display for Fractions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.train, self.val, self.test)
    }
}

impl FromStr for Fractions {
    type Err = EvalError;

    /// Parses `train,val,test`, e.g. `0.7,0.2,0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| EvalError::InvalidSplit(format!("fractions {s:?}: {e}")))?;
        match parts[..] {
            [train, val, test] => Self::new(train, val, test),
            _ => Err(EvalError::InvalidSplit(format!("fractions {s:?}: expected three values"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "F", alias = "f", alias = "female")]
    Female,
    #[serde(rename = "M", alias = "m", alias = "male")]
    Male,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "F",
            Gender::Male => "M",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: String,
    pub cohort: Cohort,
    pub gender: Gender,
}

/// How many subjects of one cohort and gender the test set must hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCell {
    pub cohort: Cohort,
    pub gender: Gender,
    pub count: usize,
}

impl TestCell {
    /// Four gender-balanced test subjects: one man and one woman each from
    /// the ALS and stroke cohorts.
    pub fn default_spec() -> Vec<TestCell> {
        let mut spec = Vec::new();
        for cohort in [Cohort::Als, Cohort::Stroke] {
            for gender in [Gender::Female, Gender::Male] {
                spec.push(TestCell { cohort, gender, count: 1 });
            }
        }
        spec
    }
}

impl FromStr for TestCell {
    type Err = EvalError;

    /// Parses `cohort:gender:count`, e.g. `stroke:F:2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| EvalError::InvalidSplit(format!("test cell {s:?}: {why}"));
        let [cohort, gender, count] = s.split(':').collect::<Vec<_>>()[..] else {
            return Err(bad("expected cohort:gender:count"));
        };
        let cohort = serde_json::from_value(serde_json::Value::String(cohort.to_lowercase()))
            .map_err(|_| bad("unknown cohort"))?;
        let gender = serde_json::from_value(serde_json::Value::String(gender.to_string()))
            .map_err(|_| bad("unknown gender"))?;
        let count = count.parse().map_err(|_| bad("count is not an integer"))?;
        Ok(Self { cohort, gender, count })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitPolicy {
    ByVideo { stride: u64, fractions: Fractions, seed: u64 },
    BySubject { test_spec: Vec<TestCell>, val_fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub subjects: Vec<String>,
    pub frames: Vec<FrameRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub policy: SplitPolicy,
    pub train: Subset,
    pub val: Subset,
    pub test: Subset,
}

impl SplitManifest {
    pub fn subsets(&self) -> [(&'static str, &Subset); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    pub fn subset(&self, name: &str) -> Option<&Subset> {
        self.subsets().into_iter().find(|(n, _)| *n == name).map(|(_, s)| s)
    }

    /// Checks that no subject and no frame is listed in two subsets, and no
    /// frame twice within one.
    pub fn validate(&self) -> Result<()> {
        let mut subjects = BTreeSet::new();
        let mut frames = BTreeSet::new();
        for (_, subset) in self.subsets() {
            for s in &subset.subjects {
                if !subjects.insert(s) {
                    return Err(EvalError::SubjectOverlap(s.clone()));
                }
            }
            for f in &subset.frames {
                if !frames.insert(f) {
                    return Err(EvalError::DuplicateFrame(f.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Splits sizes so each subset with a non-zero fraction gets at least one
/// unit, then hands out the rest one at a time to the subset furthest below
/// its target.
fn allocate(n: usize, fractions: &Fractions) -> Result<[usize; 3]> {
    let f = fractions.as_array();
    let active = f.iter().filter(|&&x| x > 0.0).count();
    if n < active {
        return Err(EvalError::TooFewVideos { videos: n, subsets: active });
    }
    let mut counts = f.map(|x| usize::from(x > 0.0));
    for _ in active..n {
        let (best, _) = (0..3)
            .filter(|&i| f[i] > 0.0)
            .map(|i| (i, f[i] * n as f64 - counts[i] as f64))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
        counts[best] += 1;
    }
    Ok(counts)
}

/// Assigns whole videos to subsets and keeps frames `0, stride, 2·stride, …`
/// of each. The result depends only on the set of videos and the seed, not
/// on input order.
pub fn make_split_vw(videos: &[VideoEntry], stride: u64, fractions: Fractions, seed: u64) -> Result<SplitManifest> {
    if stride == 0 {
        return Err(EvalError::InvalidSplit("stride must be at least 1".into()));
    }
    let fractions = Fractions::new(fractions.train, fractions.val, fractions.test)?;
    let mut sorted: Vec<&VideoEntry> = videos.iter().collect();
    sorted.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].video_id == w[1].video_id) {
        return Err(EvalError::InvalidSplit(format!("video {} listed twice", w[0].video_id)));
    }
    let counts = allocate(sorted.len(), &fractions)?;
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut subsets: [Subset; 3] = Default::default();
    let mut rest = &sorted[..];
    for (subset, n) in subsets.iter_mut().zip(counts) {
        let (mine, tail) = rest.split_at(n);
        rest = tail;
        let mut mine = mine.to_vec();
        mine.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        for v in mine {
            subset.subjects.push(v.video_id.clone());
            subset.frames.extend(
                (0..v.frame_count)
                    .step_by(stride as usize)
                    .map(|frame_index| FrameRef::Video { video_id: v.video_id.clone(), frame_index }),
            );
        }
    }
    let [train, val, test] = subsets;
    let manifest = SplitManifest { policy: SplitPolicy::ByVideo { stride, fractions, seed }, train, val, test };
    manifest.validate()?;
    Ok(manifest)
}

/// Draws the test subjects cell by cell, then splits the remaining subjects
/// into val (`val_fraction` of them, rounded) and train. Frames follow
/// their subject.
pub fn make_split_toronto(
    subjects: &[Subject],
    records: &[AnnotationRecord],
    test_spec: &[TestCell],
    val_fraction: f64,
    seed: u64,
) -> Result<SplitManifest> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(EvalError::InvalidSplit(format!("val fraction {val_fraction} outside [0, 1)")));
    }
    let mut by_id: BTreeMap<&str, &Subject> = BTreeMap::new();
    for s in subjects {
        if by_id.insert(&s.subject_id, s).is_some() {
            return Err(EvalError::InvalidSplit(format!("subject {} listed twice", s.subject_id)));
        }
    }
    let mut frames: BTreeMap<&str, Vec<FrameRef>> = BTreeMap::new();
    for r in records {
        let subject = by_id
            .get(r.subject_id.as_str())
            .ok_or_else(|| EvalError::InvalidSplit(format!("frame {} has unknown subject {}", r.frame_ref, r.subject_id)))?;
        if subject.cohort != r.cohort {
            return Err(EvalError::InvalidSplit(format!(
                "frame {} says cohort {} but subject {} is {}",
                r.frame_ref, r.cohort, r.subject_id, subject.cohort
            )));
        }
        frames.entry(&subject.subject_id).or_default().push(r.frame_ref.clone());
    }

    let mut seen_cells = BTreeSet::new();
    for cell in test_spec {
        if !seen_cells.insert((cell.cohort, cell.gender)) {
            return Err(EvalError::InvalidSplit(format!("test cell {}/{} given twice", cell.cohort, cell.gender)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test: Vec<&str> = Vec::new();
    for cell in test_spec.iter().filter(|c| c.count > 0) {
        let mut pool: Vec<&str> = by_id
            .values()
            .filter(|s| s.cohort == cell.cohort && s.gender == cell.gender)
            .map(|s| s.subject_id.as_str())
            .collect();
        if pool.len() < cell.count {
            return Err(EvalError::Infeasible {
                cohort: cell.cohort,
                gender: cell.gender,
                needed: cell.count,
                available: pool.len(),
            });
        }
        pool.shuffle(&mut rng);
        test.extend(&pool[..cell.count]);
    }

    let mut rest: Vec<&str> = by_id.keys().copied().filter(|id| !test.contains(id)).collect();
    if rest.is_empty() {
        return Err(EvalError::InvalidSplit("no subjects left for training".into()));
    }
    rest.shuffle(&mut rng);
    let n_val = ((rest.len() as f64 * val_fraction).round() as usize).min(rest.len() - 1);
    let (val, train) = rest.split_at(n_val);

    let build = |ids: &[&str]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        let mut f: Vec<FrameRef> = ids.iter().flat_map(|id| frames.get(id).cloned().unwrap_or_default()).collect();
        f.sort();
        Subset { subjects: ids.into_iter().map(String::from).collect(), frames: f }
    };
    let manifest = SplitManifest {
        policy: SplitPolicy::BySubject { test_spec: test_spec.to_vec(), val_fraction, seed },
        train: build(train),
        val: build(val),
        test: build(&test),
    };
    manifest.validate()?;
    Ok(manifest)
}
