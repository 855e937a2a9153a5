use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use oromon_core::annotation::parse_jsonl;
use oromon_core::{AnnotationRecord, BoxGate, FrameRef, ModelBackedAnalyzer};
use oromon_eval::{
    compare, evaluate, make_split_toronto, make_split_vw, Fractions, ImagePredictor, NoisyOracle, Oracle, Prediction,
    Predictor, Replay, Report, SplitManifest, Subject, TestCell, VideoEntry,
};
use oromon_onnx::OnnxGraph;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "oromon-eval", version, about = "Dataset splits and NME evaluation for landmark analyzers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a video dataset by whole video, keeping every stride-th frame.
    SplitVw {
        /// JSON lines of {"video_id", "frame_count"}.
        #[arg(long, conflicts_with = "vw_root", required_unless_present = "vw_root")]
        videos: Option<PathBuf>,
        /// A 300-VW style tree: one directory per video with annot/*.pts.
        #[arg(long)]
        vw_root: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        stride: u64,
        #[arg(long, default_value = "0.7,0.2,0.1")]
        fractions: Fractions,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Split a subject dataset with a cohort/gender quota for the test set.
    SplitToronto {
        /// JSON lines of {"subject_id", "cohort", "gender"}.
        #[arg(long)]
        subjects: PathBuf,
        /// Annotation JSON lines whose frames are distributed with their subject.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// cohort:gender:count, repeatable. Defaults to one man and one woman
        /// each from the ALS and stroke cohorts.
        #[arg(long = "test-cell")]
        test_cells: Vec<TestCell>,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Score an analyzer against annotations, per face region.
    Evaluate {
        #[arg(long)]
        annotations: PathBuf,
        /// Restrict to one subset of a split manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test", requires = "manifest")]
        subset: String,
        /// oracle | offset:DX,DY | noise:SIGMA[,MISS_RATE] | replay:FILE | onnx:MODEL
        #[arg(long)]
        analyzer: String,
        /// Name used in the report. Defaults to the analyzer spec.
        #[arg(long)]
        analyzer_id: Option<String>,
        /// Where frame images live, for onnx analyzers.
        #[arg(long, default_value = ".")]
        frames_root: PathBuf,
        #[arg(long, default_value_t = oromon_core::DEFAULT_CONFIDENCE_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Machine-readable report.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Write every prediction as JSON lines for later rescoring.
        #[arg(long)]
        dump_predictions: Option<PathBuf>,
    },
    /// Put two or more reports side by side and mark the best per row.
    Compare {
        /// Report files. A file may also hold a JSON array of reports.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value_t = 2)]
        decimals: usize,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::SplitVw { videos, vw_root, stride, fractions, seed, output } => {
            let videos = match (videos, vw_root) {
                (Some(path), _) => read_jsonl(&path)?,
                (None, Some(root)) => scan_vw_root(&root)?,
                (None, None) => unreachable!("clap requires one of the two"),
            };
            let manifest = make_split_vw(&videos, stride, fractions, seed)?;
            write_json(&output, &manifest)?;
            print_summary(&manifest);
        }
        Command::SplitToronto { subjects, annotations, test_cells, val_fraction, seed, output } => {
            let subjects: Vec<Subject> = read_jsonl(&subjects)?;
            let records = match annotations {
                Some(path) => read_annotations(&path)?,
                None => Vec::new(),
            };
            let spec = if test_cells.is_empty() { TestCell::default_spec() } else { test_cells };
            let manifest = make_split_toronto(&subjects, &records, &spec, val_fraction, seed)?;
            write_json(&output, &manifest)?;
            print_summary(&manifest);
        }
        Command::Evaluate {
            annotations,
            manifest,
            subset,
            analyzer,
            analyzer_id,
            frames_root,
            threshold,
            seed,
            output,
            dump_predictions,
        } => {
            let mut records = read_annotations(&annotations)?;
            if let Some(path) = manifest {
                records = select_subset(records, &read_json(&path)?, &subset)?;
            }
            let id = analyzer_id.unwrap_or_else(|| analyzer.clone());
            let mut predictor = build_predictor(&analyzer, id, &frames_root, threshold, seed)?;
            let (report, predictions) = evaluate(&records, predictor.as_mut())?;
            if let Some(path) = dump_predictions {
                let mut text = String::new();
                for p in &predictions {
                    text.push_str(&serde_json::to_string(p)?);
                    text.push('\n');
                }
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = output {
                write_json(&path, &report)?;
            }
            print!("{}", report.render_table());
        }
        Command::Compare { reports, decimals, output } => {
            let mut all = Vec::new();
            for path in &reports {
                all.extend(read_reports(path)?);
            }
            let table = compare(&all)?;
            if let Some(path) = output {
                write_json(&path, &table)?;
            }
            print!("{}", table.render(decimals));
        }
    }
    Ok(())
}

fn build_predictor(
    spec: &str,
    id: String,
    frames_root: &Path,
    threshold: f64,
    seed: u64,
) -> anyhow::Result<Box<dyn Predictor>> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let numbers = |s: &str| -> anyhow::Result<Vec<f64>> {
        s.split(',').map(|p| p.trim().parse::<f64>().with_context(|| format!("analyzer {spec:?}"))).collect()
    };
    Ok(match kind {
        "oracle" => Box::new(Oracle::new(id)),
        "offset" => match numbers(arg)?[..] {
            [dx, dy] => Box::new(Oracle::new(id).with_offset(dx, dy)),
            _ => bail!("analyzer {spec:?}: expected offset:DX,DY"),
        },
        "noise" => match numbers(arg)?[..] {
            [sigma] => Box::new(NoisyOracle::new(id, sigma, 0.0, seed)?),
            [sigma, miss] => Box::new(NoisyOracle::new(id, sigma, miss, seed)?),
            _ => bail!("analyzer {spec:?}: expected noise:SIGMA[,MISS_RATE]"),
        },
        "replay" => {
            let predictions: Vec<Prediction> = read_jsonl(Path::new(arg))?;
            Box::new(Replay::new(id, predictions)?)
        }
        "onnx" => {
            let graph = OnnxGraph::load(Path::new(arg)).with_context(|| format!("loading {arg}"))?;
            let analyzer = ModelBackedAnalyzer::new(graph, BoxGate::new(threshold));
            Box::new(ImagePredictor::new(id, analyzer, frames_root))
        }
        _ => bail!("unknown analyzer {spec:?}"),
    })
}

fn select_subset(
    records: Vec<AnnotationRecord>,
    manifest: &SplitManifest,
    subset: &str,
) -> anyhow::Result<Vec<AnnotationRecord>> {
    let Some(subset) = manifest.subset(subset) else {
        bail!("manifest has no subset {subset:?}; expected train, val or test");
    };
    let wanted: BTreeSet<&FrameRef> = subset.frames.iter().collect();
    let selected: Vec<AnnotationRecord> = records.into_iter().filter(|r| wanted.contains(&r.frame_ref)).collect();
    if selected.len() < wanted.len() {
        let found: BTreeSet<&FrameRef> = selected.iter().map(|r| &r.frame_ref).collect();
        let missing = wanted.difference(&found).next().expect("some frame is missing");
        bail!("{} manifest frames have no annotation, e.g. {missing}", wanted.len() - found.len());
    }
    Ok(selected)
}

/// Counts the `.pts` files under each `<video>/annot` directory.
fn scan_vw_root(root: &Path) -> anyhow::Result<Vec<VideoEntry>> {
    let mut videos = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let entry = entry?;
        let annot = entry.path().join("annot");
        if !annot.is_dir() {
            continue;
        }
        let mut frame_count = 0;
        for f in fs::read_dir(&annot)? {
            frame_count += u64::from(f?.path().extension().is_some_and(|e| e == "pts"));
        }
        videos.push(VideoEntry { video_id: entry.file_name().to_string_lossy().into_owned(), frame_count });
    }
    if videos.is_empty() {
        bail!("no video directories with annot/ under {}", root.display());
    }
    Ok(videos)
}

fn print_summary(manifest: &SplitManifest) {
    for (name, subset) in manifest.subsets() {
        println!("{name}: {} subjects, {} frames", subset.subjects.len(), subset.frames.len());
    }
}

fn read_annotations(path: &Path) -> anyhow::Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_jsonl(&text).with_context(|| path.display().to_string())
}

fn read_reports(path: &Path) -> anyhow::Result<Vec<Report>> {
    let value: serde_json::Value = read_json(path)?;
    let reports = if value.is_array() { serde_json::from_value(value) } else { serde_json::from_value(value).map(|r| vec![r]) };
    reports.with_context(|| format!("{} is not a report", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
