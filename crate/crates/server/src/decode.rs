//! Decode adapters turning a recorded task file into the canonical frame
//! directory: `frame_000000.png`, `frame_000001.png`, … plus `meta.json`
//! holding `{"source_fps": …, "duration_s": …}`.

use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use image::RgbImage;
use oromon_core::VideoMeta;
use serde::{Deserialize, Serialize};

pub const FRAME_BUNDLE_MIME: &str = "application/x-oromon-frames+zip";
pub const META_NAME: &str = "meta.json";

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("unsupported container: {0}")]
    Unsupported(String),
    #[error("corrupt recording: {0}")]
    Corrupt(String),
    #[error("decoder unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub source_fps: f64,
    pub duration_s: f64,
}

impl From<FrameMeta> for VideoMeta {
    fn from(m: FrameMeta) -> Self {
        VideoMeta { source_fps: m.source_fps, duration_s: m.duration_s }
    }
}

pub fn frame_name(index: u64) -> String {
    format!("frame_{index:06}.png")
}

/// A decoded recording on disk.
#[derive(Debug)]
pub struct FrameDir {
    dir: PathBuf,
    meta: FrameMeta,
    frame_count: u64,
}

impl FrameDir {
    /// Opens a directory in canonical layout. Frames must be numbered
    /// contiguously from zero.
    pub fn open(dir: &Path) -> Result<Self, DecodeError> {
        let raw = std::fs::read(dir.join(META_NAME)).map_err(|e| DecodeError::Corrupt(format!("{META_NAME}: {e}")))?;
        let meta: FrameMeta =
            serde_json::from_slice(&raw).map_err(|e| DecodeError::Corrupt(format!("{META_NAME}: {e}")))?;
        if !(meta.source_fps.is_finite() && meta.source_fps > 0.0 && meta.duration_s.is_finite() && meta.duration_s >= 0.0)
        {
            return Err(DecodeError::Corrupt(format!("implausible metadata {meta:?}")));
        }
        let mut frame_count = 0;
        while dir.join(frame_name(frame_count)).is_file() {
            frame_count += 1;
        }
        Ok(Self { dir: dir.to_path_buf(), meta, frame_count })
    }

    pub fn meta(&self) -> FrameMeta {
        self.meta
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    pub fn frame(&self, index: u64) -> Result<RgbImage, DecodeError> {
        let bytes = std::fs::read(self.dir.join(frame_name(index)))?;
        oromon_core::analyzer::decode_frame(&bytes).map_err(|e| DecodeError::Corrupt(e.to_string()))
    }
}

/// Writes a recording into `out` in canonical layout.
pub trait Decoder: Send + Sync {
    fn decode(&self, recording: &[u8], out: &Path) -> Result<(), DecodeError>;
}

/// Zip of canonical-layout files. Used by tests and by recorders that
/// already extract frames client-side.
#[derive(Debug, Default, Clone, Copy)]
pub struct FrameBundleDecoder;

impl Decoder for FrameBundleDecoder {
    fn decode(&self, recording: &[u8], out: &Path) -> Result<(), DecodeError> {
        let mut zip = zip::ZipArchive::new(Cursor::new(recording)).map_err(|e| DecodeError::Corrupt(e.to_string()))?;
        for i in 0..zip.len() {
            let mut entry = zip.by_index(i).map_err(|e| DecodeError::Corrupt(e.to_string()))?;
            let name = entry.name().to_string();
            let canonical = name == META_NAME
                || (name.len() == "frame_000000.png".len()
                    && name.starts_with("frame_")
                    && name.ends_with(".png")
                    && name[6..12].bytes().all(|b| b.is_ascii_digit()));
            if !canonical {
                return Err(DecodeError::Corrupt(format!("unexpected entry {name:?} in frame bundle")));
            }
            let mut bytes = Vec::new();
            entry.read_to_end(&mut bytes).map_err(|e| DecodeError::Corrupt(format!("{name}: {e}")))?;
            std::fs::write(out.join(&name), bytes)?;
        }
        Ok(())
    }
}

/// Packs frames into a bundle readable by [`FrameBundleDecoder`].
pub fn pack_frame_bundle(meta: FrameMeta, frames: &[RgbImage]) -> Vec<u8> {
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Stored);
    zip.start_file(META_NAME, opts).expect("in-memory zip");
    zip.write_all(&serde_json::to_vec(&meta).expect("meta serializes")).expect("in-memory zip");
    for (i, frame) in frames.iter().enumerate() {
        let mut png = Vec::new();
        frame.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png).expect("png encoding of RGB8");
        zip.start_file(frame_name(i as u64), opts).expect("in-memory zip");
        zip.write_all(&png).expect("in-memory zip");
    }
    zip.finish().expect("in-memory zip").into_inner()
}

/// Shells out to `ffprobe` and `ffmpeg` for real video containers.
#[derive(Debug, Clone)]
pub struct FfmpegDecoder {
    pub ffmpeg: PathBuf,
    pub ffprobe: PathBuf,
}

impl Default for FfmpegDecoder {
    fn default() -> Self {
        Self { ffmpeg: "ffmpeg".into(), ffprobe: "ffprobe".into() }
    }
}

#[derive(Deserialize)]
struct Probe {
    streams: Vec<ProbeStream>,
    format: ProbeFormat,
}

#[derive(Deserialize)]
struct ProbeStream {
    avg_frame_rate: String,
}

#[derive(Deserialize)]
struct ProbeFormat {
    duration: Option<String>,
}

fn parse_rate(s: &str) -> Option<f64> {
    let rate = match s.split_once('/') {
        Some((n, d)) => n.parse::<f64>().ok()? / d.parse::<f64>().ok()?,
        None => s.parse().ok()?,
    };
    (rate.is_finite() && rate > 0.0).then_some(rate)
}

impl FfmpegDecoder {
    fn run(&self, cmd: &mut Command) -> Result<Vec<u8>, DecodeError> {
        let output = cmd
            .output()
            .map_err(|e| DecodeError::Unavailable(format!("{:?}: {e}", cmd.get_program())))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let tail: String = stderr.lines().rev().take(3).collect::<Vec<_>>().join(" | ");
            return Err(DecodeError::Corrupt(format!("{:?} failed: {tail}", cmd.get_program())));
        }
        Ok(output.stdout)
    }
}

impl Decoder for FfmpegDecoder {
    fn decode(&self, recording: &[u8], out: &Path) -> Result<(), DecodeError> {
        let input = out.join("input.bin");
        std::fs::write(&input, recording)?;
        let probe = self.run(
            Command::new(&self.ffprobe)
                .args(["-v", "error", "-select_streams", "v:0"])
                .args(["-show_entries", "stream=avg_frame_rate:format=duration", "-of", "json"])
                .arg(&input),
        )?;
        let probe: Probe = serde_json::from_slice(&probe).map_err(|e| DecodeError::Corrupt(format!("ffprobe: {e}")))?;
        let stream = probe.streams.first().ok_or_else(|| DecodeError::Corrupt("no video stream".into()))?;
        let fps = parse_rate(&stream.avg_frame_rate)
            .ok_or_else(|| DecodeError::Corrupt(format!("frame rate {:?}", stream.avg_frame_rate)))?;
        self.run(
            Command::new(&self.ffmpeg)
                .args(["-v", "error", "-i"])
                .arg(&input)
                .args(["-vsync", "passthrough", "-start_number", "0"])
                .arg(out.join("frame_%06d.png")),
        )?;
        std::fs::remove_file(&input)?;
        let frames = std::fs::read_dir(out)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("frame_"))
            .count();
        // Containers from browser recorders often omit the duration.
        let duration_s = probe
            .format
            .duration
            .and_then(|d| d.parse::<f64>().ok())
            .unwrap_or(frames as f64 / fps);
        let meta = FrameMeta { source_fps: fps, duration_s };
        std::fs::write(out.join(META_NAME), serde_json::to_vec(&meta).expect("meta serializes"))?;
        Ok(())
    }
}

/// Picks a decoder by the mime type recorded in the manifest.
pub struct DecoderRegistry {
    bundle: FrameBundleDecoder,
    video: Box<dyn Decoder>,
}

impl Default for DecoderRegistry {
    fn default() -> Self {
        Self { bundle: FrameBundleDecoder, video: Box::new(FfmpegDecoder::default()) }
    }
}

impl DecoderRegistry {
    pub fn with_video_decoder(video: Box<dyn Decoder>) -> Self {
        Self { bundle: FrameBundleDecoder, video }
    }

    /// Without a mime type, zip content is taken to be a frame bundle.
    pub fn for_recording(&self, mime: Option<&str>, bytes: &[u8]) -> &dyn Decoder {
        match mime {
            Some(FRAME_BUNDLE_MIME) => &self.bundle,
            Some(_) => self.video.as_ref(),
            None if bytes.starts_with(b"PK\x03\x04") => &self.bundle,
            None => self.video.as_ref(),
        }
    }

    pub fn decode(&self, mime: Option<&str>, bytes: &[u8], out: &Path) -> Result<FrameDir, DecodeError> {
        self.for_recording(mime, bytes).decode(bytes, out)?;
        FrameDir::open(out)
    }
}
