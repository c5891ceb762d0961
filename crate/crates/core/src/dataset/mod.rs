//! On-disk video layout, temporal annotations, clip extraction and the
//! synthetic sprite-world generator.
//!
//! Layout: `root/{train,test}/<video_id>/frame_%06d.png` plus
//! `root/annotations.json` covering the test videos.

mod sampler;
mod synth;

pub use sampler::{iter_training_clips, ClipSampler};
pub use synth::{
    generate_synthetic, overlap_pixels, render_frame, Shape, Sprite, SpriteTruth, SynthSpec, SynthSummary,
    SPRITES_FILE,
};

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};
use crate::flow::{load_flow_sidecars, FlowStorage};
use crate::interaction::ProviderKind;

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const PROPOSALS_FILE: &str = "proposals.json";
pub const DEFAULT_FPS: u32 = 25;

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:06}.png")
}

/// Inclusive anomalous frame ranges of one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalAnnotation {
    pub video_id: String,
    pub n_frames: usize,
    #[serde(default = "default_fps")]
    pub fps: u32,
    #[serde(default)]
    pub anomalous_ranges: Vec<[usize; 2]>,
}

fn default_fps() -> u32 {
    DEFAULT_FPS
}

impl TemporalAnnotation {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(VadError::Annotation {
                video_id: self.video_id.clone(),
                msg,
            })
        };
        if self.n_frames == 0 {
            return bad("n_frames must be positive".into());
        }
        if self.fps == 0 {
            return bad("fps must be positive".into());
        }
        let mut prev_end: Option<usize> = None;
        for &[start, end] in &self.anomalous_ranges {
            if start > end || end >= self.n_frames {
                return bad(format!("range [{start}, {end}] invalid for {} frames", self.n_frames));
            }
            if prev_end.is_some_and(|p| start <= p) {
                return bad(format!("range [{start}, {end}] overlaps or precedes the previous one"));
            }
            prev_end = Some(end);
        }
        Ok(())
    }

    /// Builds the minimal sorted ranges covering the ones in `labels`.
    pub fn from_labels(video_id: impl Into<String>, labels: &[u8], fps: u32) -> Self {
        let mut ranges = Vec::new();
        let mut open: Option<usize> = None;
        for (i, &l) in labels.iter().enumerate() {
            match (l != 0, open) {
                (true, None) => open = Some(i),
                (false, Some(s)) => {
                    ranges.push([s, i - 1]);
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            ranges.push([s, labels.len() - 1]);
        }
        Self {
            video_id: video_id.into(),
            n_frames: labels.len(),
            fps,
            anomalous_ranges: ranges,
        }
    }
}

/// `label[i] = 1` iff frame `i` lies in an anomalous range.
pub fn frame_labels(annotation: &TemporalAnnotation) -> Vec<u8> {
    let mut labels = vec![0u8; annotation.n_frames];
    for &[start, end] in &annotation.anomalous_ranges {
        labels[start..=end.min(annotation.n_frames - 1)].fill(1);
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AnnotationFile {
    pub videos: Vec<TemporalAnnotation>,
}

impl AnnotationFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| VadError::io(path, e))?;
        let file: Self = serde_json::from_str(&text).map_err(|source| VadError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        for a in &file.videos {
            a.validate()?;
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn get(&self, video_id: &str) -> Result<&TemporalAnnotation> {
        self.videos
            .iter()
            .find(|a| a.video_id == video_id)
            .ok_or_else(|| VadError::MissingAnnotation(video_id.to_string()))
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| VadError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| VadError::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| VadError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| VadError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Shape of the clips a pipeline consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Append quantized flow as channels 3 and 4.
    pub flow: bool,
}

impl ClipConfig {
    pub fn channels(&self) -> usize {
        if self.flow {
            5
        } else {
            3
        }
    }
}

/// A model input: T x H x W x C in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub data: Array4<f64>,
    pub video_id: String,
    pub center_frame: usize,
    /// First source frame of the window.
    pub start: usize,
    /// Normalized object boxes for each frame of the window, when known.
    pub boxes: Option<Vec<Vec<[f64; 4]>>>,
}

/// A decoded video held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    /// N x H x W x 3 RGB.
    pub frames: Array4<u8>,
    /// (N-1) x H x W x 2 quantized (u, v); index t holds flow t -> t+1.
    pub flow: Option<Array4<u8>>,
    /// Per frame, normalized `[x0, y0, x1, y1]` object boxes.
    pub boxes: Option<Vec<Vec<[f64; 4]>>>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        let (_, h, w, _) = self.frames.dim();
        (h, w)
    }
}

/// Linear map of an 8-bit intensity from [0, 255] to [-1, 1].
pub fn pixel_to_unit(v: f64) -> f64 {
    v / 127.5 - 1.0
}

/// First frame of the T-frame window centered at `center`, clamped so the
/// window lies inside a video of `n` frames (`n ≥ t`).
pub fn window_start(n: usize, t: usize, center: usize) -> usize {
    center.saturating_sub(t / 2).min(n - t)
}

/// Window of `cfg.frames` frames centered on `center_frame`, shifted to fit.
pub fn load_clip(video: &Video, center_frame: usize, cfg: &ClipConfig) -> Result<Clip> {
    let n = video.len();
    if n < cfg.frames {
        return Err(VadError::VideoTooShort {
            video_id: video.id.clone(),
            len: n,
            clip_len: cfg.frames,
        });
    }
    let (h, w) = video.frame_dims();
    if (h, w) != (cfg.height, cfg.width) {
        return Err(VadError::shape(
            format!("frames of video {}", video.id),
            &[cfg.height, cfg.width],
            &[h, w],
        ));
    }
    let start = window_start(n, cfg.frames, center_frame);
    let t = cfg.frames;
    let mut data = Array4::<f64>::zeros((t, h, w, cfg.channels()));
    data.slice_mut(s![.., .., .., ..3])
        .zip_mut_with(&video.frames.slice(s![start..start + t, .., .., ..]), |d, &v| {
            *d = pixel_to_unit(v as f64)
        });
    if cfg.flow {
        let flow = video.flow.as_ref().ok_or_else(|| VadError::MissingFrames {
            video_id: video.id.clone(),
            msg: "flow sidecars not loaded; run the flow subcommand first".into(),
        })?;
        if t < 2 {
            return Err(VadError::Invalid("flow input needs clips of at least 2 frames".into()));
        }
        for i in 0..t {
            // pairs stay inside the window: the last frame reuses the previous pair
            let pair = start + i.min(t - 2);
            data.slice_mut(s![i, .., .., 3..])
                .zip_mut_with(&flow.slice(s![pair, .., .., ..]), |d, &q| {
                    *d = crate::flow::dequantize(q)
                });
        }
    }
    Ok(Clip {
        data,
        video_id: video.id.clone(),
        center_frame,
        start,
        boxes: video.boxes.as_ref().map(|b| b[start..start + t].to_vec()),
    })
}

/// Which per-frame object boxes to attach to loaded videos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    pub flow: Option<FlowStorage>,
    pub boxes: Option<ProviderKind>,
}

#[derive(Debug, Deserialize)]
struct ExternalProposals {
    frames: Vec<Vec<[f64; 4]>>,
}

fn frame_count(dir: &Path, id: &str) -> Result<usize> {
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| VadError::io(dir, e))? {
        let name = entry.map_err(|e| VadError::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name.strip_prefix("frame_").and_then(|r| r.strip_suffix(".png")) {
            indices.push(idx.parse::<usize>().map_err(|_| VadError::MissingFrames {
                video_id: id.to_string(),
                msg: format!("unparseable frame file {name}"),
            })?);
        }
    }
    indices.sort_unstable();
    if let Some((pos, _)) = indices.iter().enumerate().find(|(i, v)| *i != **v) {
        return Err(VadError::MissingFrames {
            video_id: id.to_string(),
            msg: format!("frame {pos} missing"),
        });
    }
    Ok(indices.len())
}

pub fn load_video(dir: &Path, opts: &LoadOptions) -> Result<Video> {
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let n = frame_count(dir, &id)?;
    if n == 0 {
        return Err(VadError::MissingFrames {
            video_id: id,
            msg: "no frame_%06d.png files".into(),
        });
    }
    let mut frames: Option<Array4<u8>> = None;
    for t in 0..n {
        let path = dir.join(frame_file_name(t));
        let img = image::open(&path)
            .map_err(|source| VadError::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let arr = frames.get_or_insert_with(|| Array4::zeros((n, h, w, 3)));
        if arr.dim().1 != h || arr.dim().2 != w {
            return Err(VadError::shape(
                format!("frame {t} of video {id}"),
                &[arr.dim().1, arr.dim().2],
                &[h, w],
            ));
        }
        arr.slice_mut(s![t, .., .., ..])
            .as_slice_mut()
            .expect("contiguous frame")
            .copy_from_slice(img.as_raw());
    }
    let frames = frames.expect("n > 0");
    let flow = match opts.flow {
        Some(storage) => Some(load_flow_sidecars(dir, &id, n, frames.dim().1, frames.dim().2, storage)?),
        None => None,
    };
    let boxes = match opts.boxes {
        Some(ProviderKind::Oracle) => {
            let path = dir.join(SPRITES_FILE);
            if !path.exists() {
                return Err(VadError::Proposals(format!(
                    "oracle provider needs synthetic ground truth, {} not found",
                    path.display()
                )));
            }
            let truth: SpriteTruth = read_json(&path)?;
            Some(truth.boxes())
        }
        Some(ProviderKind::External) => {
            let path = dir.join(PROPOSALS_FILE);
            let ext: ExternalProposals = read_json(&path)?;
            Some(ext.frames)
        }
        _ => None,
    };
    if let Some(b) = &boxes {
        if b.len() != n {
            return Err(VadError::Proposals(format!(
                "video {id}: boxes listed for {} frames, video has {n}",
                b.len()
            )));
        }
    }
    Ok(Video { id, frames, flow, boxes })
}

/// Sorted video directory names under `root/<split>`.
pub fn list_videos(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| VadError::io(&dir, e))? {
        let entry = entry.map_err(|e| VadError::io(&dir, e))?;
        if entry.path().is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_split(root: &Path, split: &str, opts: &LoadOptions) -> Result<Vec<Video>> {
    list_videos(root, split)?
        .iter()
        .map(|d| load_video(d, opts))
        .collect()
}
