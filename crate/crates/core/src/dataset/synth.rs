use std::f64::consts::{PI, SQRT_2};
use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{frame_file_name, write_json, AnnotationFile, TemporalAnnotation, ANNOTATIONS_FILE};
use crate::error::{Result, VadError};

pub const SPRITES_FILE: &str = "sprites.json";
const MAX_ATTEMPTS: usize = 1000;
/// Minimum gap between sprite outlines in normal motion, in pixels.
const MARGIN: f64 = 2.0;
const BACKGROUND: [u8; 3] = [90, 90, 90];
const PALETTE: [[u8; 3]; 6] = [
    [220, 60, 60],
    [60, 200, 80],
    [70, 110, 230],
    [230, 210, 60],
    [200, 80, 210],
    [60, 210, 210],
];

/// Parameters of the sprite-world benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Normal videos, written to `train/`.
    pub n_normal_videos: usize,
    /// Videos in `test/` where a square appears for a while.
    pub n_visual_anomaly_videos: usize,
    /// Videos in `test/` where two circles collide and rebound.
    pub n_contextual_anomaly_videos: usize,
    pub frame_size: usize,
    pub video_length: usize,
    /// Clip length T of the pipeline that will consume the data.
    pub clip_length: usize,
    pub fps: u32,
    /// Inclusive range of circles per video.
    pub sprites: [usize; 2],
    pub radius: [f64; 2],
    /// Pixels per frame.
    pub speed: [f64; 2],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_normal_videos: 8,
            n_visual_anomaly_videos: 4,
            n_contextual_anomaly_videos: 4,
            frame_size: 64,
            video_length: 64,
            clip_length: 16,
            fps: super::DEFAULT_FPS,
            sprites: [2, 4],
            radius: [4.0, 7.0],
            speed: [0.2, 0.6],
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(VadError::Invalid(format!("synthetic spec: {m}")));
        if self.video_length < self.clip_length || self.clip_length == 0 {
            return fail("video_length must be at least clip_length");
        }
        if self.frame_size == 0 || self.fps == 0 {
            return fail("frame_size and fps must be positive");
        }
        if self.sprites[0] < 2 || self.sprites[0] > self.sprites[1] {
            return fail("sprites must be an increasing range starting at 2 or more");
        }
        if !(self.radius[0] > 0.0 && self.radius[0] <= self.radius[1]) {
            return fail("radius must be a positive increasing range");
        }
        if !(self.speed[0] >= 0.0 && self.speed[0] <= self.speed[1]) {
            return fail("speed must be a non-negative increasing range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
}

/// One sprite in one frame. `size` is the radius of a circle or half the
/// side of a square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: Shape,
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
    pub color: [u8; 3],
}

impl Sprite {
    /// Whether the pixel whose center is `(px + 0.5, py + 0.5)` is covered.
    pub fn covers(&self, px: usize, py: usize) -> bool {
        let (dx, dy) = (px as f64 + 0.5 - self.cx, py as f64 + 0.5 - self.cy);
        match self.shape {
            Shape::Circle => dx * dx + dy * dy <= self.size * self.size,
            Shape::Square => dx.abs() <= self.size && dy.abs() <= self.size,
        }
    }

    pub fn bbox(&self) -> [f64; 4] {
        [
            self.cx - self.size,
            self.cy - self.size,
            self.cx + self.size,
            self.cy + self.size,
        ]
    }
}

/// Ground-truth sprites per frame, stored next to the frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpriteTruth {
    pub frame_size: usize,
    pub frames: Vec<Vec<Sprite>>,
}

impl SpriteTruth {
    /// Bounding boxes normalized to `[0, 1]`.
    pub fn boxes(&self) -> Vec<Vec<[f64; 4]>> {
        let s = self.frame_size as f64;
        self.frames
            .iter()
            .map(|f| f.iter().map(|sp| sp.bbox().map(|v| (v / s).clamp(0.0, 1.0))).collect())
            .collect()
    }
}

pub fn render_frame(sprites: &[Sprite], size: usize) -> RgbImage {
    let mut img = RgbImage::from_pixel(size as u32, size as u32, image::Rgb(BACKGROUND));
    for sp in sprites {
        let [x0, y0, x1, y1] = sp.bbox();
        let lo = |v: f64| (v.floor().max(0.0) as usize).min(size);
        let hi = |v: f64| (v.ceil().max(0.0) as usize).min(size);
        for py in lo(y0)..hi(y1) {
            for px in lo(x0)..hi(x1) {
                if sp.covers(px, py) {
                    img.put_pixel(px as u32, py as u32, image::Rgb(sp.color));
                }
            }
        }
    }
    img
}

/// Number of pixels covered by two or more sprites.
pub fn overlap_pixels(sprites: &[Sprite], size: usize) -> usize {
    let mut count = 0;
    for py in 0..size {
        for px in 0..size {
            if sprites.iter().filter(|s| s.covers(px, py)).count() >= 2 {
                count += 1;
            }
        }
    }
    count
}

/// A sprite's trajectory over the whole video; `None` where it is hidden.
#[derive(Debug, Clone)]
struct Track {
    shape: Shape,
    size: f64,
    color: [u8; 3],
    pos: Vec<Option<[f64; 2]>>,
}

impl Track {
    /// Radius of a circle enclosing the sprite.
    fn reach(&self) -> f64 {
        match self.shape {
            Shape::Circle => self.size,
            Shape::Square => self.size * SQRT_2,
        }
    }

    fn in_bounds(&self, frame: f64) -> bool {
        self.pos
            .iter()
            .flatten()
            .all(|p| p.iter().all(|&c| c - self.size >= 0.0 && c + self.size <= frame))
    }

    fn clear_of(&self, other: &Track) -> bool {
        let min = self.reach() + other.reach() + MARGIN;
        self.pos.iter().zip(&other.pos).all(|pair| match pair {
            (Some(a), Some(b)) => (a[0] - b[0]).hypot(a[1] - b[1]) >= min,
            _ => true,
        })
    }

    fn sprite(&self, t: usize) -> Option<Sprite> {
        self.pos[t].map(|[cx, cy]| Sprite {
            shape: self.shape,
            cx,
            cy,
            size: self.size,
            color: self.color,
        })
    }
}

struct Sampler<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn uniform(&mut self, range: [f64; 2]) -> f64 {
        if range[0] == range[1] {
            range[0]
        } else {
            self.rng.random_range(range[0]..range[1])
        }
    }

    fn direction(&mut self) -> [f64; 2] {
        let a = self.rng.random_range(0.0..2.0 * PI);
        [a.cos(), a.sin()]
    }

    fn colors(&mut self) -> Vec<[u8; 3]> {
        let mut c = PALETTE.to_vec();
        c.shuffle(&mut self.rng);
        c
    }

    /// Linear track, visible on `visible` frames, centered mid-way through
    /// them at a uniformly drawn point.
    fn linear(&mut self, shape: Shape, size: f64, color: [u8; 3], visible: std::ops::Range<usize>) -> Track {
        let frame = self.spec.frame_size as f64;
        let speed = self.uniform(self.spec.speed);
        let [dx, dy] = self.direction();
        let mid_t = (visible.start + visible.end - 1) as f64 / 2.0;
        let mid = [self.uniform([size, frame - size]), self.uniform([size, frame - size])];
        let pos = (0..self.spec.video_length)
            .map(|t| {
                visible.contains(&t).then(|| {
                    let dt = t as f64 - mid_t;
                    [mid[0] + dx * speed * dt, mid[1] + dy * speed * dt]
                })
            })
            .collect();
        Track {
            shape,
            size,
            color,
            pos,
        }
    }

    fn circles(&mut self, count: usize, colors: &[[u8; 3]]) -> Vec<Track> {
        (0..count)
            .map(|i| {
                let r = self.uniform(self.spec.radius);
                self.linear(Shape::Circle, r, colors[i % colors.len()], 0..self.spec.video_length)
            })
            .collect()
    }

    fn valid(&self, tracks: &[Track], skip_pair: Option<(usize, usize)>) -> bool {
        let frame = self.spec.frame_size as f64;
        if !tracks.iter().all(|t| t.in_bounds(frame)) {
            return false;
        }
        for i in 0..tracks.len() {
            for j in i + 1..tracks.len() {
                if skip_pair != Some((i, j)) && !tracks[i].clear_of(&tracks[j]) {
                    return false;
                }
            }
        }
        true
    }

    fn count(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi.max(lo))
    }

    fn normal(&mut self) -> Result<(Vec<Track>, Vec<u8>)> {
        for _ in 0..MAX_ATTEMPTS {
            let k = self.count(self.spec.sprites[0], self.spec.sprites[1]);
            let colors = self.colors();
            let tracks = self.circles(k, &colors);
            if self.valid(&tracks, None) {
                return Ok((tracks, vec![0; self.spec.video_length]));
            }
        }
        Err(VadError::SpriteLayout { attempts: MAX_ATTEMPTS })
    }

    fn visual(&mut self) -> Result<(Vec<Track>, Vec<u8>)> {
        let n = self.spec.video_length;
        for _ in 0..MAX_ATTEMPTS {
            let k = self.count(self.spec.sprites[0] - 1, self.spec.sprites[1] - 1);
            let colors = self.colors();
            let mut tracks = self.circles(k, &colors);
            let len = self.count((n / 4).max(1), (n / 2).max(1));
            let start = self.count(0, n - len);
            // Same area as a circle from the normal radius range.
            let half = self.uniform(self.spec.radius) * PI.sqrt() / 2.0;
            tracks.push(self.linear(Shape::Square, half, colors[k % colors.len()], start..start + len));
            if self.valid(&tracks, None) {
                let labels = (0..n).map(|t| u8::from((start..start + len).contains(&t))).collect();
                return Ok((tracks, labels));
            }
        }
        Err(VadError::SpriteLayout { attempts: MAX_ATTEMPTS })
    }

    /// Two circles approach head-on, interpenetrate around frame `tc`, and
    /// separate again along the same line; the rest move as in normal videos.
    fn contextual(&mut self) -> Result<(Vec<Track>, Vec<u8>)> {
        let n = self.spec.video_length;
        let size = self.spec.frame_size;
        let frame = size as f64;
        for _ in 0..MAX_ATTEMPTS {
            let k = self.count(self.spec.sprites[0], self.spec.sprites[1]);
            let colors = self.colors();
            let (ra, rb) = (self.uniform(self.spec.radius), self.uniform(self.spec.radius));
            let depth = (0.5 * ra.min(rb)).max(2.0);
            let closest = ra + rb - depth;
            let speed = self.uniform(self.spec.speed).max(0.05);
            let u = self.direction();
            let drift_dir = self.direction();
            let drift = self.uniform([0.0, self.spec.speed[0]]);
            let tc = self.count(n / 4, (3 * n / 4).min(n - 1)) as f64;
            let p = [self.uniform([frame / 4.0, 3.0 * frame / 4.0]), self.uniform([frame / 4.0, 3.0 * frame / 4.0])];
            let at = |t: usize, sign: f64| {
                let dt = t as f64 - tc;
                let half = (closest + 2.0 * speed * dt.abs()) / 2.0;
                Some([
                    p[0] + sign * u[0] * half + drift * drift_dir[0] * dt,
                    p[1] + sign * u[1] * half + drift * drift_dir[1] * dt,
                ])
            };
            let mut tracks = vec![
                Track {
                    shape: Shape::Circle,
                    size: ra,
                    color: colors[0],
                    pos: (0..n).map(|t| at(t, -1.0)).collect(),
                },
                Track {
                    shape: Shape::Circle,
                    size: rb,
                    color: colors[1],
                    pos: (0..n).map(|t| at(t, 1.0)).collect(),
                },
            ];
            tracks.extend(self.circles(k - 2, &colors[2..]));
            if !self.valid(&tracks, Some((0, 1))) {
                continue;
            }
            let labels: Vec<u8> = (0..n)
                .map(|t| {
                    let pair = [tracks[0].sprite(t).unwrap(), tracks[1].sprite(t).unwrap()];
                    u8::from(overlap_pixels(&pair, size) > 0)
                })
                .collect();
            if labels.contains(&1) {
                return Ok((tracks, labels));
            }
        }
        Err(VadError::SpriteLayout { attempts: MAX_ATTEMPTS })
    }
}

/// What [`generate_synthetic`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub annotations: AnnotationFile,
}

fn write_video(dir: &Path, tracks: &[Track], spec: &SynthSpec) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VadError::io(dir, e))?;
    let mut truth = SpriteTruth {
        frame_size: spec.frame_size,
        frames: Vec::with_capacity(spec.video_length),
    };
    for t in 0..spec.video_length {
        let sprites: Vec<Sprite> = tracks.iter().filter_map(|tr| tr.sprite(t)).collect();
        let path = dir.join(frame_file_name(t));
        render_frame(&sprites, spec.frame_size)
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|source| VadError::Image { path, source })?;
        truth.frames.push(sprites);
    }
    write_json(&dir.join(SPRITES_FILE), &truth)
}

/// Writes `train/normal_*`, `test/visual_*`, `test/contextual_*` and
/// `annotations.json` under `out_dir`. Each video draws from its own
/// seeded stream, so output is a pure function of `spec`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<SynthSummary> {
    spec.validate()?;
    for split in ["train", "test"] {
        let d = out_dir.join(split);
        fs::create_dir_all(&d).map_err(|e| VadError::io(&d, e))?;
    }
    let mut summary = SynthSummary {
        train: Vec::new(),
        test: Vec::new(),
        annotations: AnnotationFile::default(),
    };
    let kinds = [
        ("normal", spec.n_normal_videos),
        ("visual", spec.n_visual_anomaly_videos),
        ("contextual", spec.n_contextual_anomaly_videos),
    ];
    for (kind_index, (kind, count)) in kinds.into_iter().enumerate() {
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(((kind_index as u64) << 32) | i as u64);
            let mut sampler = Sampler { spec, rng };
            let (tracks, labels) = match kind_index {
                0 => sampler.normal()?,
                1 => sampler.visual()?,
                _ => sampler.contextual()?,
            };
            let id = format!("{kind}_{i:03}");
            if kind_index == 0 {
                write_video(&out_dir.join("train").join(&id), &tracks, spec)?;
                summary.train.push(id);
            } else {
                write_video(&out_dir.join("test").join(&id), &tracks, spec)?;
                summary
                    .annotations
                    .videos
                    .push(TemporalAnnotation::from_labels(id.clone(), &labels, spec.fps));
                summary.test.push(id);
            }
        }
    }
    summary.annotations.save(&out_dir.join(ANNOTATIONS_FILE))?;
    Ok(summary)
}
