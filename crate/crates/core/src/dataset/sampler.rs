use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{load_clip, load_split, Clip, ClipConfig, LoadOptions, Video};
use crate::error::{Result, VadError};

/// Seeded training-clip stream over the normal videos of `train/`.
///
/// Clip `i` depends only on `(seed, i)`: epoch `i / n` visits every video
/// once in a seeded order, and each visit draws a uniform window start.
/// Random access makes resumed runs see exactly the clips they would have.
#[derive(Debug, Clone)]
pub struct ClipSampler {
    videos: Vec<Video>,
    cfg: ClipConfig,
    seed: u64,
    next: u64,
}

impl ClipSampler {
    pub fn new(videos: Vec<Video>, cfg: ClipConfig, seed: u64) -> Result<Self> {
        if videos.is_empty() {
            return Err(VadError::Invalid("no training videos".into()));
        }
        for v in &videos {
            if v.len() < cfg.frames {
                return Err(VadError::VideoTooShort {
                    video_id: v.id.clone(),
                    len: v.len(),
                    clip_len: cfg.frames,
                });
            }
        }
        Ok(Self {
            videos,
            cfg,
            seed,
            next: 0,
        })
    }

    pub fn videos(&self) -> &[Video] {
        &self.videos
    }

    pub fn config(&self) -> &ClipConfig {
        &self.cfg
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn clip_at(&self, index: u64) -> Result<Clip> {
        let n = self.videos.len() as u64;
        let epoch = index / n;
        let mut order: Vec<usize> = (0..self.videos.len()).collect();
        order.shuffle(&mut self.rng(2 * epoch));
        let video = &self.videos[order[(index % n) as usize]];
        let start = self.rng(2 * index + 1).random_range(0..=video.len() - self.cfg.frames);
        load_clip(video, start + self.cfg.frames / 2, &self.cfg)
    }

    /// Moves the stream so the next clip is `clip_at(index)`.
    pub fn seek(&mut self, index: u64) {
        self.next = index;
    }

    pub fn position(&self) -> u64 {
        self.next
    }
}

impl Iterator for ClipSampler {
    type Item = Result<Clip>;

    fn next(&mut self) -> Option<Self::Item> {
        let clip = self.clip_at(self.next);
        self.next += 1;
        Some(clip)
    }
}

/// Loads `root/train` and returns the seeded clip stream over it.
pub fn iter_training_clips(root: &Path, cfg: ClipConfig, opts: &LoadOptions, seed: u64) -> Result<ClipSampler> {
    let dir = root.join("train");
    let videos = if dir.is_dir() { load_split(root, "train", opts)? } else { Vec::new() };
    if videos.is_empty() {
        return Err(VadError::EmptyTrainSplit(dir));
    }
    ClipSampler::new(videos, cfg, seed)
}
