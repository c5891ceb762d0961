use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};

/// Proposals per feature frame in the default configuration.
pub const DEFAULT_PROPOSALS: usize = 25;

/// Axis-aligned box on one feature frame, in feature-map units
/// (`0 ≤ x0 < x1 ≤ W'`, `0 ≤ y0 < y1 ≤ H'`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureBox {
    pub frame: usize,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl FeatureBox {
    pub fn full(frame: usize, height: usize, width: usize) -> Self {
        Self {
            frame,
            x0: 0.0,
            y0: 0.0,
            x1: width as f64,
            y1: height as f64,
        }
    }
}

/// `frames * per_frame` boxes, grouped by feature frame in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub boxes: Vec<FeatureBox>,
    pub per_frame: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl ProposalSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.boxes.len() != self.frames * self.per_frame {
            return Err(VadError::Proposals(format!(
                "expected {} boxes ({} frames x {}), got {}",
                self.frames * self.per_frame,
                self.frames,
                self.per_frame,
                self.boxes.len()
            )));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let ok = b.frame == i / self.per_frame
                && b.x0 >= 0.0
                && b.y0 >= 0.0
                && b.x0 < b.x1
                && b.y0 < b.y1
                && b.x1 <= self.width as f64
                && b.y1 <= self.height as f64;
            if !ok {
                return Err(VadError::BoxOutOfBounds {
                    index: i,
                    x0: b.x0,
                    y0: b.y0,
                    x1: b.x1,
                    y1: b.y1,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }
}

/// Where object boxes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// Coarse-to-fine tiling of each feature frame.
    #[default]
    Grid,
    /// Ground-truth sprite boxes written by the synthetic generator.
    Oracle,
    /// Boxes read from a per-video `proposals.json`.
    External,
}

/// Inputs a provider needs to place boxes for one clip.
#[derive(Debug, Clone, Copy)]
pub struct ProposalContext<'a> {
    /// Bottleneck T', H', W'.
    pub feature_dims: [usize; 3],
    pub clip_frames: usize,
    /// Per clip frame, object boxes normalized to `[0, 1]` as `[x0, y0, x1, y1]`.
    pub frame_boxes: Option<&'a [Vec<[f64; 4]>]>,
}

/// Produces exactly `m` boxes per feature frame.
pub fn propose(ctx: &ProposalContext<'_>, provider: ProviderKind, m: usize) -> Result<ProposalSet> {
    if m == 0 {
        return Err(VadError::Proposals("need at least one proposal per feature frame".into()));
    }
    let [frames, height, width] = ctx.feature_dims;
    let mut boxes = Vec::with_capacity(frames * m);
    for t in 0..frames {
        let mut frame_boxes = match provider {
            ProviderKind::Grid => grid_boxes(t, height, width, m),
            ProviderKind::Oracle | ProviderKind::External => {
                let per_frame = ctx.frame_boxes.ok_or_else(|| {
                    VadError::Proposals(format!(
                        "{provider:?} provider needs per-frame object boxes (synthetic ground truth or proposals.json)"
                    ))
                })?;
                if per_frame.len() != ctx.clip_frames {
                    return Err(VadError::Proposals(format!(
                        "box list covers {} frames, clip has {}",
                        per_frame.len(),
                        ctx.clip_frames
                    )));
                }
                let span = ctx.clip_frames / frames.max(1);
                let source = (t * span + span / 2).min(ctx.clip_frames - 1);
                projected_boxes(t, height, width, &per_frame[source], m)
            }
        };
        while frame_boxes.len() < m {
            frame_boxes.push(FeatureBox::full(t, height, width));
        }
        boxes.extend(frame_boxes);
    }
    let set = ProposalSet {
        boxes,
        per_frame: m,
        frames,
        height,
        width,
    };
    set.validate()?;
    Ok(set)
}

/// Tiles at scales 1x1, 2x2, 3x3, ... in raster order, truncated to `m`.
fn grid_boxes(frame: usize, height: usize, width: usize, m: usize) -> Vec<FeatureBox> {
    let mut out = Vec::with_capacity(m);
    let max_scale = height.max(width).max(1);
    'scales: for n in 1..=max_scale {
        let (bh, bw) = (height as f64 / n as f64, width as f64 / n as f64);
        for i in 0..n {
            for j in 0..n {
                if out.len() == m {
                    break 'scales;
                }
                out.push(FeatureBox {
                    frame,
                    x0: j as f64 * bw,
                    y0: i as f64 * bh,
                    x1: if j + 1 == n { width as f64 } else { (j + 1) as f64 * bw },
                    y1: if i + 1 == n { height as f64 } else { (i + 1) as f64 * bh },
                });
            }
        }
    }
    out
}

fn projected_boxes(frame: usize, height: usize, width: usize, boxes: &[[f64; 4]], m: usize) -> Vec<FeatureBox> {
    let (w, h) = (width as f64, height as f64);
    boxes
        .iter()
        .filter_map(|b| {
            let x0 = (b[0] * w).clamp(0.0, w);
            let y0 = (b[1] * h).clamp(0.0, h);
            let x1 = (b[2] * w).clamp(0.0, w);
            let y1 = (b[3] * h).clamp(0.0, h);
            (x1 > x0 && y1 > y0).then_some(FeatureBox {
                frame,
                x0,
                y0,
                x1,
                y1,
            })
        })
        .take(m)
        .collect()
}
