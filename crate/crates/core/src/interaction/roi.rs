use ndarray::{Array2, Array4};

use super::proposals::ProposalSet;
use crate::error::{Result, VadError};

/// RoI-align grid size per box side.
pub const ROI_GRID: usize = 3;
const SAMPLES: usize = ROI_GRID * ROI_GRID;

/// Bilinear tap: flat cell index into one feature frame and its weight.
type Tap = (usize, f64);

/// Pooled per-proposal features plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct RoiFeatures {
    /// `K x d`, row order matches the proposal order.
    pub feats: Array2<f64>,
    taps: Vec<[[Tap; 4]; SAMPLES]>,
    /// Per (proposal, channel), which of the 9 samples won the max.
    argmax: Array2<u8>,
}

/// Bilinear taps at `(y, x)` in feature-map units; cell `(i, j)` is centered
/// at `(i + 0.5, j + 0.5)` and coordinates clamp to the border cells.
fn bilinear_taps(y: f64, x: f64, height: usize, width: usize) -> [Tap; 4] {
    let gy = (y - 0.5).clamp(0.0, (height - 1) as f64);
    let gx = (x - 0.5).clamp(0.0, (width - 1) as f64);
    let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(height - 1), (x0 + 1).min(width - 1));
    let (ly, lx) = (gy - y0 as f64, gx - x0 as f64);
    [
        (y0 * width + x0, (1.0 - ly) * (1.0 - lx)),
        (y0 * width + x1, (1.0 - ly) * lx),
        (y1 * width + x0, ly * (1.0 - lx)),
        (y1 * width + x1, ly * lx),
    ]
}

/// RoI-align each box onto a 3x3 grid (one bilinear sample at each sub-cell
/// center) and max-pool the grid to one d-vector.
pub fn roi_features(h: &Array4<f64>, props: &ProposalSet) -> Result<RoiFeatures> {
    let (t, height, width, d) = h.dim();
    if props.frames != t || props.height != height || props.width != width {
        return Err(VadError::shape(
            "proposal frame grid",
            &[t, height, width],
            &[props.frames, props.height, props.width],
        ));
    }
    props.validate()?;
    let hs = h.as_slice().expect("standard layout");
    let frame_len = height * width * d;
    let k = props.len();
    let mut feats = Array2::<f64>::zeros((k, d));
    let mut argmax = Array2::<u8>::zeros((k, d));
    let mut taps = Vec::with_capacity(k);
    for (r, b) in props.boxes.iter().enumerate() {
        let base = b.frame * frame_len;
        let (bw, bh) = ((b.x1 - b.x0) / ROI_GRID as f64, (b.y1 - b.y0) / ROI_GRID as f64);
        let box_taps: [[Tap; 4]; SAMPLES] = std::array::from_fn(|s| {
            let (i, j) = (s / ROI_GRID, s % ROI_GRID);
            bilinear_taps(b.y0 + (i as f64 + 0.5) * bh, b.x0 + (j as f64 + 0.5) * bw, height, width)
        });
        let mut row = feats.row_mut(r);
        let mut best = argmax.row_mut(r);
        row.fill(f64::NEG_INFINITY);
        for (s, sample) in box_taps.iter().enumerate() {
            for c in 0..d {
                let v: f64 = sample.iter().map(|&(cell, w)| w * hs[base + cell * d + c]).sum();
                if v > row[c] {
                    row[c] = v;
                    best[c] = s as u8;
                }
            }
        }
        taps.push(box_taps);
    }
    Ok(RoiFeatures { feats, taps, argmax })
}

impl RoiFeatures {
    /// Routes `grad` (K x d) back to the bottleneck through the winning samples.
    pub fn backward(&self, props: &ProposalSet, grad: &Array2<f64>, dims: [usize; 4]) -> Array4<f64> {
        let [_, height, width, d] = dims;
        let mut out = Array4::<f64>::zeros(dims);
        let os = out.as_slice_mut().expect("fresh array");
        let frame_len = height * width * d;
        for (r, b) in props.boxes.iter().enumerate() {
            let base = b.frame * frame_len;
            for c in 0..d {
                let g = grad[[r, c]];
                if g == 0.0 {
                    continue;
                }
                let s = self.argmax[[r, c]] as usize;
                for &(cell, w) in &self.taps[r][s] {
                    os[base + cell * d + c] += w * g;
                }
            }
        }
        out
    }
}
