//! Two-frame optical flow, its 8-bit quantization, and per-video sidecars.
//!
//! Flow components are truncated to [-20, 20] pixels/frame, mapped to
//! [0, 255] and stored as grayscale images; at load time they are mapped to
//! [-1, 1] like the RGB channels.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, ImageFormat};
use ndarray::{s, Array2, Array4, Zip};
use serde::{Deserialize, Serialize};

use crate::dataset::{frame_file_name, list_videos};
use crate::error::{Result, VadError};

pub const FLOW_BOUND: f64 = 20.0;
pub const JPEG_QUALITY: u8 = 90;
const FLO_MAGIC: f32 = 202021.25;

/// Horizontal (`u`) and vertical (`v`) displacement in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            u: Array2::zeros((h, w)),
            v: Array2::zeros((h, w)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedFlowPair {
    pub u: Array2<u8>,
    pub v: Array2<u8>,
}

/// `round((clamp(v, -20, 20) + 20) / 40 * 255)`, half away from zero.
pub fn encode_value(v: f64) -> u8 {
    ((v.clamp(-FLOW_BOUND, FLOW_BOUND) + FLOW_BOUND) / (2.0 * FLOW_BOUND) * 255.0).round() as u8
}

/// `q / 255 * 2 - 1`.
pub fn dequantize(q: u8) -> f64 {
    q as f64 / 255.0 * 2.0 - 1.0
}

/// [`dequantize`] for values that did not come from a `u8`.
pub fn decode_value(q: f64) -> Result<f64> {
    if !(0.0..=255.0).contains(&q) {
        return Err(VadError::FlowRange { value: q });
    }
    Ok(q / 255.0 * 2.0 - 1.0)
}

/// Maps a quantized level back to pixels/frame.
pub fn dequantize_to_flow(q: u8) -> f64 {
    q as f64 / 255.0 * 2.0 * FLOW_BOUND - FLOW_BOUND
}

pub fn encode_flow(flow: &FlowField) -> QuantizedFlowPair {
    QuantizedFlowPair {
        u: flow.u.mapv(encode_value),
        v: flow.v.mapv(encode_value),
    }
}

/// Normalized (u, v) in [-1, 1].
pub fn decode_flow(q: &QuantizedFlowPair) -> (Array2<f64>, Array2<f64>) {
    (q.u.mapv(dequantize), q.v.mapv(dequantize))
}

/// Coarse-to-fine Horn–Schunck with image warping at each level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceFlow {
    /// Smoothness weight, in intensity units of a [0, 255] image.
    pub alpha: f64,
    pub iterations: usize,
    pub warps: usize,
    pub max_levels: usize,
    /// Coarsest level is at least this many pixels on its short side.
    pub min_size: usize,
}

impl Default for ReferenceFlow {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            iterations: 60,
            warps: 3,
            max_levels: 4,
            min_size: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FlowBackend {
    #[default]
    Reference,
    /// Middlebury `.flo` files named `flow_%06d.flo` inside each video directory.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FlowStorage {
    #[default]
    Lossless,
    Jpeg,
}

impl FlowStorage {
    pub fn extension(self) -> &'static str {
        match self {
            FlowStorage::Lossless => "png",
            FlowStorage::Jpeg => "jpg",
        }
    }
}

/// Luma of an 8-bit RGB frame, in [0, 255].
pub fn grayscale(rgb: &image::RgbImage) -> Array2<f64> {
    Array2::from_shape_fn((rgb.height() as usize, rgb.width() as usize), |(y, x)| {
        let p = rgb.get_pixel(x as u32, y as u32).0;
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    })
}

fn at_clamped(img: &Array2<f64>, y: isize, x: isize) -> f64 {
    let (h, w) = img.dim();
    img[[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]]
}

fn bilinear(img: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = img.dim();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let a = at_clamped(img, y0, x0) * (1.0 - fx) + at_clamped(img, y0, x0 + 1) * fx;
    let b = at_clamped(img, y0 + 1, x0) * (1.0 - fx) + at_clamped(img, y0 + 1, x0 + 1) * fx;
    a * (1.0 - fy) + b * fy
}

fn downsample(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(y, x)| {
        (img[[2 * y, 2 * x]] + img[[2 * y + 1, 2 * x]] + img[[2 * y, 2 * x + 1]] + img[[2 * y + 1, 2 * x + 1]]) / 4.0
    })
}

/// Resamples a flow component onto a finer grid and rescales its magnitude.
fn upsample(f: &Array2<f64>, h: usize, w: usize, scale: f64) -> Array2<f64> {
    let (fh, fw) = f.dim();
    let (ry, rx) = (fh as f64 / h as f64, fw as f64 / w as f64);
    Array2::from_shape_fn((h, w), |(y, x)| {
        scale * bilinear(f, (y as f64 + 0.5) * ry - 0.5, (x as f64 + 0.5) * rx - 0.5)
    })
}

fn neighbour_mean(f: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(f.dim(), |(y, x)| {
        let (y, x) = (y as isize, x as isize);
        (at_clamped(f, y - 1, x) + at_clamped(f, y + 1, x) + at_clamped(f, y, x - 1) + at_clamped(f, y, x + 1)) / 4.0
    })
}

fn refine(a: &Array2<f64>, b: &Array2<f64>, flow: &mut FlowField, p: &ReferenceFlow) {
    let (h, w) = a.dim();
    let alpha2 = p.alpha * p.alpha;
    for _ in 0..p.warps {
        let warped = Array2::from_shape_fn((h, w), |(y, x)| {
            bilinear(b, y as f64 + flow.v[[y, x]], x as f64 + flow.u[[y, x]])
        });
        let grad = |img: &Array2<f64>, dy: isize, dx: isize| {
            Array2::from_shape_fn((h, w), |(y, x)| {
                let (y, x) = (y as isize, x as isize);
                (at_clamped(img, y + dy, x + dx) - at_clamped(img, y - dy, x - dx)) / 2.0
            })
        };
        let ix = (grad(a, 0, 1) + grad(&warped, 0, 1)) / 2.0;
        let iy = (grad(a, 1, 0) + grad(&warped, 1, 0)) / 2.0;
        // linearized about the current flow: It + Ix (U - u0) + Iy (V - v0) = 0
        let mut it = &warped - a;
        Zip::from(&mut it)
            .and(&ix)
            .and(&iy)
            .and(&flow.u)
            .and(&flow.v)
            .for_each(|t, &gx, &gy, &u0, &v0| *t -= gx * u0 + gy * v0);
        for _ in 0..p.iterations {
            let (ub, vb) = (neighbour_mean(&flow.u), neighbour_mean(&flow.v));
            for ((y, x), &t) in it.indexed_iter() {
                let (gx, gy) = (ix[[y, x]], iy[[y, x]]);
                let (ub, vb) = (ub[[y, x]], vb[[y, x]]);
                let k = (gx * ub + gy * vb + t) / (alpha2 + gx * gx + gy * gy);
                flow.u[[y, x]] = ub - gx * k;
                flow.v[[y, x]] = vb - gy * k;
            }
        }
    }
}

/// Reference estimator; `frame_b(x + flow(x)) ≈ frame_a(x)`.
pub fn estimate_flow(frame_a: &Array2<f64>, frame_b: &Array2<f64>, params: &ReferenceFlow) -> Result<FlowField> {
    if frame_a.dim() != frame_b.dim() {
        return Err(VadError::shape("flow frame pair", frame_a.shape(), frame_b.shape()));
    }
    let (h, w) = frame_a.dim();
    if h == 0 || w == 0 {
        return Err(VadError::Invalid("flow frames must be non-empty".into()));
    }
    let mut pyramid = vec![(frame_a.clone(), frame_b.clone())];
    while pyramid.len() < params.max_levels.max(1) {
        let (a, b) = pyramid.last().unwrap();
        let (lh, lw) = a.dim();
        if lh.min(lw) / 2 < params.min_size.max(2) {
            break;
        }
        let next = (downsample(a), downsample(b));
        pyramid.push(next);
    }
    let (ch, cw) = pyramid.last().unwrap().0.dim();
    let mut flow = FlowField::zeros(ch, cw);
    for (a, b) in pyramid.iter().rev() {
        let (lh, lw) = a.dim();
        if flow.u.dim() != (lh, lw) {
            let scale = lw as f64 / flow.u.dim().1 as f64;
            flow = FlowField {
                u: upsample(&flow.u, lh, lw, scale),
                v: upsample(&flow.v, lh, lw, lh as f64 / flow.v.dim().0 as f64),
            };
        }
        refine(a, b, &mut flow, params);
    }
    Ok(flow)
}

/// Reads a Middlebury `.flo` file.
pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bad = |msg: &str| VadError::Invalid(format!("{}: {msg}", path.display()));
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| VadError::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| VadError::io(path, e))?;
    if bytes.len() < 12 {
        return Err(bad("truncated .flo header"));
    }
    let word = |i: usize| <[u8; 4]>::try_from(&bytes[4 * i..4 * i + 4]).expect("4 bytes");
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(bad("bad .flo magic"));
    }
    let w = i32::from_le_bytes(word(1));
    let h = i32::from_le_bytes(word(2));
    if w <= 0 || h <= 0 {
        return Err(bad("non-positive .flo dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    if bytes.len() != 12 + 8 * w * h {
        return Err(bad("payload size does not match dimensions"));
    }
    let mut flow = FlowField::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let i = 3 + 2 * (y * w + x);
            flow.u[[y, x]] = f32::from_le_bytes(word(i)) as f64;
            flow.v[[y, x]] = f32::from_le_bytes(word(i + 1)) as f64;
        }
    }
    if flow.u.iter().chain(flow.v.iter()).any(|v| !v.is_finite()) {
        return Err(bad("non-finite flow value"));
    }
    Ok(flow)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let (h, w) = flow.u.dim();
    let mut out = BufWriter::new(File::create(path).map_err(|e| VadError::io(path, e))?);
    let mut buf = Vec::with_capacity(12 + 8 * h * w);
    buf.extend(FLO_MAGIC.to_le_bytes());
    buf.extend((w as i32).to_le_bytes());
    buf.extend((h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            buf.extend((flow.u[[y, x]] as f32).to_le_bytes());
            buf.extend((flow.v[[y, x]] as f32).to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(|e| VadError::io(path, e))
}

pub fn sidecar_names(t: usize, storage: FlowStorage) -> (String, String) {
    let ext = storage.extension();
    (format!("flow_u_{t:06}.{ext}"), format!("flow_v_{t:06}.{ext}"))
}

fn save_gray(path: &Path, q: &Array2<u8>, storage: FlowStorage) -> Result<()> {
    let (h, w) = q.dim();
    let img = GrayImage::from_raw(w as u32, h as u32, q.iter().copied().collect()).expect("sized buffer");
    let image_err = |source| VadError::Image {
        path: path.to_path_buf(),
        source,
    };
    match storage {
        FlowStorage::Lossless => img.save_with_format(path, ImageFormat::Png).map_err(image_err),
        FlowStorage::Jpeg => {
            let file = File::create(path).map_err(|e| VadError::io(path, e))?;
            let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(BufWriter::new(file), JPEG_QUALITY);
            enc.encode_image(&img).map_err(image_err)
        }
    }
}

fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)
        .map_err(|source| VadError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8())
}

/// Reads `n_frames - 1` quantized pairs as an `(N-1) x H x W x 2` array.
pub fn load_flow_sidecars(
    dir: &Path,
    video_id: &str,
    n_frames: usize,
    h: usize,
    w: usize,
    storage: FlowStorage,
) -> Result<Array4<u8>> {
    let pairs = n_frames.saturating_sub(1);
    let mut out = Array4::<u8>::zeros((pairs, h, w, 2));
    for t in 0..pairs {
        let (nu, nv) = sidecar_names(t, storage);
        for (c, name) in [nu, nv].iter().enumerate() {
            let path = dir.join(name);
            if !path.exists() {
                return Err(VadError::MissingFrames {
                    video_id: video_id.to_string(),
                    msg: format!("flow sidecar {name} missing; run the flow subcommand"),
                });
            }
            let img = load_gray(&path)?;
            if (img.height() as usize, img.width() as usize) != (h, w) {
                return Err(VadError::shape(
                    format!("flow sidecar {name} of video {video_id}"),
                    &[h, w],
                    &[img.height() as usize, img.width() as usize],
                ));
            }
            out.slice_mut(s![t, .., .., c])
                .iter_mut()
                .zip(img.as_raw())
                .for_each(|(d, &q)| *d = q);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlowSummary {
    pub videos: usize,
    pub pairs: usize,
}

fn rgb_frame(dir: &Path, video_id: &str, t: usize) -> Result<image::RgbImage> {
    let path = dir.join(frame_file_name(t));
    if !path.exists() {
        return Err(VadError::MissingFrames {
            video_id: video_id.to_string(),
            msg: format!("frame {t} missing"),
        });
    }
    Ok(image::open(&path)
        .map_err(|source| VadError::Image { path, source })?
        .to_rgb8())
}

fn count_frames(dir: &Path) -> Result<usize> {
    let mut n = 0;
    for entry in fs::read_dir(dir).map_err(|e| VadError::io(dir, e))? {
        let name = entry.map_err(|e| VadError::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("frame_") && name.ends_with(".png") {
            n += 1;
        }
    }
    Ok(n)
}

/// Writes quantized flow sidecars for every video of `train/` and `test/`.
pub fn precompute_flow(
    root: &Path,
    backend: &FlowBackend,
    params: &ReferenceFlow,
    storage: FlowStorage,
) -> Result<FlowSummary> {
    let mut summary = FlowSummary::default();
    for split in ["train", "test"] {
        if !root.join(split).is_dir() {
            continue;
        }
        for dir in list_videos(root, split)? {
            let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let n = count_frames(&dir)?;
            if n == 0 {
                return Err(VadError::MissingFrames {
                    video_id: id,
                    msg: "no frames".into(),
                });
            }
            let mut prev = grayscale(&rgb_frame(&dir, &id, 0)?);
            for t in 0..n - 1 {
                let next = grayscale(&rgb_frame(&dir, &id, t + 1)?);
                let flow = match backend {
                    FlowBackend::Reference => estimate_flow(&prev, &next, params)?,
                    FlowBackend::External => {
                        let f = read_flo(&dir.join(format!("flow_{t:06}.flo")))?;
                        if f.u.dim() != prev.dim() {
                            return Err(VadError::shape(format!("external flow {t} of {id}"), prev.shape(), f.u.shape()));
                        }
                        f
                    }
                };
                let q = encode_flow(&flow);
                let (nu, nv) = sidecar_names(t, storage);
                save_gray(&dir.join(nu), &q.u, storage)?;
                save_gray(&dir.join(nv), &q.v, storage)?;
                summary.pairs += 1;
                prev = next;
            }
            summary.videos += 1;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(h: usize, w: usize) -> Array2<f64> {
        use std::f64::consts::TAU;
        Array2::from_shape_fn((h, w), |(y, x)| {
            let (x, y) = (x as f64, y as f64);
            128.0 + 50.0 * (TAU * x / 16.0).sin() * (TAU * y / 13.0).cos() + 30.0 * (TAU * (x / 32.0 + y / 21.0)).sin()
        })
    }

    fn median(a: &Array2<f64>) -> f64 {
        let mut v: Vec<f64> = a.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(40, 48);
        let f = estimate_flow(&a, &a, &ReferenceFlow::default()).unwrap();
        assert!(f.u.iter().chain(f.v.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn two_pixel_shift_is_recovered() {
        let a = texture(64, 64);
        let b = Array2::from_shape_fn((64, 64), |(y, x)| a[[y, (x + 64 - 2) % 64]]);
        let f = estimate_flow(&a, &b, &ReferenceFlow::default()).unwrap();
        let (mu, mv) = (median(&f.u), median(&f.v));
        assert!((mu - 2.0).abs() <= 0.75, "median u {mu}");
        assert!(mv.abs() <= 0.75, "median v {mv}");
    }

    #[test]
    fn mismatched_frames_error() {
        let r = estimate_flow(&Array2::zeros((4, 4)), &Array2::zeros((4, 5)), &ReferenceFlow::default());
        assert!(matches!(r, Err(VadError::Shape { .. })));
    }

    #[test]
    fn codec_examples() {
        assert_eq!(encode_value(-20.0), 0);
        assert_eq!(encode_value(20.0), 255);
        assert_eq!(encode_value(25.0), 255);
        assert_eq!(encode_value(-1e9), 0);
        assert_eq!(encode_value(0.0), 128);
        assert_eq!(dequantize(0), -1.0);
        assert_eq!(dequantize(255), 1.0);
        assert!((dequantize(128) - 1.0 / 255.0).abs() < 1e-15);
        assert!(dequantize(encode_value(0.0)).abs() <= 2.0 / 255.0);
        assert!(decode_value(256.0).is_err());
        assert!(decode_value(-0.5).is_err());
        assert_eq!(decode_value(255.0).unwrap(), 1.0);
    }

    #[test]
    fn flo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = FlowField::zeros(3, 5);
        f.u[[1, 2]] = 1.5;
        f.v[[2, 4]] = -3.25;
        let p = dir.path().join("x.flo");
        write_flo(&p, &f).unwrap();
        assert_eq!(read_flo(&p).unwrap(), f);
    }

    #[test]
    fn dequantized_images_stay_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FlowField {
            u: Array2::from_shape_fn((8, 8), |_| rng.random_range(-40.0..40.0)),
            v: Array2::from_shape_fn((8, 8), |_| rng.random_range(-40.0..40.0)),
        };
        let (u, v) = decode_flow(&encode_flow(&f));
        assert!(u.iter().chain(v.iter()).all(|x| (-1.0..=1.0).contains(x)));
    }

    proptest! {
        #[test]
        fn codec_is_monotone(a in -30.0..30.0f64, b in -30.0..30.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(encode_value(lo) <= encode_value(hi));
        }

        #[test]
        fn round_trip_within_half_step(v in -20.0..=20.0f64) {
            let err = (dequantize_to_flow(encode_value(v)) - v).abs();
            prop_assert!(err <= 40.0 / 255.0 * (0.5 + 1e-9));
        }
    }
}
