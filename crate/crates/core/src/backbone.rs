//! 3D convolutional encoder, mirrored transposed-conv decoder, and global
//! average pooling for the one-class head.
//!
//! Shapes are resolved once by [`BackboneConfig::plan`], which also decides
//! the decoder's output padding so that decode(encode(x)) has exactly the
//! shape of `x`. The full-scale presets are only ever planned, never run.

use ndarray::{Array1, Array4, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};
use crate::nn::{relu_backward, relu_inplace, Conv3d, ConvGeometry, ConvTranspose3d, ParamView, Parameters};

/// Default embedding size of the one-class head.
pub const DEFAULT_Z: usize = 128;

/// T x H x W x C of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ClipShape {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
}

impl StageConfig {
    pub fn new(channels: usize, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        Self {
            channels,
            kernel,
            stride,
        }
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.kernel, self.stride)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input: ClipShape,
    pub stages: Vec<StageConfig>,
    /// Output size of the one-class head.
    #[serde(default = "default_z")]
    pub z: usize,
    /// Bias terms in conv layers. Must stay off for the one-class objective.
    #[serde(default)]
    pub bias: bool,
}

fn default_z() -> usize {
    DEFAULT_Z
}

/// Resolved per-layer shapes for a [`BackboneConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapePlan {
    /// `encoder[0]` is the input; `encoder[i + 1]` is the output of stage `i`.
    pub encoder: Vec<[usize; 4]>,
    /// Output padding of each decoder layer, in decoder order.
    pub output_padding: Vec<[usize; 3]>,
}

impl ShapePlan {
    pub fn bottleneck(&self) -> [usize; 4] {
        *self.encoder.last().expect("plan has at least the input")
    }
}

impl BackboneConfig {
    /// 32x224x224x3 -> 4x7x7x2048, the I3D input/output contract.
    pub fn full_scale() -> Self {
        Self {
            input: ClipShape::new(32, 224, 224, 3),
            stages: vec![
                StageConfig::new(64, [3, 3, 3], [2, 2, 2]),
                StageConfig::new(256, [3, 3, 3], [2, 2, 2]),
                StageConfig::new(512, [3, 3, 3], [2, 2, 2]),
                StageConfig::new(1024, [1, 3, 3], [1, 2, 2]),
                StageConfig::new(2048, [1, 3, 3], [1, 2, 2]),
            ],
            z: DEFAULT_Z,
            bias: false,
        }
    }

    /// Same input with the bottleneck doubled in T', H' and W': 8x14x14x2048.
    pub fn capacity() -> Self {
        Self {
            input: ClipShape::new(32, 224, 224, 3),
            stages: vec![
                StageConfig::new(64, [3, 3, 3], [2, 2, 2]),
                StageConfig::new(256, [3, 3, 3], [2, 2, 2]),
                StageConfig::new(512, [1, 3, 3], [1, 2, 2]),
                StageConfig::new(2048, [1, 3, 3], [1, 2, 2]),
            ],
            z: DEFAULT_Z,
            bias: false,
        }
    }

    /// Laptop-trainable 16x64x64x3 -> 2x2x2x64.
    pub fn toy() -> Self {
        Self {
            input: ClipShape::new(16, 64, 64, 3),
            stages: vec![
                StageConfig::new(8, [3, 3, 3], [2, 2, 2]),
                StageConfig::new(16, [3, 3, 3], [2, 2, 2]),
                StageConfig::new(32, [3, 3, 3], [2, 2, 2]),
                StageConfig::new(64, [1, 4, 4], [1, 4, 4]),
            ],
            z: DEFAULT_Z,
            bias: false,
        }
    }

    /// Smallest useful network (4x8x8x1, two stages) for gradient checks.
    pub fn tiny() -> Self {
        Self {
            input: ClipShape::new(4, 8, 8, 1),
            stages: vec![
                StageConfig::new(2, [3, 3, 3], [2, 2, 2]),
                StageConfig::new(3, [1, 2, 2], [1, 2, 2]),
            ],
            z: 4,
            bias: false,
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.input.channels = channels;
        self
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.stages.last().map_or(self.input.channels, |s| s.channels)
    }

    pub fn plan(&self) -> Result<ShapePlan> {
        if self.stages.is_empty() {
            return Err(VadError::Invalid("backbone needs at least one stage".into()));
        }
        let mut encoder = vec![self.input.dims()];
        for (i, stage) in self.stages.iter().enumerate() {
            let [t, h, w, _] = *encoder.last().unwrap();
            let geom = stage.geometry();
            let out = geom
                .output_dims([t, h, w])
                .ok_or_else(|| VadError::Invalid(format!("stage {i}: kernel larger than input {t}x{h}x{w}")))?;
            for axis in 0..3 {
                let input = [t, h, w][axis];
                let s = stage.stride[axis];
                if s == 0 || input % s != 0 || out[axis] != input / s {
                    return Err(VadError::Invalid(format!(
                        "stage {i}: axis {axis} of size {input} does not divide evenly by stride {s}"
                    )));
                }
            }
            encoder.push([out[0], out[1], out[2], stage.channels]);
        }
        let mut output_padding = Vec::with_capacity(self.stages.len());
        for i in (0..self.stages.len()).rev() {
            let geom = self.stages[i].geometry();
            let [bt, bh, bw, _] = encoder[i];
            let [st, sh, sw, _] = encoder[i + 1];
            let base = geom
                .transposed_dims([st, sh, sw], [0, 0, 0])
                .ok_or_else(|| VadError::Invalid(format!("stage {i}: cannot mirror")))?;
            let mut op = [0; 3];
            for axis in 0..3 {
                let target = [bt, bh, bw][axis];
                if target < base[axis] || target - base[axis] >= geom.stride[axis].max(1) {
                    return Err(VadError::Invalid(format!(
                        "stage {i}: transposed conv cannot restore axis {axis} to {target}"
                    )));
                }
                op[axis] = target - base[axis];
            }
            output_padding.push(op);
        }
        Ok(ShapePlan {
            encoder,
            output_padding,
        })
    }

    pub fn bottleneck_shape(&self) -> Result<[usize; 4]> {
        Ok(self.plan()?.bottleneck())
    }
}

fn check_dims(what: &str, expected: [usize; 4], x: &Array4<f64>) -> Result<()> {
    if x.shape() != expected {
        return Err(VadError::shape(what, &expected, x.shape()));
    }
    Ok(())
}

/// Stack of strided Conv3d + ReLU stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub input: [usize; 4],
    pub stages: Vec<Conv3d>,
}

/// Activations kept for the backward pass; `acts[0]` is the input and the
/// last entry is the bottleneck.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub acts: Vec<Array4<f64>>,
}

impl EncoderTrace {
    pub fn output(&self) -> &Array4<f64> {
        self.acts.last().expect("trace holds the input")
    }
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(config: &BackboneConfig, rng: &mut R) -> Result<Self> {
        config.plan()?;
        let mut prev = config.input.channels;
        let stages = config
            .stages
            .iter()
            .map(|s| {
                let conv = Conv3d::new(prev, s.channels, s.geometry(), config.bias, rng);
                prev = s.channels;
                conv
            })
            .collect();
        Ok(Self {
            input: config.input.dims(),
            stages,
        })
    }

    pub fn zeros(config: &BackboneConfig) -> Result<Self> {
        config.plan()?;
        let mut prev = config.input.channels;
        let stages = config
            .stages
            .iter()
            .map(|s| {
                let conv = Conv3d::zeros(prev, s.channels, s.geometry(), config.bias);
                prev = s.channels;
                conv
            })
            .collect();
        Ok(Self {
            input: config.input.dims(),
            stages,
        })
    }

    pub fn encode(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        Ok(self.forward(x)?.acts.pop().expect("non-empty"))
    }

    pub fn forward(&self, x: &Array4<f64>) -> Result<EncoderTrace> {
        check_dims("encoder input", self.input, x)?;
        let mut acts = Vec::with_capacity(self.stages.len() + 1);
        acts.push(x.clone());
        for conv in &self.stages {
            let mut y = conv.forward(acts.last().unwrap());
            relu_inplace(&mut y);
            acts.push(y);
        }
        Ok(EncoderTrace { acts })
    }

    /// Accumulates into `grads`. The input gradient is not needed by any
    /// caller, so the first stage skips it.
    pub fn backward(&self, trace: &EncoderTrace, grad_h: Array4<f64>, grads: &mut Self) {
        let mut g = grad_h;
        for i in (0..self.stages.len()).rev() {
            relu_backward(&mut g, &trace.acts[i + 1]);
            if i == 0 {
                self.stages[0].backward_params(&trace.acts[0], &g, &mut grads.stages[0]);
            } else {
                g = self.stages[i].backward(&trace.acts[i], &g, &mut grads.stages[i]);
            }
        }
    }
}

impl Parameters for Encoder {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.params(&format!("{prefix}encoder.{i}"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for s in &mut self.stages {
            s.params_mut(out);
        }
    }
}

/// Mirror of the encoder built from transposed convolutions; ReLU between
/// layers and tanh on the output so reconstructions live in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub input: [usize; 4],
    pub layers: Vec<ConvTranspose3d>,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    pub acts: Vec<Array4<f64>>,
}

impl DecoderTrace {
    pub fn output(&self) -> &Array4<f64> {
        self.acts.last().expect("trace holds the input")
    }
}

impl Decoder {
    /// `in_channels` is `d` for a plain autoencoder and `2d` when the
    /// interaction branch is concatenated onto the bottleneck.
    pub fn new<R: Rng + ?Sized>(config: &BackboneConfig, in_channels: usize, rng: &mut R) -> Result<Self> {
        Self::build(config, in_channels, |ci, co, g, op, bias| {
            ConvTranspose3d::new(ci, co, g, op, bias, rng)
        })
    }

    pub fn zeros(config: &BackboneConfig, in_channels: usize) -> Result<Self> {
        Self::build(config, in_channels, ConvTranspose3d::zeros)
    }

    fn build(
        config: &BackboneConfig,
        in_channels: usize,
        mut make: impl FnMut(usize, usize, ConvGeometry, [usize; 3], bool) -> ConvTranspose3d,
    ) -> Result<Self> {
        let plan = config.plan()?;
        let n = config.stages.len();
        let mut layers = Vec::with_capacity(n);
        let mut prev = in_channels;
        for (j, op) in plan.output_padding.iter().enumerate() {
            let stage = n - 1 - j;
            let out_channels = plan.encoder[stage][3];
            layers.push(make(
                prev,
                out_channels,
                config.stages[stage].geometry(),
                *op,
                config.bias,
            ));
            prev = out_channels;
        }
        let [t, h, w, _] = plan.bottleneck();
        Ok(Self {
            input: [t, h, w, in_channels],
            layers,
        })
    }

    pub fn decode(&self, h: &Array4<f64>) -> Result<Array4<f64>> {
        Ok(self.forward(h)?.acts.pop().expect("non-empty"))
    }

    pub fn forward(&self, h: &Array4<f64>) -> Result<DecoderTrace> {
        check_dims("decoder input", self.input, h)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(h.clone());
        let last = self.layers.len() - 1;
        for (j, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts.last().unwrap());
            if j == last {
                y.mapv_inplace(f64::tanh);
            } else {
                relu_inplace(&mut y);
            }
            acts.push(y);
        }
        Ok(DecoderTrace { acts })
    }

    /// Returns dL/dh and accumulates parameter gradients into `grads`.
    pub fn backward(&self, trace: &DecoderTrace, grad_out: Array4<f64>, grads: &mut Self) -> Array4<f64> {
        let mut g = grad_out;
        let last = self.layers.len() - 1;
        for j in (0..self.layers.len()).rev() {
            let y = &trace.acts[j + 1];
            if j == last {
                ndarray::Zip::from(&mut g).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
            } else {
                relu_backward(&mut g, y);
            }
            g = self.layers[j].backward(&trace.acts[j], &g, &mut grads.layers[j]);
        }
        g
    }
}

impl Parameters for Decoder {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&format!("{prefix}decoder.{i}"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for l in &mut self.layers {
            l.params_mut(out);
        }
    }
}

/// Mean over T' x H' x W', one value per channel.
pub fn global_avg_pool(h: &Array4<f64>) -> Array1<f64> {
    let (t, y, x, d) = h.dim();
    let n = (t * y * x) as f64;
    h.view()
        .into_shape_with_order((t * y * x, d))
        .expect("standard layout")
        .sum_axis(ndarray::Axis(0))
        / n
}

pub fn global_avg_pool_backward(grad: ArrayView1<f64>, dims: [usize; 4]) -> Array4<f64> {
    let n = (dims[0] * dims[1] * dims[2]) as f64;
    let row = grad.mapv(|g| g / n);
    let mut out = Array4::zeros(dims);
    out.lanes_mut(ndarray::Axis(3))
        .into_iter()
        .for_each(|mut l| l.assign(&row));
    out
}
