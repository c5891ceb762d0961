use ndarray::{Array1, Array2, Array4, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fill_normal, push_param, push_param_mut, ParamView, Parameters};

/// Kernel, stride and zero-padding of a 3D convolution over (T, H, W).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeometry {
    /// Padding `(k - s + 1) / 2` per axis, which makes a stride-`s` conv shrink
    /// an axis divisible by `s` by exactly `s`.
    pub fn new(kernel: [usize; 3], stride: [usize; 3]) -> Self {
        let padding = std::array::from_fn(|i| (kernel[i] + 1).saturating_sub(stride[i]) / 2);
        Self {
            kernel,
            stride,
            padding,
        }
    }

    pub fn volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = input[i] + 2 * self.padding[i];
            if padded < self.kernel[i] || self.stride[i] == 0 {
                return None;
            }
            out[i] = (padded - self.kernel[i]) / self.stride[i] + 1;
        }
        Some(out)
    }

    /// Output size of the transposed convolution with the given output padding.
    pub fn transposed_dims(&self, input: [usize; 3], output_padding: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let full = input[i].checked_sub(1)? * self.stride[i] + self.kernel[i] + output_padding[i];
            out[i] = full.checked_sub(2 * self.padding[i])?;
        }
        Some(out)
    }
}

fn dims3(x: &Array4<f64>) -> [usize; 3] {
    let (t, h, w, _) = x.dim();
    [t, h, w]
}

/// Gathers every receptive field of a conv over `x` into one row.
///
/// Row `r` corresponds to output position `r` in (t, y, x) raster order;
/// column `k * C + c` holds channel `c` at kernel offset `k`. Out-of-range
/// taps stay zero.
fn im2col(x: &Array4<f64>, geom: &ConvGeometry, out: [usize; 3]) -> Array2<f64> {
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let (t, h, w, c) = x.dim();
    let [kt, kh, kw] = geom.kernel;
    let row_len = geom.volume() * c;
    let mut cols = Array2::<f64>::zeros((out[0] * out[1] * out[2], row_len));
    let dst = cols.as_slice_mut().expect("fresh array");
    for ot in 0..out[0] {
        for oy in 0..out[1] {
            for ox in 0..out[2] {
                let row = ((ot * out[1] + oy) * out[2] + ox) * row_len;
                for dt in 0..kt {
                    let Some(it) = tap(ot, dt, geom.stride[0], geom.padding[0], t) else {
                        continue;
                    };
                    for dy in 0..kh {
                        let Some(iy) = tap(oy, dy, geom.stride[1], geom.padding[1], h) else {
                            continue;
                        };
                        for dx in 0..kw {
                            let Some(ix) = tap(ox, dx, geom.stride[2], geom.padding[2], w) else {
                                continue;
                            };
                            let k = (dt * kh + dy) * kw + dx;
                            let src = ((it * h + iy) * w + ix) * c;
                            dst[row + k * c..row + (k + 1) * c].copy_from_slice(&xs[src..src + c]);
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds rows back onto an input-shaped volume.
fn col2im(cols: ArrayView2<f64>, geom: &ConvGeometry, input: [usize; 4], out: [usize; 3]) -> Array4<f64> {
    let [t, h, w, c] = input;
    let [kt, kh, kw] = geom.kernel;
    let row_len = geom.volume() * c;
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut x = Array4::<f64>::zeros((t, h, w, c));
    let xs = x.as_slice_mut().expect("fresh array");
    for ot in 0..out[0] {
        for oy in 0..out[1] {
            for ox in 0..out[2] {
                let row = ((ot * out[1] + oy) * out[2] + ox) * row_len;
                for dt in 0..kt {
                    let Some(it) = tap(ot, dt, geom.stride[0], geom.padding[0], t) else {
                        continue;
                    };
                    for dy in 0..kh {
                        let Some(iy) = tap(oy, dy, geom.stride[1], geom.padding[1], h) else {
                            continue;
                        };
                        for dx in 0..kw {
                            let Some(ix) = tap(ox, dx, geom.stride[2], geom.padding[2], w) else {
                                continue;
                            };
                            let k = (dt * kh + dy) * kw + dx;
                            let dst = ((it * h + iy) * w + ix) * c;
                            for (d, s) in xs[dst..dst + c]
                                .iter_mut()
                                .zip(&src[row + k * c..row + (k + 1) * c])
                            {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

#[inline]
fn tap(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k).checked_sub(pad)?;
    (i < len).then_some(i)
}

fn add_bias(y: &mut Array2<f64>, bias: &Option<Array1<f64>>) {
    if let Some(b) = bias {
        y.rows_mut().into_iter().for_each(|mut r| r += b);
    }
}

fn accumulate_bias(grad: &mut Option<Array1<f64>>, g: ArrayView2<f64>) {
    if let Some(b) = grad {
        *b += &g.sum_axis(Axis(0));
    }
}

fn flat(x: &Array4<f64>) -> ArrayView2<'_, f64> {
    let (t, h, w, c) = x.dim();
    x.view()
        .into_shape_with_order((t * h * w, c))
        .expect("4D activations are kept in standard layout")
}

/// Strided 3D convolution over a channels-last (T, H, W, C) volume.
///
/// The kernel is stored flattened as `(k_t * k_h * k_w * C_in, C_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub geometry: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Conv3d {
    pub fn zeros(in_channels: usize, out_channels: usize, geometry: ConvGeometry, bias: bool) -> Self {
        Self {
            geometry,
            in_channels,
            out_channels,
            weight: Array2::zeros((geometry.volume() * in_channels, out_channels)),
            bias: bias.then(|| Array1::zeros(out_channels)),
        }
    }

    /// He (fan-in) initialization; biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, geometry, bias);
        let fan_in = (geometry.volume() * in_channels) as f64;
        fill_normal(&mut conv.weight, (2.0 / fan_in).sqrt(), rng);
        conv
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        self.geometry.output_dims(input)
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let out = self
            .output_dims(dims3(x))
            .expect("input smaller than kernel; shapes are validated by the planner");
        let cols = im2col(x, &self.geometry, out);
        let mut y = cols.dot(&self.weight);
        add_bias(&mut y, &self.bias);
        y.into_shape_with_order((out[0], out[1], out[2], self.out_channels))
            .expect("row count matches output volume")
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn backward_params(&self, x: &Array4<f64>, grad_out: &Array4<f64>, grads: &mut Self) {
        let cols = im2col(x, &self.geometry, dims3(grad_out));
        let g = flat(grad_out);
        grads.weight += &cols.t().dot(&g);
        accumulate_bias(&mut grads.bias, g);
    }

    /// Accumulates parameter gradients into `grads` and returns dL/dx.
    pub fn backward(&self, x: &Array4<f64>, grad_out: &Array4<f64>, grads: &mut Self) -> Array4<f64> {
        let out = dims3(grad_out);
        let cols = im2col(x, &self.geometry, out);
        let g = flat(grad_out);
        grads.weight += &cols.t().dot(&g);
        accumulate_bias(&mut grads.bias, g);
        let gcols = g.dot(&self.weight.t());
        let (t, h, w, c) = x.dim();
        col2im(gcols.view(), &self.geometry, [t, h, w, c], out)
    }
}

impl Parameters for Conv3d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        push_param(out, prefix, "weight", &self.weight);
        if let Some(b) = &self.bias {
            push_param(out, prefix, "bias", b);
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        push_param_mut(out, &mut self.weight);
        if let Some(b) = &mut self.bias {
            push_param_mut(out, b);
        }
    }
}

/// Transposed 3D convolution: the adjoint of a [`Conv3d`] with the same
/// geometry, mapping a coarse volume back up to a finer one.
///
/// Weight layout is `(k_t * k_h * k_w * C_out, C_in)`, i.e. the layout of the
/// forward conv it mirrors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose3d {
    pub geometry: ConvGeometry,
    pub output_padding: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl ConvTranspose3d {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        output_padding: [usize; 3],
        bias: bool,
    ) -> Self {
        Self {
            geometry,
            output_padding,
            in_channels,
            out_channels,
            weight: Array2::zeros((geometry.volume() * out_channels, in_channels)),
            bias: bias.then(|| Array1::zeros(out_channels)),
        }
    }

    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        output_padding: [usize; 3],
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, geometry, output_padding, bias);
        let taps = geometry.volume() as f64 / geometry.stride.iter().product::<usize>() as f64;
        let fan_in = (taps * in_channels as f64).max(1.0);
        fill_normal(&mut conv.weight, (2.0 / fan_in).sqrt(), rng);
        conv
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        self.geometry.transposed_dims(input, self.output_padding)
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let small = dims3(x);
        let big = self
            .output_dims(small)
            .expect("shapes are validated by the planner");
        let cols = flat(x).dot(&self.weight.t());
        let mut y = col2im(
            cols.view(),
            &self.geometry,
            [big[0], big[1], big[2], self.out_channels],
            small,
        );
        if let Some(b) = &self.bias {
            y.lanes_mut(Axis(3)).into_iter().for_each(|mut l| l += b);
        }
        y
    }

    pub fn backward(&self, x: &Array4<f64>, grad_out: &Array4<f64>, grads: &mut Self) -> Array4<f64> {
        let small = dims3(x);
        let gcols = im2col(grad_out, &self.geometry, small);
        grads.weight += &gcols.t().dot(&flat(x));
        if let Some(b) = &mut grads.bias {
            *b += &flat(grad_out).sum_axis(Axis(0));
        }
        let gx = gcols.dot(&self.weight);
        gx.into_shape_with_order((small[0], small[1], small[2], self.in_channels))
            .expect("row count matches input volume")
    }
}

impl Parameters for ConvTranspose3d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        push_param(out, prefix, "weight", &self.weight);
        if let Some(b) = &self.bias {
            push_param(out, prefix, "bias", b);
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        push_param_mut(out, &mut self.weight);
        if let Some(b) = &mut self.bias {
            push_param_mut(out, b);
        }
    }
}
