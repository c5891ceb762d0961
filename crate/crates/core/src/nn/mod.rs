//! Minimal layer library with hand-written backward passes.
//!
//! Every layer owns its parameters as standard-layout `ndarray` arrays. A
//! gradient for a model is stored in a zeroed clone of that model, so the
//! parameter visitors of both walk the same order.

mod adam;
mod conv;
mod linear;

pub use adam::{Adam, AdamState};
pub use conv::{Conv3d, ConvGeometry, ConvTranspose3d};
pub use linear::Linear;

use ndarray::{Array, Dimension};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Read-only view of one named parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub trait Parameters {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>);
    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);

    fn param_views(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.params_mut(&mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.param_views().iter().map(|p| p.data.len()).sum()
    }

    /// Sum of squared entries over every parameter.
    fn squared_norm(&self) -> f64 {
        self.param_views()
            .iter()
            .flat_map(|p| p.data.iter())
            .map(|v| v * v)
            .sum()
    }

    fn zero_(&mut self) {
        for s in self.param_slices_mut() {
            s.fill(0.0);
        }
    }

    fn scale_(&mut self, alpha: f64) {
        for s in self.param_slices_mut() {
            s.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// `self += alpha * other`; both must have identical structure.
    fn axpy_(&mut self, alpha: f64, other: &Self)
    where
        Self: Sized,
    {
        let src = other.param_views();
        let dst = self.param_slices_mut();
        assert_eq!(src.len(), dst.len(), "parameter structure mismatch");
        for (d, s) in dst.into_iter().zip(src) {
            assert_eq!(d.len(), s.data.len(), "parameter {} size mismatch", s.name);
            for (a, b) in d.iter_mut().zip(s.data) {
                *a += alpha * b;
            }
        }
    }
}

pub(crate) fn push_param<'a, D: Dimension>(
    out: &mut Vec<ParamView<'a>>,
    prefix: &str,
    name: &str,
    arr: &'a Array<f64, D>,
) {
    out.push(ParamView {
        name: if prefix.is_empty() {
            name.to_string()
        } else {
            format!("{prefix}.{name}")
        },
        shape: arr.shape().to_vec(),
        data: arr.as_slice().expect("parameters are kept in standard layout"),
    });
}

pub(crate) fn push_param_mut<'a, D: Dimension>(
    out: &mut Vec<&'a mut [f64]>,
    arr: &'a mut Array<f64, D>,
) {
    out.push(
        arr.as_slice_mut()
            .expect("parameters are kept in standard layout"),
    );
}

/// Fills `arr` with N(0, std^2) samples.
pub(crate) fn fill_normal<D: Dimension, R: Rng + ?Sized>(arr: &mut Array<f64, D>, std: f64, rng: &mut R) {
    let normal = Normal::new(0.0, std).expect("finite std");
    arr.iter_mut().for_each(|v| *v = normal.sample(rng));
}

/// NaN passes through so divergence reaches the loss.
pub fn relu_inplace<D: Dimension>(arr: &mut Array<f64, D>) {
    arr.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v });
}

/// Zeroes `grad` wherever the forward activation was clipped by ReLU.
pub fn relu_backward<D: Dimension>(grad: &mut Array<f64, D>, activation: &Array<f64, D>) {
    ndarray::Zip::from(grad).and(activation).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}
