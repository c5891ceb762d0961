//! One-class deep SVDD objective and distance-to-center scoring.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};

/// Coordinates of the initial center smaller than this in magnitude are
/// pushed out to it, so the bias-free network cannot reach the center by
/// zeroing its weights.
pub const MIN_CENTER_MAGNITUDE: f64 = 0.1;

pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-6;

/// Hypersphere center; write-once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Center {
    pub c: Vec<f64>,
    pub frozen: bool,
}

impl Center {
    /// Averages the sample features, snaps near-zero coordinates to
    /// `±MIN_CENTER_MAGNITUDE` (sign-preserving, `+` for exact zero) and
    /// freezes the result.
    pub fn init(&mut self, features: &[Array1<f64>]) -> Result<()> {
        if self.frozen {
            return Err(VadError::CenterFrozen);
        }
        let first = features.first().ok_or(VadError::EmptySample)?;
        let mut mean = Array1::<f64>::zeros(first.len());
        for f in features {
            if f.len() != mean.len() {
                return Err(VadError::shape("center sample feature", &[mean.len()], &[f.len()]));
            }
            mean += f;
        }
        mean /= features.len() as f64;
        self.c = mean
            .iter()
            .map(|&v| {
                if v.abs() >= MIN_CENTER_MAGNITUDE {
                    v
                } else if v < 0.0 {
                    -MIN_CENTER_MAGNITUDE
                } else {
                    MIN_CENTER_MAGNITUDE
                }
            })
            .collect();
        self.frozen = true;
        Ok(())
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.c[..])
    }

    fn require_frozen(&self) -> Result<()> {
        if self.frozen {
            Ok(())
        } else {
            Err(VadError::CenterMissing)
        }
    }
}

/// Builds a frozen center from head outputs.
pub fn init_center(features: &[Array1<f64>]) -> Result<Center> {
    let mut c = Center::default();
    c.init(features)?;
    Ok(c)
}

/// Squared Euclidean distance between an embedding and the center.
pub fn svdd_score(feature: ArrayView1<f64>, center: &Center) -> Result<f64> {
    center.require_frozen()?;
    if feature.len() != center.c.len() {
        return Err(VadError::shape("svdd feature", &[center.c.len()], &[feature.len()]));
    }
    Ok(feature
        .iter()
        .zip(&center.c)
        .map(|(f, c)| (f - c) * (f - c))
        .sum())
}

#[derive(Debug, Clone)]
pub struct SvddLoss {
    pub value: f64,
    /// Mean squared distance term alone.
    pub distance: f64,
    /// dL/dF for every row of the batch: `2 (f_i - c) / N`.
    pub grad_features: Array2<f64>,
}

/// `(1/N) Σ ‖f_i − c‖² + (λ/2) ‖W‖²_F` where `weight_sq_norm` is ‖W‖²_F.
///
/// The gradient of the decay term with respect to W is `λ W`; callers add it
/// to their parameter gradients (see [`crate::model::AnomalyModel`]).
pub fn svdd_loss(features: ArrayView2<f64>, center: &Center, weight_sq_norm: f64, lambda: f64) -> Result<SvddLoss> {
    center.require_frozen()?;
    if lambda < 0.0 {
        return Err(VadError::NegativeWeightDecay(lambda));
    }
    let (n, z) = features.dim();
    if z != center.c.len() {
        return Err(VadError::shape("svdd features", &[n, center.c.len()], &[n, z]));
    }
    if n == 0 {
        return Err(VadError::EmptySample);
    }
    let diff = &features - &center.view().insert_axis(ndarray::Axis(0));
    let distance = diff.iter().map(|v| v * v).sum::<f64>() / n as f64;
    Ok(SvddLoss {
        value: distance + 0.5 * lambda * weight_sq_norm,
        distance,
        grad_features: diff * (2.0 / n as f64),
    })
}
