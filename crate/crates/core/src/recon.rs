//! Reconstruction objective and reconstruction-error scoring.

use ndarray::{Array4, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};

/// How per-clip squared errors are reduced inside a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Sum of squared element differences (the L2 objective as written).
    #[default]
    Sum,
    /// Sum divided by the number of clip elements.
    Mean,
}

#[derive(Debug, Clone)]
pub struct ReconLoss {
    pub value: f64,
    /// dL/dx̂ for each clip of the batch.
    pub grad_recon: Vec<Array4<f64>>,
}

fn check_pair(x: &ArrayView4<f64>, xhat: &ArrayView4<f64>) -> Result<()> {
    if x.shape() != xhat.shape() {
        return Err(VadError::shape("reconstruction", x.shape(), xhat.shape()));
    }
    Ok(())
}

/// `‖x − x̂‖²` over every element of one clip.
pub fn recon_score(x: ArrayView4<f64>, xhat: ArrayView4<f64>) -> Result<f64> {
    check_pair(&x, &xhat)?;
    Ok(ndarray::Zip::from(&x)
        .and(&xhat)
        .fold(0.0, |acc, a, b| acc + (a - b) * (a - b)))
}

/// `(1/N) Σ_i ‖x_i − x̂_i‖²`, with dL/dx̂_i = −2 (x_i − x̂_i) / N.
pub fn recon_loss(x: &[ArrayView4<f64>], xhat: &[ArrayView4<f64>], reduction: Reduction) -> Result<ReconLoss> {
    if x.is_empty() {
        return Err(VadError::EmptySample);
    }
    if x.len() != xhat.len() {
        return Err(VadError::shape("reconstruction batch", &[x.len()], &[xhat.len()]));
    }
    let n = x.len() as f64;
    let mut value = 0.0;
    let mut grad_recon = Vec::with_capacity(x.len());
    for (a, b) in x.iter().zip(xhat) {
        check_pair(a, b)?;
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / a.len() as f64,
        };
        value += scale * recon_score(a.view(), b.view())?;
        grad_recon.push((b - a) * (2.0 * scale / n));
    }
    Ok(ReconLoss {
        value: value / n,
        grad_recon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use proptest::prelude::*;

    fn clip(v: &[f64]) -> Array4<f64> {
        Array4::from_shape_vec((1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_reconstruction_is_zero() {
        let x = clip(&[0.3, -0.2]);
        let l = recon_loss(&[x.view()], &[x.view()], Reduction::Sum).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(recon_score(x.view(), x.view()).unwrap(), 0.0);
    }

    #[test]
    fn single_clip_sum_of_squares() {
        let (x, y) = (clip(&[1.0, 2.0]), clip(&[0.0, 0.0]));
        assert_eq!(recon_loss(&[x.view()], &[y.view()], Reduction::Sum).unwrap().value, 5.0);
    }

    #[test]
    fn batch_mean_of_clip_errors() {
        let (a, ah) = (clip(&[1.0, 1.0]), clip(&[0.0, 0.0])); // 2
        let (b, bh) = (clip(&[2.0, 0.0]), clip(&[0.0, 0.0])); // 4
        let l = recon_loss(&[a.view(), b.view()], &[ah.view(), bh.view()], Reduction::Sum).unwrap();
        assert_eq!(l.value, 3.0);
    }

    #[test]
    fn one_element_error_of_half() {
        let (x, y) = (clip(&[0.5, 0.0, 0.0]), clip(&[0.0, 0.0, 0.0]));
        assert_eq!(recon_score(x.view(), y.view()).unwrap(), 0.25);
    }

    #[test]
    fn shape_mismatch_errors() {
        let (x, y) = (clip(&[0.5, 0.0]), clip(&[0.0]));
        assert!(recon_score(x.view(), y.view()).is_err());
        assert!(recon_loss(&[x.view()], &[y.view()], Reduction::Sum).is_err());
    }

    #[test]
    fn mean_reduction_divides_by_clip_size() {
        let (x, y) = (clip(&[1.0, 2.0]), clip(&[0.0, 0.0]));
        assert_eq!(recon_loss(&[x.view()], &[y.view()], Reduction::Mean).unwrap().value, 2.5);
    }

    proptest! {
        #[test]
        fn score_symmetric_and_batch_of_one_matches(a in prop::collection::vec(-1.0..1.0f64, 6), b in prop::collection::vec(-1.0..1.0f64, 6)) {
            let (x, y) = (clip(&a), clip(&b));
            let s = recon_score(x.view(), y.view()).unwrap();
            prop_assert_eq!(s, recon_score(y.view(), x.view()).unwrap());
            let l = recon_loss(&[x.view()], &[y.view()], Reduction::Sum).unwrap();
            prop_assert_eq!(l.value, s);
        }

        #[test]
        fn gradient_is_closed_form(a in prop::collection::vec(-1.0..1.0f64, 4), b in prop::collection::vec(-1.0..1.0f64, 4), c in prop::collection::vec(-1.0..1.0f64, 4)) {
            let (x0, x1, y) = (clip(&a), clip(&b), clip(&c));
            let l = recon_loss(&[x0.view(), x1.view()], &[y.view(), y.view()], Reduction::Sum).unwrap();
            for i in 0..4 {
                prop_assert_eq!(l.grad_recon[0][[0, 0, 0, i]], (c[i] - a[i]) * (2.0 / 2.0));
                prop_assert_eq!(l.grad_recon[1][[0, 0, 0, i]], (c[i] - b[i]) * (2.0 / 2.0));
            }
        }
    }
}
