use ndarray::{s, Array1, Array2, Array4, ArrayView1, Axis};
use rand::Rng;

use crate::backbone::{global_avg_pool, global_avg_pool_backward};
use crate::error::{Result, VadError};
use crate::nn::{Linear, ParamView, Parameters};

/// One-class fusion: `[avgpool(h_enc), avgpool(h_gcn)] · W` with W: 2d x Z.
pub fn fuse_oc(h_enc: &Array4<f64>, h_gcn: &Array2<f64>, head: &Linear) -> Result<Array1<f64>> {
    Ok(head.forward_vec(oc_concat(h_enc, h_gcn, head)?.view()))
}

fn oc_concat(h_enc: &Array4<f64>, h_gcn: &Array2<f64>, head: &Linear) -> Result<Array1<f64>> {
    let d = h_enc.dim().3;
    if h_gcn.ncols() != d || head.input_dim() != 2 * d {
        return Err(VadError::shape(
            "one-class fusion",
            &[d, 2 * d],
            &[h_gcn.ncols(), head.input_dim()],
        ));
    }
    let mut cat = Array1::zeros(2 * d);
    cat.slice_mut(s![..d]).assign(&global_avg_pool(h_enc));
    cat.slice_mut(s![d..]).assign(&super::graph::mean_rows(h_gcn));
    Ok(cat)
}

/// Returns (dL/dh_enc, dL/dh_gcn) for [`fuse_oc`].
pub fn fuse_oc_backward(
    h_enc: &Array4<f64>,
    h_gcn: &Array2<f64>,
    head: &Linear,
    grad: ArrayView1<f64>,
    grads: &mut Linear,
) -> Result<(Array4<f64>, Array2<f64>)> {
    let cat = oc_concat(h_enc, h_gcn, head)?;
    let dcat = head.backward_vec(cat.view(), grad, grads);
    let (t, hh, ww, d) = h_enc.dim();
    let d_enc = global_avg_pool_backward(dcat.slice(s![..d]), [t, hh, ww, d]);
    let k = h_gcn.nrows() as f64;
    let row = dcat.slice(s![d..]).mapv(|v| v / k);
    let d_gcn = Array2::from_shape_fn(h_gcn.dim(), |(_, c)| row[c]);
    Ok((d_enc, d_gcn))
}

/// Per-channel outer product of two `n x d` spatial factors, repeated over
/// `frames`: `out[t, i, j, c] = f1[i, c] · f2[j, c]`.
pub fn outer_expand(f1: &Array2<f64>, f2: &Array2<f64>, frames: usize) -> Array4<f64> {
    let (h, d) = f1.dim();
    let w = f2.nrows();
    Array4::from_shape_fn((frames, h, w, d), |(_, i, j, c)| f1[[i, c]] * f2[[j, c]])
}

/// Two projections d -> H'·d producing the outer-product factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconFusion {
    pub first: Linear,
    pub second: Linear,
    pub side: usize,
}

impl ReconFusion {
    pub fn new<R: Rng + ?Sized>(d: usize, side: usize, rng: &mut R) -> Self {
        Self {
            first: Linear::new(d, side * d, false, 1.0, rng),
            second: Linear::new(d, side * d, false, 1.0, rng),
            side,
        }
    }

    pub fn zeros(d: usize, side: usize) -> Self {
        Self {
            first: Linear::zeros(d, side * d, false),
            second: Linear::zeros(d, side * d, false),
            side,
        }
    }

    fn factors(&self, f: &Array1<f64>) -> (Array2<f64>, Array2<f64>) {
        let d = f.len();
        let shape = (self.side, d);
        let f1 = self.first.forward_vec(f.view()).into_shape_with_order(shape).expect("side * d");
        let f2 = self.second.forward_vec(f.view()).into_shape_with_order(shape).expect("side * d");
        (f1, f2)
    }

    /// The `T' x H' x W' x d` interaction block before concatenation.
    pub fn interaction_block(&self, h_gcn: &Array2<f64>, frames: usize) -> Array4<f64> {
        let f = super::graph::mean_rows(h_gcn);
        let (f1, f2) = self.factors(&f);
        outer_expand(&f1, &f2, frames)
    }
}

impl Parameters for ReconFusion {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.first.params(&format!("{prefix}fusion.first"), out);
        self.second.params(&format!("{prefix}fusion.second"), out);
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.first.params_mut(out);
        self.second.params_mut(out);
    }
}

fn check_recon_fusion(h_enc: &Array4<f64>, h_gcn: &Array2<f64>, fusion: &ReconFusion) -> Result<()> {
    let (_, hh, ww, d) = h_enc.dim();
    if hh != ww {
        return Err(VadError::NonSquareFusion { h: hh, w: ww });
    }
    if fusion.side != hh || h_gcn.ncols() != d || fusion.first.input_dim() != d {
        return Err(VadError::shape(
            "reconstruction fusion",
            &[hh, d],
            &[fusion.side, h_gcn.ncols()],
        ));
    }
    Ok(())
}

/// Concatenates the bottleneck with the outer-product interaction block
/// along channels: `T' x H' x W' x 2d`.
pub fn fuse_recon(h_enc: &Array4<f64>, h_gcn: &Array2<f64>, fusion: &ReconFusion) -> Result<Array4<f64>> {
    check_recon_fusion(h_enc, h_gcn, fusion)?;
    let (t, hh, ww, d) = h_enc.dim();
    let block = fusion.interaction_block(h_gcn, t);
    let mut out = Array4::zeros((t, hh, ww, 2 * d));
    out.slice_mut(s![.., .., .., ..d]).assign(h_enc);
    out.slice_mut(s![.., .., .., d..]).assign(&block);
    Ok(out)
}

/// Returns (dL/dh_enc, dL/dh_gcn) for [`fuse_recon`].
pub fn fuse_recon_backward(
    h_enc: &Array4<f64>,
    h_gcn: &Array2<f64>,
    fusion: &ReconFusion,
    grad: &Array4<f64>,
    grads: &mut ReconFusion,
) -> Result<(Array4<f64>, Array2<f64>)> {
    check_recon_fusion(h_enc, h_gcn, fusion)?;
    let d = h_enc.dim().3;
    let d_enc = grad.slice(s![.., .., .., ..d]).to_owned();
    let d_plane = grad.slice(s![.., .., .., d..]).sum_axis(Axis(0));
    let f = super::graph::mean_rows(h_gcn);
    let (f1, f2) = fusion.factors(&f);
    let n = fusion.side;
    let mut d_f1 = Array2::<f64>::zeros((n, d));
    let mut d_f2 = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for j in 0..n {
            for c in 0..d {
                let g = d_plane[[i, j, c]];
                d_f1[[i, c]] += g * f2[[j, c]];
                d_f2[[j, c]] += g * f1[[i, c]];
            }
        }
    }
    let flat = |a: Array2<f64>| a.into_shape_with_order(n * d).expect("n * d");
    let df = fusion.first.backward_vec(f.view(), flat(d_f1).view(), &mut grads.first)
        + fusion.second.backward_vec(f.view(), flat(d_f2).view(), &mut grads.second);
    let k = h_gcn.nrows() as f64;
    let d_gcn = Array2::from_shape_fn(h_gcn.dim(), |(_, c)| df[c] / k);
    Ok((d_enc, d_gcn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::concatenate;

    #[test]
    fn constant_halves_with_averaging_weight_pass_through() {
        let d = 3;
        let eye = Array2::<f64>::eye(d) * 0.5;
        let w = concatenate![Axis(0), eye, eye];
        let head = Linear::from_weight(w);
        let h = Array4::from_elem((2, 2, 2, d), 0.4);
        let g = Array2::from_elem((5, d), 0.4);
        let z = fuse_oc(&h, &g, &head).unwrap();
        assert!(z.iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn zero_gcn_output_leaves_encoder_half_only() {
        let d = 2;
        let mut w = Array2::<f64>::zeros((2 * d, 3));
        w.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 - 4.0);
        let head = Linear::from_weight(w.clone());
        let mut h = Array4::<f64>::zeros((1, 2, 2, d));
        h.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
        let z = fuse_oc(&h, &Array2::zeros((4, d)), &head).unwrap();
        let expected = global_avg_pool(&h).dot(&w.slice(s![..d, ..]));
        assert_eq!(z, expected);
    }

    #[test]
    fn outer_product_of_constant_factors_is_constant() {
        let f1 = Array2::from_elem((3, 1), 2.0);
        let f2 = Array2::from_elem((3, 1), -1.5);
        let block = outer_expand(&f1, &f2, 2);
        assert_eq!(block.dim(), (2, 3, 3, 1));
        assert!(block.iter().all(|&v| v == -3.0));
    }

    #[test]
    fn toy_fused_shape_doubles_channels() {
        let fusion = ReconFusion::zeros(64, 2);
        let fused = fuse_recon(&Array4::zeros((2, 2, 2, 64)), &Array2::zeros((50, 64)), &fusion).unwrap();
        assert_eq!(fused.dim(), (2, 2, 2, 128));
    }

    #[test]
    fn non_square_frame_rejected() {
        let fusion = ReconFusion::zeros(4, 2);
        let err = fuse_recon(&Array4::zeros((1, 2, 3, 4)), &Array2::zeros((2, 4)), &fusion).unwrap_err();
        assert!(matches!(err, VadError::NonSquareFusion { h: 2, w: 3 }));
    }
}
