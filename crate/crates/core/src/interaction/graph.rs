use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Result, VadError};
use crate::nn::{Linear, ParamView, Parameters};

/// Row tolerance accepted by [`gcn_forward`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Row-stochastic, strictly positive K x K affinity between proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub g: Array2<f64>,
}

/// Pairwise logits `S_ij = ⟨φ(p_i), φ'(p_j)⟩`.
pub fn similarity_logits(p: ArrayView2<f64>, phi: &Linear, phi_prime: &Linear) -> Array2<f64> {
    let a = phi.forward(p);
    let b = phi_prime.forward(p);
    a.dot(&b.t())
}

/// Softmax over each row, with the row max subtracted first.
pub fn row_softmax(s: &Array2<f64>) -> Array2<f64> {
    let mut g = s.clone();
    for mut row in g.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    g
}

pub fn similarity_graph(p: ArrayView2<f64>, phi: &Linear, phi_prime: &Linear) -> SimilarityGraph {
    SimilarityGraph {
        g: row_softmax(&similarity_logits(p, phi, phi_prime)),
    }
}

/// Backward of [`row_softmax`]: `dS_ij = G_ij (dG_ij − Σ_k dG_ik G_ik)`.
pub fn row_softmax_backward(g: &Array2<f64>, grad_g: &Array2<f64>) -> Array2<f64> {
    let dot = (g * grad_g).sum_axis(Axis(1));
    let mut ds = grad_g - &dot.insert_axis(Axis(1));
    ds *= g;
    ds
}

/// Two propagation layers `H₁ = ReLU(G P W₀)`, `H₂ = G H₁ W₁`, with a
/// linear second layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gcn {
    pub w0: Linear,
    pub w1: Linear,
}

impl Gcn {
    pub fn new<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Self {
            w0: Linear::new(d, d, false, 2f64.sqrt(), rng),
            w1: Linear::new(d, d, false, 1.0, rng),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            w0: Linear::zeros(d, d, false),
            w1: Linear::zeros(d, d, false),
        }
    }
}

impl Parameters for Gcn {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.w0.params(&format!("{prefix}gcn0"), out);
        self.w1.params(&format!("{prefix}gcn1"), out);
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.w0.params_mut(out);
        self.w1.params_mut(out);
    }
}

#[derive(Debug, Clone)]
pub struct GcnTrace {
    /// G P
    pub gp: Array2<f64>,
    /// ReLU(G P W₀)
    pub h1: Array2<f64>,
    /// G H₁
    pub gh1: Array2<f64>,
    pub out: Array2<f64>,
}

pub fn check_row_stochastic(g: &Array2<f64>) -> Result<()> {
    for (row, r) in g.rows().into_iter().enumerate() {
        let sum = r.sum();
        if !sum.is_finite() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(VadError::NotRowStochastic { row, sum });
        }
    }
    Ok(())
}

pub fn gcn_forward(g: &Array2<f64>, p: ArrayView2<f64>, gcn: &Gcn) -> Result<Array2<f64>> {
    Ok(gcn_trace(g, p, gcn)?.out)
}

pub fn gcn_trace(g: &Array2<f64>, p: ArrayView2<f64>, gcn: &Gcn) -> Result<GcnTrace> {
    let k = p.nrows();
    if g.dim() != (k, k) {
        return Err(VadError::shape("similarity graph", &[k, k], g.shape()));
    }
    check_row_stochastic(g)?;
    let gp = g.dot(&p);
    let mut h1 = gcn.w0.forward(gp.view());
    crate::nn::relu_inplace(&mut h1);
    let gh1 = g.dot(&h1);
    let out = gcn.w1.forward(gh1.view());
    Ok(GcnTrace { gp, h1, gh1, out })
}

/// Gradients of the GCN w.r.t. its graph and node features.
pub struct GcnBackward {
    pub grad_g: Array2<f64>,
    pub grad_p: Array2<f64>,
}

pub fn gcn_backward(
    g: &Array2<f64>,
    p: ArrayView2<f64>,
    gcn: &Gcn,
    trace: &GcnTrace,
    grad_out: &Array2<f64>,
    grads: &mut Gcn,
) -> GcnBackward {
    let d_gh1 = gcn.w1.backward(trace.gh1.view(), grad_out.view(), &mut grads.w1);
    let mut grad_g = d_gh1.dot(&trace.h1.t());
    let mut d_h1 = g.t().dot(&d_gh1);
    crate::nn::relu_backward(&mut d_h1, &trace.h1);
    let d_gp = gcn.w0.backward(trace.gp.view(), d_h1.view(), &mut grads.w0);
    grad_g += &d_gp.dot(&p.t());
    let grad_p = g.t().dot(&d_gp);
    GcnBackward { grad_g, grad_p }
}

/// Mean over proposals (rows).
pub fn mean_rows(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("at least one proposal")
}
