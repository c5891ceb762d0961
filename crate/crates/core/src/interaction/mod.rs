//! Object-interaction branch: proposals on each feature frame, RoI-aligned
//! object features, a softmax similarity graph over all proposals of a clip,
//! a two-layer GCN, and the fusion heads that join its output with the
//! encoder bottleneck.

mod fusion;
mod graph;
mod proposals;
mod roi;

pub use fusion::{fuse_oc, fuse_oc_backward, fuse_recon, fuse_recon_backward, outer_expand, ReconFusion};
pub use graph::{
    check_row_stochastic, gcn_backward, gcn_forward, gcn_trace, mean_rows, row_softmax, row_softmax_backward,
    similarity_graph, similarity_logits, Gcn, GcnBackward, GcnTrace, SimilarityGraph, ROW_SUM_TOLERANCE,
};
pub use proposals::{propose, FeatureBox, ProposalContext, ProposalSet, ProviderKind, DEFAULT_PROPOSALS};
pub use roi::{roi_features, RoiFeatures, ROI_GRID};

use ndarray::{Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Linear, ParamView, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionConfig {
    #[serde(default = "default_m")]
    pub proposals_per_frame: usize,
    #[serde(default)]
    pub provider: ProviderKind,
}

fn default_m() -> usize {
    DEFAULT_PROPOSALS
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            proposals_per_frame: DEFAULT_PROPOSALS,
            provider: ProviderKind::Grid,
        }
    }
}

/// Learnable part of the branch: the two embeddings of the similarity
/// logits and the GCN. Fusion heads live with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionBranch {
    pub phi: Linear,
    pub phi_prime: Linear,
    pub gcn: Gcn,
}

/// Everything the backward pass of [`InteractionBranch`] needs.
#[derive(Debug, Clone)]
pub struct BranchTrace {
    pub roi: RoiFeatures,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub graph: Array2<f64>,
    pub gcn: GcnTrace,
}

impl BranchTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.gcn.out
    }
}

impl InteractionBranch {
    pub fn new<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        // small logits at init keep the softmax away from saturation
        let gain = 1.0 / (d as f64).sqrt().sqrt();
        Self {
            phi: Linear::new(d, d, false, gain, rng),
            phi_prime: Linear::new(d, d, false, gain, rng),
            gcn: Gcn::new(d, rng),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            phi: Linear::zeros(d, d, false),
            phi_prime: Linear::zeros(d, d, false),
            gcn: Gcn::zeros(d),
        }
    }

    pub fn forward(&self, h: &Array4<f64>, props: &ProposalSet) -> Result<BranchTrace> {
        let roi = roi_features(h, props)?;
        let p = roi.feats.view();
        let a = self.phi.forward(p);
        let b = self.phi_prime.forward(p);
        let graph = row_softmax(&a.dot(&b.t()));
        let gcn = gcn_trace(&graph, p, &self.gcn)?;
        Ok(BranchTrace { roi, a, b, graph, gcn })
    }

    /// Back-propagates dL/dH₂ to the bottleneck.
    pub fn backward(
        &self,
        props: &ProposalSet,
        trace: &BranchTrace,
        grad_out: &Array2<f64>,
        dims: [usize; 4],
        grads: &mut Self,
    ) -> Array4<f64> {
        let p = trace.roi.feats.view();
        let back = gcn_backward(&trace.graph, p, &self.gcn, &trace.gcn, grad_out, &mut grads.gcn);
        let ds = row_softmax_backward(&trace.graph, &back.grad_g);
        let da = ds.dot(&trace.b);
        let db = ds.t().dot(&trace.a);
        let mut dp = back.grad_p;
        dp += &self.phi.backward(p, da.view(), &mut grads.phi);
        dp += &self.phi_prime.backward(p, db.view(), &mut grads.phi_prime);
        trace.roi.backward(props, &dp, dims)
    }
}

impl Parameters for InteractionBranch {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.phi.params(&format!("{prefix}phi"), out);
        self.phi_prime.params(&format!("{prefix}phi_prime"), out);
        self.gcn.params(prefix, out);
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.phi.params_mut(out);
        self.phi_prime.params_mut(out);
        self.gcn.params_mut(out);
    }
}
