//! Oracle comparisons shared by the integration tests and the acceptance
//! runner. Each returns the worst deviation it saw.

use ndarray::{Array1, Array2, Array4};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use vadkit::evaluate::{auc_roc, normalize_scores};
use vadkit::interaction::{
    fuse_oc, fuse_oc_backward, fuse_recon, fuse_recon_backward, gcn_forward, similarity_graph, FeatureBox, Gcn,
    InteractionBranch, ProposalSet, ReconFusion,
};
use vadkit::model::Method;
use vadkit::nn::{Linear, Parameters};
use vadkit::recon::{recon_loss, Reduction};
use vadkit::svdd::{init_center, svdd_loss};

use super::oracle::{self, to_mat};
use super::{coords, model_gradient_errors, numeric_grad, relative_error, rng, tiny_model};

pub fn random_mat(r: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| r.random_range(-scale..scale))
}

/// `|a − b| / (1 + |b|)`.
fn dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

pub fn svdd_objective_deviation() -> f64 {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(1..6);
        let z = r.random_range(1..8);
        let f = random_mat(&mut r, n, z, 2.0);
        let c0 = Array1::from_shape_fn(z, |_| r.random_range(-1.0..1.0));
        let center = init_center(&[c0]).unwrap();
        let w: Vec<f64> = (0..r.random_range(0..20)).map(|_| r.random_range(-1.0..1.0)).collect();
        let lambda = r.random_range(0.0..0.5);
        let sq: f64 = w.iter().map(|v| v * v).sum();
        let got = svdd_loss(f.view(), &center, sq, lambda).unwrap().value;
        worst = worst.max(dev(got, oracle::svdd_objective(&to_mat(&f), &center.c, &w, lambda)));
    }
    for seed in 0..3 {
        let (model, batch) = tiny_model(Method::Ocsvdd, seed == 2, seed);
        let got = model.loss_and_grads(&batch).unwrap().0;
        let feats: Vec<Vec<f64>> = batch.iter().map(|c| model.embed(c).unwrap().to_vec()).collect();
        let weights: Vec<f64> = model.param_views().iter().flat_map(|p| p.data.iter().copied()).collect();
        let want = oracle::svdd_objective(&feats, &model.center.c, &weights, model.config.weight_decay);
        worst = worst.max(dev(got, want));
    }
    worst
}

pub fn recon_objective_deviation() -> f64 {
    let mut r = rng(12);
    let mut worst: f64 = 0.0;
    let flat = |v: &[Array4<f64>]| v.iter().map(|a| a.iter().copied().collect()).collect::<Vec<Vec<f64>>>();
    for _ in 0..50 {
        let n = r.random_range(1..4);
        let dims = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..5), r.random_range(1..4));
        let xs: Vec<Array4<f64>> = (0..n).map(|_| Array4::from_shape_fn(dims, |_| r.random_range(-1.0..1.0))).collect();
        let hats: Vec<Array4<f64>> = (0..n).map(|_| Array4::from_shape_fn(dims, |_| r.random_range(-1.0..1.0))).collect();
        let xv: Vec<_> = xs.iter().map(|a| a.view()).collect();
        let hv: Vec<_> = hats.iter().map(|a| a.view()).collect();
        let got = recon_loss(&xv, &hv, Reduction::Sum).unwrap().value;
        worst = worst.max(dev(got, oracle::recon_objective(&flat(&xs), &flat(&hats))));
    }
    for (seed, gcn) in [(0, false), (1, true)] {
        let (model, batch) = tiny_model(Method::Recon, gcn, seed);
        let got = model.loss_and_grads(&batch).unwrap().0;
        let xs: Vec<Vec<f64>> = batch.iter().map(|c| c.data.iter().copied().collect()).collect();
        let hats: Vec<Vec<f64>> = batch
            .iter()
            .map(|c| model.reconstruct(c).unwrap().iter().copied().collect())
            .collect();
        worst = worst.max(dev(got, oracle::recon_objective(&xs, &hats)));
    }
    worst
}

pub fn similarity_graph_deviation() -> f64 {
    let mut r = rng(13);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = r.random_range(1..12);
        let d = r.random_range(1..6);
        let e = r.random_range(1..6);
        let p = random_mat(&mut r, k, d, 1.0);
        let w = random_mat(&mut r, d, e, 1.0);
        let w2 = random_mat(&mut r, d, e, 1.0);
        let g = similarity_graph(p.view(), &Linear::from_weight(w.clone()), &Linear::from_weight(w2.clone())).g;
        let want = oracle::similarity_graph(&to_mat(&p), &to_mat(&w), &to_mat(&w2));
        for i in 0..k {
            for j in 0..k {
                worst = worst.max(dev(g[[i, j]], want[i][j]));
            }
        }
    }
    worst
}

pub fn random_gcn(r: &mut ChaCha8Rng, d: usize) -> Gcn {
    Gcn {
        w0: Linear::from_weight(random_mat(r, d, d, 1.0)),
        w1: Linear::from_weight(random_mat(r, d, d, 1.0)),
    }
}

pub fn gcn_deviation() -> f64 {
    let mut r = rng(14);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = r.random_range(1..12);
        let d = r.random_range(1..6);
        let p = random_mat(&mut r, k, d, 1.0);
        let g = similarity_graph(
            p.view(),
            &Linear::from_weight(random_mat(&mut r, d, d, 1.0)),
            &Linear::from_weight(random_mat(&mut r, d, d, 1.0)),
        )
        .g;
        let gcn = random_gcn(&mut r, d);
        let got = gcn_forward(&g, p.view(), &gcn).unwrap();
        let want = oracle::gcn(&to_mat(&g), &to_mat(&p), &to_mat(&gcn.w0.weight), &to_mat(&gcn.w1.weight));
        for i in 0..k {
            for c in 0..d {
                worst = worst.max(dev(got[[i, c]], want[i][c]));
            }
        }
    }
    worst
}

/// Largest row mismatch after relabeling proposals.
pub fn gcn_permutation_deviation() -> f64 {
    let mut r = rng(15);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (k, d) = (r.random_range(2..10), r.random_range(1..5));
        let p = random_mat(&mut r, k, d, 1.0);
        let phi = Linear::from_weight(random_mat(&mut r, d, d, 1.0));
        let phi2 = Linear::from_weight(random_mat(&mut r, d, d, 1.0));
        let gcn = random_gcn(&mut r, d);
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let pp = Array2::from_shape_fn((k, d), |(i, c)| p[[perm[i], c]]);
        let out = gcn_forward(&similarity_graph(p.view(), &phi, &phi2).g, p.view(), &gcn).unwrap();
        let out_p = gcn_forward(&similarity_graph(pp.view(), &phi, &phi2).g, pp.view(), &gcn).unwrap();
        for i in 0..k {
            for c in 0..d {
                worst = worst.max((out_p[[i, c]] - out[[perm[i], c]]).abs());
            }
        }
    }
    worst
}

pub fn normalization_deviation() -> f64 {
    let mut r = rng(16);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(1..40);
        let raw: Vec<f64> = if r.random_bool(0.1) {
            vec![r.random_range(-5.0..5.0); n]
        } else {
            (0..n).map(|_| r.random_range(-5.0..5.0)).collect()
        };
        for (a, b) in normalize_scores(&raw).iter().zip(oracle::normalize(&raw)) {
            worst = worst.max(dev(*a, b));
        }
    }
    worst
}

/// Number of instances (out of 100) where the AUC differs from the
/// pairwise count in any bit.
pub fn auc_mismatches() -> usize {
    let mut r = rng(17);
    let mut done = 0;
    let mut bad = 0;
    while done < 100 {
        let n = r.random_range(2..=50);
        // coarse scores so ties are common
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..8u8)) / 7.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.4))).collect();
        if !labels.contains(&0) || !labels.contains(&1) {
            continue;
        }
        if auc_roc(&scores, &labels).unwrap().to_bits() != oracle::auc(&scores, &labels).to_bits() {
            bad += 1;
        }
        done += 1;
    }
    bad
}

pub fn svdd_loss_gradient_error() -> f64 {
    let mut r = rng(1);
    let f = Array2::from_shape_fn((5, 4), |_| r.random_range(-2.0..2.0));
    let center = init_center(&[Array1::from(vec![0.3, -0.5, 0.05, 1.0])]).unwrap();
    let l = svdd_loss(f.view(), &center, 0.0, 0.0).unwrap();
    let mut x: Vec<f64> = f.iter().copied().collect();
    let all: Vec<usize> = (0..x.len()).collect();
    let numeric = numeric_grad(&mut x, &all, 1e-6, |v| {
        let a = Array2::from_shape_vec((5, 4), v.to_vec()).unwrap();
        svdd_loss(a.view(), &center, 0.0, 0.0).unwrap().value
    });
    let analytic: Vec<f64> = l.grad_features.iter().copied().collect();
    relative_error(&analytic, &numeric)
}

pub fn recon_loss_gradient_error() -> f64 {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for reduction in [Reduction::Sum, Reduction::Mean] {
        let xs: Vec<Array4<f64>> = (0..3)
            .map(|_| Array4::from_shape_fn((2, 3, 3, 2), |_| r.random_range(-1.0..1.0)))
            .collect();
        let hats: Vec<Array4<f64>> = (0..3)
            .map(|_| Array4::from_shape_fn((2, 3, 3, 2), |_| r.random_range(-1.0..1.0)))
            .collect();
        let xv: Vec<_> = xs.iter().map(|a| a.view()).collect();
        let hv: Vec<_> = hats.iter().map(|a| a.view()).collect();
        let l = recon_loss(&xv, &hv, reduction).unwrap();
        for k in 0..3 {
            let mut flat: Vec<f64> = hats[k].iter().copied().collect();
            let all: Vec<usize> = (0..flat.len()).collect();
            let numeric = numeric_grad(&mut flat, &all, 1e-6, |v| {
                let mut hs = hats.clone();
                hs[k] = Array4::from_shape_vec((2, 3, 3, 2), v.to_vec()).unwrap();
                let hv: Vec<_> = hs.iter().map(|a| a.view()).collect();
                recon_loss(&xv, &hv, reduction).unwrap().value
            });
            let analytic: Vec<f64> = l.grad_recon[k].iter().copied().collect();
            worst = worst.max(relative_error(&analytic, &numeric));
        }
    }
    worst
}

/// K = 4 proposals (two per feature frame) over a 2x2x2x3 bottleneck.
fn chain_fixture(seed: u64) -> (Array4<f64>, ProposalSet, InteractionBranch) {
    let mut r = rng(seed);
    let h = Array4::from_shape_fn((2, 2, 2, 3), |_| r.random_range(-1.0..1.0));
    let mut boxes = Vec::new();
    for frame in 0..2 {
        boxes.push(FeatureBox::full(frame, 2, 2));
        boxes.push(FeatureBox {
            frame,
            x0: 0.2,
            y0: 0.7,
            x1: 1.6,
            y1: 1.9,
        });
    }
    let props = ProposalSet {
        boxes,
        per_frame: 2,
        frames: 2,
        height: 2,
        width: 2,
    };
    let mut branch = InteractionBranch::new(3, &mut r);
    // larger embeddings so the softmax is far from uniform
    branch.phi.weight.mapv_inplace(|v| 3.0 * v);
    branch.phi_prime.weight.mapv_inplace(|v| 3.0 * v);
    (h, props, branch)
}

/// Relative errors of dL/dh and of every branch parameter.
fn chain_errors(
    h: &Array4<f64>,
    branch: &InteractionBranch,
    forward: impl Fn(&Array4<f64>, &InteractionBranch) -> f64,
    analytic: impl Fn(&Array4<f64>, &InteractionBranch, &mut InteractionBranch) -> Array4<f64>,
) -> Vec<(String, f64)> {
    let mut gb = branch.clone();
    gb.zero_();
    let dh = analytic(h, branch, &mut gb);
    let mut out = Vec::new();

    let mut hx: Vec<f64> = h.iter().copied().collect();
    let all: Vec<usize> = (0..hx.len()).collect();
    let numeric = numeric_grad(&mut hx, &all, 1e-6, |v| {
        forward(&Array4::from_shape_vec(h.dim(), v.to_vec()).unwrap(), branch)
    });
    let a: Vec<f64> = dh.iter().copied().collect();
    out.push(("bottleneck".to_string(), relative_error(&a, &numeric)));

    let names: Vec<String> = branch.param_views().into_iter().map(|p| p.name).collect();
    let analytic_p: Vec<Vec<f64>> = gb.param_views().into_iter().map(|p| p.data.to_vec()).collect();
    for (t, name) in names.into_iter().enumerate() {
        let mut probe = branch.clone();
        let cs = coords(analytic_p[t].len(), usize::MAX);
        let mut flat = probe.param_slices_mut()[t].to_vec();
        let numeric = numeric_grad(&mut flat, &cs, 1e-6, |v| {
            probe.param_slices_mut()[t].copy_from_slice(v);
            forward(h, &probe)
        });
        out.push((name, relative_error(&analytic_p[t], &numeric)));
    }
    out
}

/// similarity -> softmax -> GCN -> one-class fusion, probed by a random
/// linear functional of the embedding.
pub fn oc_chain_gradient_errors() -> Vec<(String, f64)> {
    let (h, props, branch) = chain_fixture(3);
    let mut r = rng(30);
    let head = Linear::new(6, 4, false, 1.0, &mut r);
    let probe = Array1::from_shape_fn(4, |_| r.random_range(-1.0..1.0));
    let forward = |h: &Array4<f64>, b: &InteractionBranch| {
        let tr = b.forward(h, &props).unwrap();
        fuse_oc(h, tr.output(), &head).unwrap().dot(&probe)
    };
    chain_errors(&h, &branch, forward, |h, b, gb| {
        let tr = b.forward(h, &props).unwrap();
        let mut ghead = head.clone();
        ghead.zero_();
        let (mut dh, dg) = fuse_oc_backward(h, tr.output(), &head, probe.view(), &mut ghead).unwrap();
        dh += &b.backward(&props, &tr, &dg, [2, 2, 2, 3], gb);
        dh
    })
}

/// Same chain ending in the outer-product reconstruction fusion.
pub fn recon_chain_gradient_errors() -> Vec<(String, f64)> {
    let (h, props, branch) = chain_fixture(4);
    let mut r = rng(40);
    let fusion = ReconFusion::new(3, 2, &mut r);
    let probe = Array4::from_shape_fn((2, 2, 2, 6), |_| r.random_range(-1.0..1.0));
    let forward = |h: &Array4<f64>, b: &InteractionBranch| {
        let tr = b.forward(h, &props).unwrap();
        (fuse_recon(h, tr.output(), &fusion).unwrap() * &probe).sum()
    };
    chain_errors(&h, &branch, forward, |h, b, gb| {
        let tr = b.forward(h, &props).unwrap();
        let mut gf = fusion.clone();
        gf.zero_();
        let (mut dh, dg) = fuse_recon_backward(h, tr.output(), &fusion, &probe, &mut gf).unwrap();
        dh += &b.backward(&props, &tr, &dg, [2, 2, 2, 3], gb);
        dh
    })
}

/// Full tiny model (encoder, head or decoder, optional branch and fusion).
pub fn tiny_model_gradient_errors(method: Method, gcn: bool, seed: u64) -> Vec<(String, f64)> {
    let (model, batch) = tiny_model(method, gcn, seed);
    model_gradient_errors(&model, &batch, 24)
}
