mod common;

use common::checks::{self, random_mat};
use common::{random_clip, rng, tiny_model};
use proptest::prelude::*;

use vadkit::interaction::similarity_graph;
use vadkit::model::Method;
use vadkit::nn::Linear;

const TOL: f64 = 1e-10;

#[test]
fn svdd_objective_matches_loop_oracle() {
    let d = checks::svdd_objective_deviation();
    assert!(d < TOL, "{d:e}");
}

#[test]
fn recon_objective_matches_loop_oracle() {
    let d = checks::recon_objective_deviation();
    assert!(d < TOL, "{d:e}");
}

#[test]
fn similarity_graph_matches_loop_oracle() {
    let d = checks::similarity_graph_deviation();
    assert!(d < TOL, "{d:e}");
}

#[test]
fn gcn_matches_loop_oracle() {
    let d = checks::gcn_deviation();
    assert!(d < TOL, "{d:e}");
}

#[test]
fn relabeling_proposals_permutes_gcn_output_rows() {
    let d = checks::gcn_permutation_deviation();
    assert!(d < 1e-12, "{d:e}");
}

#[test]
fn normalization_matches_loop_oracle() {
    let d = checks::normalization_deviation();
    assert!(d < TOL, "{d:e}");
}

#[test]
fn auc_equals_pairwise_oracle_on_100_instances() {
    assert_eq!(checks::auc_mismatches(), 0);
}

#[test]
fn recon_score_is_the_clip_squared_error() {
    let mut r = rng(18);
    let (model, _) = tiny_model(Method::Recon, false, 3);
    let clip = random_clip(&model, &mut r);
    let xhat = model.reconstruct(&clip).unwrap();
    let want: f64 = clip.data.iter().zip(xhat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let got = model.score(&clip).unwrap();
    assert!((got - want).abs() <= TOL * want);
}

proptest! {
    #[test]
    fn similarity_rows_are_stochastic_and_positive(
        k in 1usize..12,
        d in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let p = random_mat(&mut r, k, d, 3.0);
        let g = similarity_graph(
            p.view(),
            &Linear::from_weight(random_mat(&mut r, d, d, 1.0)),
            &Linear::from_weight(random_mat(&mut r, d, d, 1.0)),
        ).g;
        for row in g.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }
}
