#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vadkit::backbone::BackboneConfig;
use vadkit::dataset::Clip;
use vadkit::interaction::{InteractionConfig, ProviderKind};
use vadkit::model::{AnomalyModel, Method, ModelConfig};
use vadkit::nn::Parameters;
use vadkit::recon::Reduction;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 4x8x8x3 clips, 2x2x2x3 bottleneck, two proposals per feature frame.
pub fn tiny_config(method: Method, gcn: bool) -> ModelConfig {
    ModelConfig {
        method,
        backbone: BackboneConfig::tiny().with_channels(3),
        interaction: gcn.then_some(InteractionConfig {
            proposals_per_frame: 2,
            provider: ProviderKind::Grid,
        }),
        reduction: Reduction::Sum,
        weight_decay: 1e-2,
    }
}

pub fn random_clip(model: &AnomalyModel, rng: &mut ChaCha8Rng) -> Clip {
    let c = model.clip_config();
    let data = Array4::from_shape_fn((c.frames, c.height, c.width, c.channels()), |_| rng.random_range(-1.0..1.0));
    Clip {
        data,
        video_id: "random".into(),
        center_frame: c.frames / 2,
        start: 0,
        boxes: None,
    }
}

pub fn tiny_model(method: Method, gcn: bool, seed: u64) -> (AnomalyModel, Vec<Clip>) {
    let mut r = rng(seed);
    let mut model = AnomalyModel::new(tiny_config(method, gcn), &mut r).unwrap();
    let batch: Vec<Clip> = (0..3).map(|_| random_clip(&model, &mut r)).collect();
    if method == Method::Ocsvdd {
        let sample: Vec<Clip> = (0..4).map(|_| random_clip(&model, &mut r)).collect();
        model.init_center(&sample).unwrap();
    }
    (model, batch)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x` on the given coordinates.
pub fn numeric_grad(x: &mut [f64], coords: &[usize], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(x);
            x[i] = orig - eps;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Up to `max` evenly spread coordinates of a tensor of `len` entries.
pub fn coords(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * len / max).collect()
    }
}

/// Per-tensor relative error between `loss_and_grads` and central
/// differences of the loss, over a sample of coordinates.
pub fn model_gradient_errors(model: &AnomalyModel, batch: &[Clip], per_tensor: usize) -> Vec<(String, f64)> {
    let (_, grads) = model.loss_and_grads(batch).unwrap();
    let names: Vec<String> = model.param_views().into_iter().map(|p| p.name).collect();
    let analytic: Vec<Vec<f64>> = grads.param_views().into_iter().map(|p| p.data.to_vec()).collect();
    let mut out = Vec::new();
    for (t, name) in names.into_iter().enumerate() {
        let cs = coords(analytic[t].len(), per_tensor);
        let mut probe = model.clone();
        let numeric: Vec<f64> = cs
            .iter()
            .map(|&i| {
                let eps = 1e-6;
                let orig = probe.param_slices_mut()[t][i];
                probe.param_slices_mut()[t][i] = orig + eps;
                let up = probe.loss_and_grads(batch).unwrap().0;
                probe.param_slices_mut()[t][i] = orig - eps;
                let down = probe.loss_and_grads(batch).unwrap().0;
                probe.param_slices_mut()[t][i] = orig;
                (up - down) / (2.0 * eps)
            })
            .collect();
        let a: Vec<f64> = cs.iter().map(|&i| analytic[t][i]).collect();
        out.push((name, relative_error(&a, &numeric)));
    }
    out
}

/// 8x8 sprite videos sized for the tiny backbone (T = 4).
pub fn tiny_spec(seed: u64) -> vadkit::dataset::SynthSpec {
    vadkit::dataset::SynthSpec {
        n_normal_videos: 3,
        n_visual_anomaly_videos: 2,
        n_contextual_anomaly_videos: 2,
        frame_size: 8,
        video_length: 12,
        clip_length: 4,
        sprites: [2, 2],
        radius: [1.0, 1.2],
        speed: [0.05, 0.1],
        seed,
        ..Default::default()
    }
}

pub fn tiny_train_config(method: Method, seed: u64) -> vadkit::trainer::TrainConfig {
    let mut cfg = vadkit::trainer::TrainConfig::new(method);
    cfg.backbone = vadkit::trainer::BackboneChoice::Preset(vadkit::trainer::Preset::Tiny);
    cfg.batch_size = 2;
    cfg.steps = 6;
    cfg.seed = seed;
    cfg.learning_rate = 1e-2;
    cfg.proposals.proposals_per_frame = 2;
    cfg
}
