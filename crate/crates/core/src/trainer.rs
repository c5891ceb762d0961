//! Minibatch Adam training for both objectives, with periodic checkpoints,
//! a plain-text metrics log, and exact resumption.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::checkpoint::{self, Checkpoint};
use crate::dataset::{iter_training_clips, load_clip, Clip, ClipSampler, LoadOptions};
use crate::error::{Result, VadError};
use crate::flow::FlowStorage;
use crate::interaction::{InteractionConfig, ProviderKind};
use crate::model::{AnomalyModel, Method, ModelConfig};
use crate::nn::Adam;
use crate::recon::Reduction;
use crate::svdd::DEFAULT_WEIGHT_DECAY;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.log";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Toy,
    Tiny,
    FullScale,
    Capacity,
}

/// A named preset or a fully spelled-out backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackboneChoice {
    Preset(Preset),
    Custom(BackboneConfig),
}

impl Default for BackboneChoice {
    fn default() -> Self {
        BackboneChoice::Preset(Preset::Toy)
    }
}

impl BackboneChoice {
    pub fn resolve(&self) -> BackboneConfig {
        match self {
            BackboneChoice::Preset(Preset::Toy) => BackboneConfig::toy(),
            BackboneChoice::Preset(Preset::Tiny) => BackboneConfig::tiny().with_channels(3),
            BackboneChoice::Preset(Preset::FullScale) => BackboneConfig::full_scale(),
            BackboneChoice::Preset(Preset::Capacity) => BackboneConfig::capacity(),
            BackboneChoice::Custom(c) => c.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    #[serde(default)]
    pub gcn: bool,
    /// Append flow channels (requires precomputed sidecars).
    #[serde(default)]
    pub flow: bool,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub backbone: BackboneChoice,
    #[serde(default)]
    pub proposals: InteractionConfig,
    #[serde(default)]
    pub reduction: Reduction,
    /// Save a checkpoint every this many steps (and always at the end).
    #[serde(default = "default_every")]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub flow_storage: FlowStorage,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    4
}
fn default_steps() -> u64 {
    200
}
fn default_decay() -> f64 {
    DEFAULT_WEIGHT_DECAY
}
fn default_every() -> u64 {
    100
}

impl TrainConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            gcn: false,
            flow: false,
            learning_rate: default_lr(),
            batch_size: default_batch(),
            steps: default_steps(),
            seed: 0,
            weight_decay: default_decay(),
            backbone: BackboneChoice::default(),
            proposals: InteractionConfig::default(),
            reduction: Reduction::default(),
            checkpoint_every: default_every(),
            flow_storage: FlowStorage::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(VadError::Invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(VadError::Invalid("batch_size must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(VadError::Invalid("checkpoint_every must be at least 1".into()));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut backbone = self.backbone.resolve();
        if self.flow {
            backbone.input.channels = 5;
        }
        ModelConfig {
            method: self.method,
            backbone,
            interaction: self.gcn.then_some(self.proposals),
            reduction: self.reduction,
            weight_decay: self.weight_decay,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            flow: self.flow.then_some(self.flow_storage),
            boxes: match (self.gcn, self.proposals.provider) {
                (true, p @ (ProviderKind::Oracle | ProviderKind::External)) => Some(p),
                _ => None,
            },
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| VadError::Invalid(format!("cannot serialize config: {e}")))
    }
}

/// Windows at stride T covering every training video, used to place the
/// one-class center.
pub fn center_clips(sampler: &ClipSampler) -> Result<Vec<Clip>> {
    let cfg = sampler.config();
    let mut clips = Vec::new();
    for v in sampler.videos() {
        let mut start = 0;
        while start + cfg.frames <= v.len() {
            clips.push(load_clip(v, start + cfg.frames / 2, cfg)?);
            start += cfg.frames;
        }
    }
    Ok(clips)
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: AnomalyModel,
    pub adam: Adam,
    /// Optimizer steps completed.
    pub step: u64,
    sampler: ClipSampler,
    out_dir: Option<PathBuf>,
    log: Option<File>,
    clock: Instant,
}

impl Trainer {
    /// Builds the model from `config.seed` and, for the one-class
    /// objective, fixes the center before any update.
    pub fn new(config: TrainConfig, data_root: &Path) -> Result<Self> {
        config.validate()?;
        let model_config = config.model_config();
        let sampler = iter_training_clips(data_root, model_config.clip_config(), &config.load_options(), config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = AnomalyModel::new(model_config, &mut rng)?;
        if config.method == Method::Ocsvdd {
            model.init_center(&center_clips(&sampler)?)?;
        }
        Ok(Self {
            adam: Adam::new(config.learning_rate),
            config,
            model,
            step: 0,
            sampler,
            out_dir: None,
            log: None,
            clock: Instant::now(),
        })
    }

    /// Continues from `checkpoint`; the run proceeds exactly as if it had
    /// never stopped.
    pub fn resume(checkpoint_path: &Path, data_root: &Path) -> Result<Self> {
        let ckpt = checkpoint::load(checkpoint_path)?;
        let config: TrainConfig = serde_json::from_value(ckpt.meta.clone()).map_err(|e| VadError::Checkpoint {
            path: checkpoint_path.to_path_buf(),
            msg: format!("no training config in metadata: {e}"),
        })?;
        if config.model_config() != ckpt.model.config {
            return Err(VadError::Checkpoint {
                path: checkpoint_path.to_path_buf(),
                msg: "model config does not match the stored training config".into(),
            });
        }
        let sampler = iter_training_clips(
            data_root,
            ckpt.model.config.clip_config(),
            &config.load_options(),
            config.seed,
        )?;
        let adam = match ckpt.adam {
            Some(state) => Adam::with_state(config.learning_rate, state),
            None => Adam::new(config.learning_rate),
        };
        Ok(Self {
            adam,
            config,
            model: ckpt.model,
            step: ckpt.step,
            sampler,
            out_dir: None,
            log: None,
            clock: Instant::now(),
        })
    }

    /// Enables checkpoints, the metrics log and the config echo in `dir`.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| VadError::io(dir, e))?;
        let cfg_path = dir.join(CONFIG_FILE);
        fs::write(&cfg_path, self.config.to_toml()?).map_err(|e| VadError::io(&cfg_path, e))?;
        let log_path = dir.join(METRICS_FILE);
        let log = if self.step == 0 {
            File::create(&log_path)
        } else {
            OpenOptions::new().append(true).create(true).open(&log_path)
        }
        .map_err(|e| VadError::io(&log_path, e))?;
        self.log = Some(log);
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn sampler(&self) -> &ClipSampler {
        &self.sampler
    }

    /// Clips of minibatch `step` (0-based).
    pub fn batch(&self, step: u64) -> Result<Vec<Clip>> {
        let b = self.config.batch_size as u64;
        (step * b..(step + 1) * b).map(|i| self.sampler.clip_at(i)).collect()
    }

    /// One Adam update; returns the minibatch loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.batch(self.step)?;
        let (loss, grads) = self.model.loss_and_grads(&batch)?;
        let step = self.step + 1;
        if !loss.is_finite() {
            return Err(VadError::NonFiniteLoss {
                step: step as usize,
                loss,
            });
        }
        self.adam.step(&mut self.model, &grads);
        self.step = step;
        if let Some(log) = &mut self.log {
            let wall = self.clock.elapsed().as_secs_f64();
            writeln!(log, "{step} {loss:e} {wall:.3}").map_err(|e| VadError::io(METRICS_FILE, e))?;
        }
        if self.step % self.config.checkpoint_every == 0 {
            self.save()?;
        }
        Ok(loss)
    }

    /// Runs until `config.steps` and writes a final checkpoint.
    pub fn run(&mut self) -> Result<Vec<f64>> {
        let mut losses = Vec::new();
        while self.step < self.config.steps {
            losses.push(self.step()?);
        }
        self.save()?;
        Ok(losses)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            model: self.model.clone(),
            adam: Some(self.adam.state.clone()),
            step: self.step,
            meta: serde_json::to_value(&self.config).map_err(|e| VadError::Invalid(e.to_string()))?,
        })
    }

    /// Writes `checkpoint.bin` when an output directory is set.
    pub fn save(&self) -> Result<()> {
        match &self.out_dir {
            Some(dir) => checkpoint::save(&dir.join(CHECKPOINT_FILE), &self.checkpoint()?),
            None => Ok(()),
        }
    }
}

/// Trains from scratch and leaves `checkpoint.bin`, `metrics.log` and
/// `config.toml` in `out_dir`.
pub fn train(config: TrainConfig, data_root: &Path, out_dir: &Path) -> Result<Vec<f64>> {
    Trainer::new(config, data_root)?.with_output(out_dir)?.run()
}

/// Parses a metrics log into `(step, loss)` pairs, dropping wall times.
pub fn read_metrics(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| VadError::io(path, e))?;
    text.lines()
        .map(|line| {
            let mut it = line.split_whitespace();
            let parse = || VadError::Invalid(format!("{}: malformed line {line:?}", path.display()));
            let step = it.next().and_then(|s| s.parse().ok()).ok_or_else(parse)?;
            let loss = it.next().and_then(|s| s.parse().ok()).ok_or_else(parse)?;
            Ok((step, loss))
        })
        .collect()
}
