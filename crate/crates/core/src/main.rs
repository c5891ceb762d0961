use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use vadkit::checkpoint;
use vadkit::dataset::{generate_synthetic, load_split, load_video, AnnotationFile, LoadOptions, SynthSpec, ANNOTATIONS_FILE};
use vadkit::evaluate::{evaluate_run, sliding_scores, Aggregation, ScoreSeries, Scorer};
use vadkit::flow::{precompute_flow, FlowBackend, FlowStorage, ReferenceFlow};
use vadkit::model::Method;
use vadkit::plot::plot_scores;
use vadkit::trainer::{TrainConfig, Trainer, CHECKPOINT_FILE};

#[derive(Parser)]
#[command(name = "vadkit", version, about = "Video anomaly detection: train, score and evaluate clip models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic sprite-world dataset.
    Synth {
        /// TOML synthetic spec; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Precompute quantized optical-flow sidecars for every video.
    Flow {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendArg::Reference)]
        backend: BackendArg,
        #[arg(long, value_enum, default_value_t = StorageArg::Lossless)]
        storage: StorageArg,
        /// TOML parameters of the reference estimator.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model; flags override the config file.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        gcn: Option<bool>,
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        flow: Option<bool>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from the checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Score every frame of one video.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding frame_%06d.png files.
        #[arg(long)]
        video: PathBuf,
        /// Output JSON score series.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test split and report frame-wise AUC.
    Eval {
        /// Required for the model scorer.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ScorerArg::Model)]
        scorer: ScorerArg,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to <data>/annotations.json.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = AggregationArg::Concatenate)]
        aggregation: AggregationArg,
    },
    /// Render a score series with its anomalous ranges shaded.
    Plot {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 800)]
        width: u32,
        #[arg(long, default_value_t = 300)]
        height: u32,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BackendArg {
    Reference,
    External,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StorageArg {
    Lossless,
    Jpeg,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ocsvdd,
    Recon,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ScorerArg {
    Model,
    Oracle,
    AntiOracle,
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum AggregationArg {
    Concatenate,
    PerVideoMean,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
        let at = line.map(|l| format!(" line {l}")).unwrap_or_default();
        anyhow::anyhow!("invalid config {}{at}: {}", path.display(), e.message().trim())
    })
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).context("cannot serialize resolved config")?;
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn synth(config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<()> {
    let mut spec: SynthSpec = match &config {
        Some(p) => read_toml(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let summary = generate_synthetic(&spec, &out)?;
    write_toml(&out.join("synth.toml"), &spec)?;
    println!(
        "wrote {} train and {} test videos to {}",
        summary.train.len(),
        summary.test.len(),
        out.display()
    );
    Ok(())
}

fn flow(root: PathBuf, backend: BackendArg, storage: StorageArg, config: Option<PathBuf>) -> Result<()> {
    let params: ReferenceFlow = match &config {
        Some(p) => read_toml(p)?,
        None => ReferenceFlow::default(),
    };
    let backend_v = match backend {
        BackendArg::Reference => FlowBackend::Reference,
        BackendArg::External => FlowBackend::External,
    };
    let storage_v = match storage {
        StorageArg::Lossless => FlowStorage::Lossless,
        StorageArg::Jpeg => FlowStorage::Jpeg,
    };
    let summary = precompute_flow(&root, &backend_v, &params, storage_v)?;
    #[derive(Serialize)]
    struct Echo {
        backend: BackendArg,
        storage: StorageArg,
        reference: ReferenceFlow,
    }
    write_toml(
        &root.join("flow.toml"),
        &Echo {
            backend,
            storage,
            reference: params,
        },
    )?;
    println!("wrote {} flow pairs for {} videos", summary.pairs, summary.videos);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: Option<PathBuf>,
    data: PathBuf,
    out: PathBuf,
    method: Option<MethodArg>,
    gcn: Option<bool>,
    flow: Option<bool>,
    seed: Option<u64>,
    steps: Option<u64>,
    resume: bool,
) -> Result<()> {
    let trainer = if resume {
        if config.is_some() || method.is_some() || gcn.is_some() || flow.is_some() || seed.is_some() {
            bail!("--resume takes its settings from the checkpoint; only --steps may be given");
        }
        let mut t = Trainer::resume(&out.join(CHECKPOINT_FILE), &data)?;
        if let Some(s) = steps {
            t.config.steps = s;
        }
        t
    } else {
        let method = method.map(|m| match m {
            MethodArg::Ocsvdd => Method::Ocsvdd,
            MethodArg::Recon => Method::Recon,
        });
        let mut cfg = match (&config, method) {
            (Some(p), _) => read_toml::<TrainConfig>(p)?,
            (None, Some(m)) => TrainConfig::new(m),
            (None, None) => bail!("train needs --config or --method"),
        };
        if let Some(m) = method {
            cfg.method = m;
        }
        if let Some(g) = gcn {
            cfg.gcn = g;
        }
        if let Some(f) = flow {
            cfg.flow = f;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(s) = steps {
            cfg.steps = s;
        }
        Trainer::new(cfg, &data)?
    };
    let mut trainer = trainer.with_output(&out)?;
    let losses = trainer.run()?;
    match (losses.first(), losses.last()) {
        (Some(first), Some(last)) => println!("trained {} steps: loss {first:.6e} -> {last:.6e}", losses.len()),
        _ => println!("nothing to do: already at step {}", trainer.step),
    }
    Ok(())
}

/// Loads a trained model plus the video loading options it was trained with.
fn load_model(path: &Path) -> Result<(vadkit::model::AnomalyModel, LoadOptions)> {
    let ckpt = checkpoint::load(path)?;
    let opts = match serde_json::from_value::<TrainConfig>(ckpt.meta.clone()) {
        Ok(cfg) => cfg.load_options(),
        Err(_) => LoadOptions {
            flow: (ckpt.model.clip_config().flow).then_some(FlowStorage::Lossless),
            boxes: None,
        },
    };
    Ok((ckpt.model, opts))
}

fn score(checkpoint_path: PathBuf, video_dir: PathBuf, out: PathBuf) -> Result<()> {
    let (model, opts) = load_model(&checkpoint_path)?;
    let video = load_video(&video_dir, &opts)?;
    let raw = sliding_scores(&video, &model.clip_config(), |c| model.score(c))?;
    let series = ScoreSeries::from_raw(video.id.clone(), raw);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let text = serde_json::to_string_pretty(&series)?;
    fs::write(&out, text).with_context(|| format!("cannot write {}", out.display()))?;
    println!("scored {} frames of {}", series.raw.len(), series.video_id);
    Ok(())
}

#[derive(Serialize)]
struct EvalEcho {
    scorer: ScorerArg,
    aggregation: AggregationArg,
    checkpoint: Option<PathBuf>,
    data: PathBuf,
    annotations: PathBuf,
}

fn eval(
    checkpoint_path: Option<PathBuf>,
    scorer: ScorerArg,
    data: PathBuf,
    annotations: Option<PathBuf>,
    out: PathBuf,
    aggregation: AggregationArg,
) -> Result<()> {
    let ann_path = annotations.unwrap_or_else(|| data.join(ANNOTATIONS_FILE));
    let ann = AnnotationFile::load(&ann_path)?;
    let agg = match aggregation {
        AggregationArg::Concatenate => Aggregation::Concatenate,
        AggregationArg::PerVideoMean => Aggregation::PerVideoMean,
    };
    let loaded = match (scorer, &checkpoint_path) {
        (ScorerArg::Model, Some(p)) => Some(load_model(p)?),
        (ScorerArg::Model, None) => bail!("the model scorer needs --checkpoint"),
        (_, Some(_)) => bail!("--checkpoint is only used by the model scorer"),
        (_, None) => None,
    };
    let opts = loaded.as_ref().map(|(_, o)| o.clone()).unwrap_or_default();
    let videos = load_split(&data, "test", &opts)?;
    if videos.is_empty() {
        bail!("no test videos under {}", data.join("test").display());
    }
    let s = match (scorer, &loaded) {
        (ScorerArg::Model, Some((m, _))) => Scorer::Model(m),
        (ScorerArg::AntiOracle, _) => Scorer::AntiOracle,
        _ => Scorer::Oracle,
    };
    let report = evaluate_run(&s, &videos, &ann, agg)?;
    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    report.save(&out)?;
    write_toml(
        &out.join("eval.toml"),
        &EvalEcho {
            scorer,
            aggregation,
            checkpoint: checkpoint_path,
            data,
            annotations: ann_path,
        },
    )?;
    println!("AUC {:.3}", report.auc);
    for (k, v) in &report.subsets {
        println!("AUC[{k}] {v:.3}");
    }
    Ok(())
}

fn plot(scores: PathBuf, annotations: PathBuf, out: PathBuf, width: u32, height: u32) -> Result<()> {
    let text = fs::read_to_string(&scores).with_context(|| format!("cannot read {}", scores.display()))?;
    let series: ScoreSeries = serde_json::from_str(&text).with_context(|| format!("invalid score file {}", scores.display()))?;
    let ann = AnnotationFile::load(&annotations)?;
    let a = ann.get(&series.video_id)?;
    plot_scores(&series, a, &out, width, height)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out, seed } => synth(config, out, seed),
        Command::Flow {
            root,
            backend,
            storage,
            config,
        } => flow(root, backend, storage, config),
        Command::Train {
            config,
            data,
            out,
            method,
            gcn,
            flow,
            seed,
            steps,
            resume,
        } => train(config, data, out, method, gcn, flow, seed, steps, resume),
        Command::Score { checkpoint, video, out } => score(checkpoint, video, out),
        Command::Eval {
            checkpoint,
            scorer,
            data,
            annotations,
            out,
            aggregation,
        } => eval(checkpoint, scorer, data, annotations, out, aggregation),
        Command::Plot {
            scores,
            annotations,
            out,
            width,
            height,
        } => plot(scores, annotations, out, width, height),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
