use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VadError>;

#[derive(Debug, Error)]
pub enum VadError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("config error at {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("shape mismatch in {what}: expected {expected:?}, got {actual:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("video {video_id} has {len} frames, but clip length T={clip_len} requires at least {clip_len}")]
    VideoTooShort {
        video_id: String,
        len: usize,
        clip_len: usize,
    },
    #[error("invalid annotation for {video_id}: {msg}")]
    Annotation { video_id: String, msg: String },
    #[error("no annotation for test video {0}")]
    MissingAnnotation(String),
    #[error("training split at {0} contains no videos")]
    EmptyTrainSplit(PathBuf),
    #[error("video {video_id}: {msg}")]
    MissingFrames { video_id: String, msg: String },
    #[error("could not place sprites without collisions after {attempts} attempts; use fewer or smaller sprites")]
    SpriteLayout { attempts: usize },
    #[error("AUC is undefined: labels contain only {0}")]
    SingleClass(&'static str),
    #[error("center is already frozen")]
    CenterFrozen,
    #[error("center has not been initialized")]
    CenterMissing,
    #[error("cannot initialize center from an empty sample")]
    EmptySample,
    #[error("weight decay must be non-negative, got {0}")]
    NegativeWeightDecay(f64),
    #[error("similarity graph is not row-stochastic: row {row} sums to {sum}")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("box {index} ({x0}, {y0}, {x1}, {y1}) lies outside the {width}x{height} feature frame")]
    BoxOutOfBounds {
        index: usize,
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        width: usize,
        height: usize,
    },
    #[error("proposal provider: {0}")]
    Proposals(String),
    #[error("outer-product fusion needs a square feature frame, got H'={h} W'={w}")]
    NonSquareFusion { h: usize, w: usize },
    #[error("flow value {value} outside [0, 255]")]
    FlowRange { value: f64 },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("non-finite loss {loss} at step {step}; last good checkpoint retained")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl VadError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VadError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        VadError::Shape {
            what: what.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
