//! Video anomaly detection with one-class deep SVDD and 3D convolutional
//! autoencoders, optionally fused with a graph-convolutional object
//! interaction branch.

pub mod backbone;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod flow;
pub mod interaction;
pub mod model;
pub mod nn;
pub mod plot;
pub mod recon;
pub mod svdd;
pub mod trainer;

pub use error::{Result, VadError};
