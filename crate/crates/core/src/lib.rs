//! Non-intrusive speech quality (MOS) prediction toolkit.
//!
//! Trains small sequence-regression predictors (Bi-LSTM or transformer body
//! with attention pooling) on frame-level features, either native MFCCs or
//! pre-extracted self-supervised layer activations, and runs the analyses
//! around them: per-layer probing, corruption sensitivity, two-layer fusion
//! and agreement with human raters.
//!
//! Module map:
//! - [`data`]: manifests, MOS scaling, seeded 85/15 splits and corpus views
//! - [`features`]: WAV input, resampling, MFCC, SQAF embedding files
//! - [`nn`]: gradient engine, layers, ADAM, gradient checking
//! - [`model`]: predictor assembly and checkpoints
//! - [`training`]: batching, the training loop and evaluation
//! - [`probing`]: layer sweeps, layer-axis alignment, local optima
//! - [`corruption`]: degradations and sensitivity curves
//! - [`metrics`]: human RMSE, quantization correction, vote histograms, exports
//! - [`cli`]: the `sqa` command line

pub mod cli;
pub mod corruption;
pub mod data;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod probing;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
