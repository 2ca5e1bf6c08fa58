//! Dense reverse-mode gradient engine, the predictor's layers, ADAM and a
//! finite-difference gradient checker. All arithmetic is f64.

mod adam;
mod gradcheck;
mod graph;
mod layers;
mod params;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use layers::{sinusoidal_positions, AttentionPool, BatchNorm, BiLstm, Linear, Mode, SeqMask, TransformerEncoder};
pub use params::{Bound, ParamStore, Tensor};
