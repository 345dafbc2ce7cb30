//! Dense tensors, a reverse-mode tape, parameter sets, Adam, and
//! finite-difference gradient checking.

mod gradcheck;
pub mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, FULL_CHECK_LIMIT};
pub use nn::{attention, cross_entropy, gru_cell, AttentionVars, GruVars};
pub use optim::{
    adam_update, adam_update_masked, clip_global_norm, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use params::{Init, ParamSet, ParamSpec, INIT_RANGE};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Logistic function, stable for large magnitudes.
pub fn sigmoid(x: f64) -> f64 {
    tensor::sigmoid(x)
}
