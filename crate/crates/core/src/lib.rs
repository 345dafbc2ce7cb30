//! Adversarial training of encoder-decoder dialogue generators.
//!
//! A generator (GRU seq2seq with additive attention, or a small transformer)
//! is pretrained by maximum likelihood and then trained against a binary
//! discriminator, either with one sequence-level reward per sample or with a
//! reward for every generated prefix.

pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod models;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{ParamSet, Tape, Tensor, Var};
