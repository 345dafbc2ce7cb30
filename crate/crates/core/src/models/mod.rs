//! Generator policies and the discriminator.

pub mod discriminator;
pub mod generator;
pub mod transformer;

pub use discriminator::{
    disc_score_full, disc_scores_partial, prefix_logits, score_logit, DiscArchitecture,
    DiscriminatorConfig, DiscriminatorParams, ResponseScorer,
};
pub use generator::{
    decode_teacher_forced, greedy_decode, sample_sequence, sample_with_rng, sequence_log_prob,
    step_log_probs, transformer_forward, Architecture, DecoderSession, GeneratorConfig,
    GeneratorParams, Origin, SampledSequence, StepDistributions,
};
