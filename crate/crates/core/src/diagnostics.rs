//! Finite-difference checks of every training loss on tiny seeded models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Example, EOS};
use crate::error::Result;
use crate::models::{
    decode_teacher_forced, Architecture, DiscArchitecture, DiscriminatorConfig, DiscriminatorParams,
    GeneratorConfig, GeneratorParams,
};
use crate::numerics::{grad_check, ParamSet};
use crate::training::{disc_full_gradient, disc_partial_gradient, mle_gradient, policy_gradient, DiscLoss};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const VOCAB: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOLERANCE
    }
}

pub fn tiny_generator_config(arch: Architecture, vocab_size: usize) -> GeneratorConfig {
    GeneratorConfig {
        arch,
        vocab_size,
        embed_dim: 4,
        hidden_dim: 5,
        ff_dim: 6,
        heads: 2,
        layers: 2,
    }
}

pub fn tiny_discriminator_config(arch: DiscArchitecture, vocab_size: usize) -> DiscriminatorConfig {
    DiscriminatorConfig {
        arch,
        vocab_size,
        embed_dim: 4,
        hidden_dim: 5,
        ff_dim: 6,
        heads: 2,
        layers: 2,
    }
}

/// Half-width of the parameter distribution used for checking. Additive
/// attention needs wide weights for its query gradients to leave the
/// roundoff floor; layer-normed transformers are better conditioned narrow.
fn spread_for(arch: Architecture) -> f64 {
    match arch {
        Architecture::Seq2Seq => 1.0,
        Architecture::Transformer => 0.5,
    }
}

/// Redraws every entry from U(-width, width), centring layer-norm gains on 1.
fn spread(params: &mut ParamSet, width: f64, rng: &mut ChaCha8Rng) {
    for (name, t) in params.iter_mut() {
        let offset = if name.ends_with(".g") { 1.0 } else { 0.0 };
        for v in t.data_mut() {
            *v = offset + rng.gen_range(-width..width);
        }
    }
}

fn ids(rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(4..VOCAB as u32)).collect()
}

/// Central-difference step; large to keep roundoff well below the smallest
/// gradients, which is safe because every model is smooth.
pub const GRADCHECK_EPS: f64 = 1e-3;

fn matching_discriminator(arch: Architecture) -> DiscArchitecture {
    match arch {
        Architecture::Seq2Seq => DiscArchitecture::Hierarchical,
        Architecture::Transformer => DiscArchitecture::Transformer,
    }
}

/// Gradient checks for the generator of `arch` (MLE and policy losses) and
/// the matching discriminator (full, prefix and squared-error losses).
pub fn gradient_suite(arch: Architecture, seed: u64) -> Result<Vec<GradCheckOutcome>> {
    let eps = GRADCHECK_EPS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = GeneratorParams::new(tiny_generator_config(arch, VOCAB), seed)?;
    spread(&mut gen.params, spread_for(arch), &mut rng);
    let mut disc = DiscriminatorParams::new(tiny_discriminator_config(matching_discriminator(arch), VOCAB), seed)?;
    spread(&mut disc.params, spread_for(arch), &mut rng);

    let mut x = ids(&mut rng, 3);
    x.push(EOS);
    x.extend(ids(&mut rng, 2));
    let mut y = ids(&mut rng, 3);
    y.push(EOS);
    let advantages: Vec<f64> = y.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    let human = vec![Example {
        source: x.clone(),
        target: y.clone(),
    }];
    let mut machine_y = ids(&mut rng, 4);
    machine_y.push(EOS);
    let machine = vec![Example {
        source: x.clone(),
        target: machine_y,
    }];

    let mut out = Vec::new();
    let mut record = |name: &str, err: f64| {
        out.push(GradCheckOutcome {
            name: name.to_string(),
            max_rel_err: err,
        })
    };

    let gen_with = |p: &ParamSet| GeneratorParams {
        config: gen.config,
        params: p.clone(),
    };
    let (_, g) = mle_gradient(&gen, &x, &y)?;
    record(
        "generator.mle",
        grad_check(|p| Ok(mle_gradient(&gen_with(p), &x, &y)?.0), &gen.params, &g, eps)?,
    );

    let objective = |p: &ParamSet| -> Result<f64> {
        let dists = decode_teacher_forced(&gen_with(p), &x, &y)?;
        Ok(dists
            .steps
            .iter()
            .zip(&y)
            .zip(&advantages)
            .map(|((d, &t), a)| a * d[t as usize].ln())
            .sum())
    };
    let g = policy_gradient(&gen, &x, &y, &advantages)?;
    record("generator.policy", grad_check(objective, &gen.params, &g, eps)?);

    let disc_with = |p: &ParamSet| DiscriminatorParams {
        config: disc.config,
        params: p.clone(),
    };
    for (name, kind) in [("discriminator.bce", DiscLoss::Bce), ("discriminator.mse", DiscLoss::Mse)] {
        let (_, g) = disc_full_gradient(&disc, &human, &machine, kind)?;
        let loss = |p: &ParamSet| Ok(disc_full_gradient(&disc_with(p), &human, &machine, kind)?.0.loss);
        record(name, grad_check(loss, &disc.params, &g, eps)?);
    }
    let lengths = [(2, 3)];
    let (_, g) = disc_partial_gradient(&disc, &human, &machine, &lengths, DiscLoss::Bce)?;
    let loss = |p: &ParamSet| Ok(disc_partial_gradient(&disc_with(p), &human, &machine, &lengths, DiscLoss::Bce)?.0.loss);
    record("discriminator.prefix", grad_check(loss, &disc.params, &g, eps)?);
    Ok(out)
}
