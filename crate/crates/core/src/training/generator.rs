use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{BaselineState, Mode, Optimizer, TrainConfig};
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::models::{
    disc_score_full, disc_scores_partial, sample_with_rng, step_log_probs, DiscriminatorParams,
    GeneratorParams,
};
use crate::numerics::{ParamSet, Tape};

/// Rewards observed for one sampled response and the baselines they were
/// compared against.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardSignal {
    pub mode: Mode,
    pub tokens: Vec<u32>,
    /// `[Q+({x,y})]` for PG; `Q+(x, Y_t)` for `t = 1..=T` for REGS.
    pub rewards: Vec<f64>,
    pub baselines: Vec<f64>,
}

impl RewardSignal {
    /// Per-token advantages, length `T`.
    pub fn advantages(&self) -> Vec<f64> {
        match self.mode {
            Mode::Pg => vec![self.rewards[0] - self.baselines[0]; self.tokens.len()],
            Mode::Regs => self
                .rewards
                .iter()
                .zip(&self.baselines)
                .map(|(r, b)| r - b)
                .collect(),
        }
    }

    /// Score of the complete response.
    pub fn final_reward(&self) -> f64 {
        *self.rewards.last().expect("reward signal is never empty")
    }

    pub fn q_minus(&self) -> Vec<f64> {
        self.rewards.iter().map(|q| 1.0 - q).collect()
    }
}

/// Gradient of `−Σ_t w_t log p(y_t | x, y_<t)` and the unweighted NLL.
fn weighted_nll(gen: &GeneratorParams, x: &[u32], y: &[u32], weights: &[f64]) -> Result<(f64, ParamSet)> {
    if weights.len() != y.len() {
        return Err(Error::Shape {
            op: "weighted_nll",
            lhs: vec![weights.len()],
            rhs: vec![y.len()],
        });
    }
    let mut tape = Tape::new();
    let steps = step_log_probs(&mut tape, gen, x, y)?;
    let mut nll = 0.0;
    let mut terms = Vec::with_capacity(y.len());
    for ((&lp, &tok), &w) in steps.iter().zip(y).zip(weights) {
        let picked = tape.pick(lp, tok as usize)?;
        nll -= tape.value(picked).item();
        terms.push(tape.scale(picked, -w));
    }
    let loss = tape.sum_all(&terms)?;
    let grads = tape.backward(loss, &gen.params)?;
    Ok((nll, grads))
}

/// Negative log-likelihood `−Σ_t log p(y_t | x, y_<t)` and its gradient.
pub fn mle_gradient(gen: &GeneratorParams, x: &[u32], y: &[u32]) -> Result<(f64, ParamSet)> {
    weighted_nll(gen, x, y, &vec![1.0; y.len()])
}

/// Ascent direction `Σ_t A_t ∇ log p(y_t | x, y_<t)`.
pub fn policy_gradient(gen: &GeneratorParams, x: &[u32], y: &[u32], advantages: &[f64]) -> Result<ParamSet> {
    let (_, grads) = weighted_nll(gen, x, y, advantages)?;
    Ok(grads.scaled(-1.0))
}

fn sum_in_order(parts: Vec<ParamSet>) -> Result<ParamSet> {
    let mut iter = parts.into_iter();
    let mut total = iter.next().ok_or_else(|| Error::invalid("empty batch"))?;
    for p in iter {
        total.add_assign(&p)?;
    }
    Ok(total)
}

fn is_all_zero(grads: &ParamSet) -> bool {
    grads.iter().all(|(_, t)| t.data().iter().all(|&g| g == 0.0))
}

/// Mean NLL over `examples` and its gradient. Examples are processed in
/// parallel and reduced in input order.
pub fn mle_batch_gradient(gen: &GeneratorParams, examples: &[Example]) -> Result<(f64, ParamSet)> {
    if examples.is_empty() {
        return Err(Error::invalid("batch must be non-empty"));
    }
    let parts: Vec<(f64, ParamSet)> = examples
        .par_iter()
        .map(|e| mle_gradient(gen, &e.source, &e.target))
        .collect::<Result<_>>()?;
    let n = examples.len() as f64;
    let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("MLE loss {loss}")));
    }
    let mut grads = sum_in_order(parts.into_iter().map(|(_, g)| g).collect())?;
    grads.scale(1.0 / n);
    Ok((loss, grads))
}

/// One optimizer step on the mean teacher-forced NLL; returns the loss
/// before the step.
pub fn mle_pretrain_step(gen: &mut GeneratorParams, opt: &mut Optimizer, examples: &[Example]) -> Result<f64> {
    let (loss, grads) = mle_batch_gradient(gen, examples)?;
    opt.step(&mut gen.params, grads)?;
    Ok(loss)
}

/// Descent gradient of the reward-1, baseline-0 policy update on human pairs.
pub fn teacher_forcing_gradient(gen: &GeneratorParams, examples: &[Example]) -> Result<(f64, ParamSet)> {
    if examples.is_empty() {
        return Err(Error::invalid("batch must be non-empty"));
    }
    let parts: Vec<(f64, ParamSet)> = examples
        .par_iter()
        .map(|e| {
            let (nll, grads) = weighted_nll(gen, &e.source, &e.target, &vec![1.0; e.target.len()])?;
            Ok((nll, grads.scaled(-1.0)))
        })
        .collect::<Result<_>>()?;
    let n = examples.len() as f64;
    let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / n;
    let mut ascent = sum_in_order(parts.into_iter().map(|(_, g)| g).collect())?;
    ascent.scale(-1.0 / n);
    Ok((loss, ascent))
}

/// Policy update on gold responses with reward 1 and baseline 0; returns
/// the mean NLL before the step.
pub fn teacher_forcing_update(gen: &mut GeneratorParams, opt: &mut Optimizer, examples: &[Example]) -> Result<f64> {
    let (loss, grads) = teacher_forcing_gradient(gen, examples)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("teacher-forcing loss {loss}")));
    }
    opt.step(&mut gen.params, grads)?;
    Ok(loss)
}

/// Samples a response and scores it according to `mode`.
pub fn sample_and_score(
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    x: &[u32],
    mode: Mode,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Vec<u32>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = sample_with_rng(gen, x, config.sample_len(), config.temperature, &mut rng)?.tokens;
    let rewards = match mode {
        Mode::Pg => vec![disc_score_full(disc, x, &y)?],
        Mode::Regs => disc_scores_partial(disc, x, &y)?,
    };
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("discriminator reward".into()));
    }
    Ok((y, rewards))
}

/// Mean ascent direction for already-scored samples.
pub fn reward_gradient(gen: &GeneratorParams, sources: &[Vec<u32>], signals: &[RewardSignal]) -> Result<ParamSet> {
    if sources.is_empty() || sources.len() != signals.len() {
        return Err(Error::invalid("need one reward signal per source"));
    }
    let parts: Vec<ParamSet> = sources
        .par_iter()
        .zip(signals)
        .map(|(x, s)| policy_gradient(gen, x, &s.tokens, &s.advantages()))
        .collect::<Result<_>>()?;
    let mut total = sum_in_order(parts)?;
    total.scale(1.0 / sources.len() as f64);
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn adversarial_step(
    mode: Mode,
    gen: &mut GeneratorParams,
    opt: &mut Optimizer,
    disc: &DiscriminatorParams,
    sources: &[Vec<u32>],
    baseline: &mut BaselineState,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RewardSignal>> {
    match (mode, &*baseline) {
        (Mode::Pg, BaselineState::Scalar(_)) | (Mode::Regs, BaselineState::PerPosition { .. }) => {}
        _ => return Err(Error::Config(format!("baseline kind does not match mode {}", mode.name()))),
    }
    let seeds: Vec<u64> = sources.iter().map(|_| rng.gen()).collect();
    let sampled: Vec<(Vec<u32>, Vec<f64>)> = {
        let gen = &*gen;
        sources
            .par_iter()
            .zip(&seeds)
            .map(|(x, &seed)| sample_and_score(gen, disc, x, mode, config, seed))
            .collect::<Result<_>>()?
    };
    let signals: Vec<RewardSignal> = sampled
        .into_iter()
        .map(|(tokens, rewards)| {
            let baselines = baseline.values_for(rewards.len());
            RewardSignal {
                mode,
                tokens,
                rewards,
                baselines,
            }
        })
        .collect();
    let ascent = reward_gradient(gen, sources, &signals)?;
    if !is_all_zero(&ascent) {
        opt.step(&mut gen.params, ascent.scaled(-1.0))?;
    }
    for s in &signals {
        baseline.update(&s.rewards, config.baseline_decay)?;
    }
    Ok(signals)
}

/// Samples one response per source, rewards each with `Q+({x,y})`, takes one
/// ascent step along `(Q+ − b) ∇ log p(y|x)` and then updates the baseline.
pub fn pg_generator_step(
    gen: &mut GeneratorParams,
    opt: &mut Optimizer,
    disc: &DiscriminatorParams,
    sources: &[Vec<u32>],
    baseline: &mut BaselineState,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RewardSignal>> {
    adversarial_step(Mode::Pg, gen, opt, disc, sources, baseline, config, rng)
}

/// As [`pg_generator_step`] with per-prefix rewards `Q+(x, Y_t)` and
/// per-position baselines.
pub fn regs_generator_step(
    gen: &mut GeneratorParams,
    opt: &mut Optimizer,
    disc: &DiscriminatorParams,
    sources: &[Vec<u32>],
    baseline: &mut BaselineState,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RewardSignal>> {
    adversarial_step(Mode::Regs, gen, opt, disc, sources, baseline, config, rng)
}
