use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DiscLoss, Optimizer};
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::models::{score_logit, DiscriminatorParams};
use crate::numerics::{sigmoid, ParamSet, Tape};

pub const HUMAN: f64 = 1.0;
pub const MACHINE: f64 = 0.0;

/// Loss and accuracy of one discriminator update, measured before the step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscStepStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// A response (or prefix) with its label.
struct Judged<'a> {
    x: &'a [u32],
    y: &'a [u32],
    label: f64,
}

/// Loss, correctness and gradient for one labelled response.
fn judged_gradient(disc: &DiscriminatorParams, item: &Judged, kind: DiscLoss) -> Result<(f64, bool, ParamSet)> {
    let mut tape = Tape::new();
    let z = score_logit(&mut tape, disc, item.x, item.y)?;
    let loss = match kind {
        DiscLoss::Bce => tape.bce_with_logits(z, item.label)?,
        DiscLoss::Mse => {
            let q = tape.sigmoid(z);
            let diff = tape.add_scalar(q, -item.label);
            let sq = tape.mul(diff, diff)?;
            tape.sum(sq)
        }
    };
    let predicted_human = sigmoid(tape.value(z).item()) > 0.5;
    let correct = predicted_human == (item.label == HUMAN);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss, &disc.params)?;
    Ok((value, correct, grads))
}

/// Sum of per-item losses divided by `denom`, with the matching gradient.
fn labelled_gradient(
    disc: &DiscriminatorParams,
    items: &[Judged],
    kind: DiscLoss,
    denom: f64,
) -> Result<(DiscStepStats, ParamSet)> {
    let parts: Vec<(f64, bool, ParamSet)> = items
        .par_iter()
        .map(|item| judged_gradient(disc, item, kind))
        .collect::<Result<_>>()?;
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / denom;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("discriminator loss {loss}")));
    }
    let accuracy = parts.iter().filter(|p| p.1).count() as f64 / items.len() as f64;
    let mut iter = parts.into_iter().map(|p| p.2);
    let mut grads = iter.next().ok_or_else(|| Error::invalid("empty batch"))?;
    for g in iter {
        grads.add_assign(&g)?;
    }
    grads.scale(1.0 / denom);
    Ok((DiscStepStats { loss, accuracy }, grads))
}

fn check_sets(human: &[Example], machine: &[Example]) -> Result<()> {
    if human.is_empty() || machine.is_empty() {
        return Err(Error::invalid("human and machine sets must be non-empty"));
    }
    Ok(())
}

/// Mean per-example loss over human (label 1) and machine (label 0)
/// full responses, with its gradient.
pub fn disc_full_gradient(
    disc: &DiscriminatorParams,
    human: &[Example],
    machine: &[Example],
    kind: DiscLoss,
) -> Result<(DiscStepStats, ParamSet)> {
    check_sets(human, machine)?;
    let items: Vec<Judged> = human
        .iter()
        .map(|e| (e, HUMAN))
        .chain(machine.iter().map(|e| (e, MACHINE)))
        .map(|(e, label)| Judged {
            x: &e.source,
            y: &e.target,
            label,
        })
        .collect();
    labelled_gradient(disc, &items, kind, items.len() as f64)
}

/// One optimizer step on full-sequence classification.
pub fn disc_update_full(
    disc: &mut DiscriminatorParams,
    opt: &mut Optimizer,
    human: &[Example],
    machine: &[Example],
    kind: DiscLoss,
) -> Result<DiscStepStats> {
    let (stats, grads) = disc_full_gradient(disc, human, machine, kind)?;
    opt.step(&mut disc.params, grads)?;
    Ok(stats)
}

/// A prefix length drawn uniformly from `1..=len`.
pub fn sample_prefix_len(len: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    if len == 0 {
        return Err(Error::invalid("cannot take a prefix of an empty response"));
    }
    Ok(rng.gen_range(1..=len))
}

/// Prefix lengths `(human, machine)` for each pair, drawn in pair order.
pub fn sample_prefix_pairs(
    human: &[Example],
    machine: &[Example],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    human
        .iter()
        .zip(machine)
        .map(|(h, m)| Ok((sample_prefix_len(h.target.len(), rng)?, sample_prefix_len(m.target.len(), rng)?)))
        .collect()
}

/// Per-pair loss `ℓ(h_prefix, 1) + ℓ(m_prefix, 0)` averaged over pairs,
/// with the prefix lengths given explicitly.
pub fn disc_partial_gradient(
    disc: &DiscriminatorParams,
    human: &[Example],
    machine: &[Example],
    lengths: &[(usize, usize)],
    kind: DiscLoss,
) -> Result<(DiscStepStats, ParamSet)> {
    check_sets(human, machine)?;
    if human.len() != machine.len() || lengths.len() != human.len() {
        return Err(Error::invalid("partial update needs paired human and machine responses"));
    }
    let mut items = Vec::with_capacity(2 * human.len());
    for ((h, m), &(th, tm)) in human.iter().zip(machine).zip(lengths) {
        if th == 0 || th > h.target.len() || tm == 0 || tm > m.target.len() {
            return Err(Error::invalid(format!("prefix lengths ({th}, {tm}) out of range")));
        }
        items.push(Judged {
            x: &h.source,
            y: &h.target[..th],
            label: HUMAN,
        });
        items.push(Judged {
            x: &m.source,
            y: &m.target[..tm],
            label: MACHINE,
        });
    }
    labelled_gradient(disc, &items, kind, human.len() as f64)
}

/// Draws one prefix per response and takes one step on the prefix
/// classification loss.
pub fn disc_update_partial(
    disc: &mut DiscriminatorParams,
    opt: &mut Optimizer,
    human: &[Example],
    machine: &[Example],
    rng: &mut ChaCha8Rng,
    kind: DiscLoss,
) -> Result<DiscStepStats> {
    let lengths = sample_prefix_pairs(human, machine, rng)?;
    let (stats, grads) = disc_partial_gradient(disc, human, machine, &lengths, kind)?;
    opt.step(&mut disc.params, grads)?;
    Ok(stats)
}
