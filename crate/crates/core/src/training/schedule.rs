use std::ops::ControlFlow;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::discriminator::{disc_update_full, disc_update_partial, DiscStepStats};
use super::generator::{mle_pretrain_step, pg_generator_step, regs_generator_step, teacher_forcing_update, RewardSignal};
use super::{BaselineState, FreezeSpec, Mode, Optimizer, TrainConfig};
use crate::corpus::{batch_examples, Example};
use crate::error::{Error, Result};
use crate::models::{decode_teacher_forced, sample_with_rng, DiscriminatorParams, GeneratorParams};


/// Summary of one pretraining epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over batches of the mean per-example NLL.
    pub loss: f64,
    /// Teacher-forced next-token accuracy after the epoch.
    pub accuracy: f64,
}

/// Fraction of target positions where the teacher-forced argmax (lowest id
/// on ties) equals the gold token.
pub fn teacher_forced_accuracy(gen: &GeneratorParams, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples"));
    }
    let counts: Vec<(usize, usize)> = examples
        .par_iter()
        .map(|e| {
            let dists = decode_teacher_forced(gen, &e.source, &e.target)?;
            let hits = dists
                .steps
                .iter()
                .zip(&e.target)
                .filter(|(p, &gold)| {
                    let best = p
                        .iter()
                        .enumerate()
                        .fold(0, |best, (i, &v)| if v > p[best] { i } else { best });
                    best == gold as usize
                })
                .count();
            Ok((hits, e.target.len()))
        })
        .collect::<Result<_>>()?;
    let (hits, total) = counts
        .iter()
        .fold((0, 0), |(h, t), &(a, b)| (h + a, t + b));
    Ok(hits as f64 / total as f64)
}

/// MLE pretraining for up to `config.epochs` epochs, reshuffling each
/// epoch. `on_epoch` may stop the run early with `ControlFlow::Break`.
pub fn pretrain(
    gen: &mut GeneratorParams,
    examples: &[Example],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &GeneratorParams) -> Result<ControlFlow<()>>,
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    let mut opt = Optimizer::new(config.lr).with_clip(config.clip_norm);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let batches = batch_examples(examples, config.batch_size, config.seed.wrapping_add(epoch as u64))?;
        let mut total = 0.0;
        for batch in &batches {
            total += mle_pretrain_step(gen, &mut opt, &batch.examples())?;
        }
        let stats = EpochStats {
            epoch,
            loss: total / batches.len() as f64,
            accuracy: teacher_forced_accuracy(gen, examples)?,
        };
        log::debug!("epoch {epoch}: loss {:.6} acc {:.4}", stats.loss, stats.accuracy);
        history.push(stats);
        if on_epoch(&stats, gen)?.is_break() {
            break;
        }
    }
    Ok(history)
}

/// One line of the adversarial history log.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub round: usize,
    /// Mean full-response score of the round's generator samples.
    pub mean_reward: f64,
    /// Mean batch accuracy of the round's discriminator updates.
    pub disc_accuracy: f64,
    /// Mean NLL of the round's teacher-forcing updates, if any ran.
    pub tf_loss: Option<f64>,
    pub wall_ms: u128,
    /// First generator sample of the round.
    pub sample: Vec<u32>,
}

impl HistoryRow {
    /// Tab-separated: round, mean reward, accuracy, teacher-forcing loss
    /// (`nan` when none ran), wall-clock ms.
    pub fn to_line(&self) -> String {
        let fixed = |v: f64| if v.is_nan() { "nan".to_string() } else { format!("{v:.6}") };
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.round,
            fixed(self.mean_reward),
            fixed(self.disc_accuracy),
            fixed(self.tf_loss.unwrap_or(f64::NAN)),
            self.wall_ms
        )
    }
}

/// Mutable state of an adversarial run.
pub struct AdversarialTrainer<'a> {
    pub gen: &'a mut GeneratorParams,
    pub disc: &'a mut DiscriminatorParams,
    examples: &'a [Example],
    config: TrainConfig,
    gen_opt: Optimizer,
    disc_opt: Optimizer,
    baseline: BaselineState,
    rng: ChaCha8Rng,
    round: usize,
}

impl<'a> AdversarialTrainer<'a> {
    pub fn new(
        gen: &'a mut GeneratorParams,
        disc: &'a mut DiscriminatorParams,
        examples: &'a [Example],
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if examples.is_empty() {
            return Err(Error::invalid("adversarial training needs a non-empty corpus"));
        }
        if gen.vocab_size() != disc.config.vocab_size {
            return Err(Error::Config(format!(
                "generator vocabulary {} differs from discriminator vocabulary {}",
                gen.vocab_size(),
                disc.config.vocab_size
            )));
        }
        let freeze = if config.freeze {
            FreezeSpec::head_and_last_decoder_block(&gen.config)
        } else {
            FreezeSpec::none()
        };
        let gen_opt = Optimizer::new(config.lr)
            .with_clip(config.clip_norm)
            .with_freeze(freeze, &gen.params)?;
        let disc_opt = Optimizer::new(config.lr).with_clip(config.clip_norm);
        let baseline = match config.mode {
            Mode::Pg => BaselineState::scalar(),
            Mode::Regs => BaselineState::per_position(config.sample_len()),
        };
        Ok(AdversarialTrainer {
            gen,
            disc,
            examples,
            config: config.clone(),
            gen_opt,
            disc_opt,
            baseline,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            round: 0,
        })
    }

    pub fn baseline(&self) -> &BaselineState {
        &self.baseline
    }

    fn draw_batch(&mut self) -> Vec<Example> {
        let n = self.examples.len();
        let k = self.config.batch_size.min(n);
        index::sample(&mut self.rng, n, k)
            .into_iter()
            .map(|i| self.examples[i].clone())
            .collect()
    }

    /// Fresh generator responses to the sources of `human`.
    fn machine_responses(&mut self, human: &[Example]) -> Result<Vec<Example>> {
        let seeds: Vec<u64> = human.iter().map(|_| self.rng.gen()).collect();
        let gen = &*self.gen;
        let (len, temperature) = (self.config.sample_len(), self.config.temperature);
        human
            .par_iter()
            .zip(&seeds)
            .map(|(e, &seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let y = sample_with_rng(gen, &e.source, len, temperature, &mut rng)?;
                Ok(Example {
                    source: e.source.clone(),
                    target: y.tokens,
                })
            })
            .collect()
    }

    /// One discriminator update against fresh machine negatives, full or
    /// prefix-sampled according to the mode.
    pub fn discriminator_step(&mut self) -> Result<DiscStepStats> {
        let human = self.draw_batch();
        let machine = self.machine_responses(&human)?;
        let kind = self.config.disc_loss;
        match self.config.mode {
            Mode::Pg => disc_update_full(self.disc, &mut self.disc_opt, &human, &machine, kind),
            Mode::Regs => disc_update_partial(self.disc, &mut self.disc_opt, &human, &machine, &mut self.rng, kind),
        }
    }

    /// Discriminator-only updates with the generator held fixed.
    pub fn warm_up_discriminator(&mut self, steps: usize) -> Result<Vec<DiscStepStats>> {
        (0..steps).map(|_| self.discriminator_step()).collect()
    }

    /// One generator update; returns the batch it used and the rewards.
    pub fn generator_step(&mut self) -> Result<(Vec<Example>, Vec<RewardSignal>)> {
        let batch = self.draw_batch();
        let sources: Vec<Vec<u32>> = batch.iter().map(|e| e.source.clone()).collect();
        let step = match self.config.mode {
            Mode::Pg => pg_generator_step,
            Mode::Regs => regs_generator_step,
        };
        let signals = step(
            self.gen,
            &mut self.gen_opt,
            self.disc,
            &sources,
            &mut self.baseline,
            &self.config,
            &mut self.rng,
        )?;
        Ok((batch, signals))
    }

    /// d_steps discriminator updates, then g_steps generator updates each
    /// followed by a teacher-forcing update with probability
    /// `teacher_forcing_ratio`.
    pub fn round(&mut self) -> Result<HistoryRow> {
        let start = Instant::now();
        self.round += 1;
        let mut acc = 0.0;
        for _ in 0..self.config.d_steps {
            acc += self.discriminator_step()?.accuracy;
        }
        let mut rewards = Vec::new();
        let mut sample = Vec::new();
        let mut tf_losses = Vec::new();
        for _ in 0..self.config.g_steps {
            let (batch, signals) = self.generator_step()?;
            if sample.is_empty() {
                sample = signals[0].tokens.clone();
            }
            rewards.extend(signals.iter().map(RewardSignal::final_reward));
            let gate: f64 = self.rng.gen();
            if gate < self.config.teacher_forcing_ratio {
                tf_losses.push(teacher_forcing_update(self.gen, &mut self.gen_opt, &batch)?);
            }
        }
        let mean = |v: &[f64]| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Ok(HistoryRow {
            round: self.round,
            mean_reward: mean(&rewards),
            disc_accuracy: if self.config.d_steps == 0 {
                f64::NAN
            } else {
                acc / self.config.d_steps as f64
            },
            tf_loss: (!tf_losses.is_empty()).then(|| mean(&tf_losses)),
            wall_ms: start.elapsed().as_millis(),
            sample,
        })
    }
}

/// Warm-up followed by `config.rounds` adversarial rounds. `on_round` sees
/// each row and the models after the round; an error from it or from any
/// update stops the run.
pub fn adversarial_train(
    gen: &mut GeneratorParams,
    disc: &mut DiscriminatorParams,
    examples: &[Example],
    config: &TrainConfig,
    pretrained: bool,
    mut on_round: impl FnMut(&HistoryRow, &GeneratorParams, &DiscriminatorParams) -> Result<()>,
) -> Result<Vec<HistoryRow>> {
    if !pretrained {
        log::warn!("adversarial training from a generator that was not pretrained");
    }
    let mut trainer = AdversarialTrainer::new(gen, disc, examples, config)?;
    trainer.warm_up_discriminator(config.disc_warmup_steps)?;
    let mut history = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let row = trainer.round()?;
        on_round(&row, trainer.gen, trainer.disc)?;
        history.push(row);
    }
    Ok(history)
}
