use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Example, EOS};
use crate::error::{Error, Result};
use crate::models::{greedy_decode, sample_with_rng, GeneratorParams, ResponseScorer};

/// A history with a human response and a generated one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelledPair {
    pub history: Vec<u32>,
    pub human: Vec<u32>,
    pub machine: Vec<u32>,
}

/// Accuracy over the 2N balanced labels; a response is judged human iff
/// its score is strictly above 0.5.
pub fn balanced_accuracy(disc: &impl ResponseScorer, pairs: &[LabelledPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no test pairs"));
    }
    let correct: Vec<usize> = pairs
        .par_iter()
        .map(|p| {
            let human_ok = disc.score(&p.history, &p.human)? > 0.5;
            let machine_ok = disc.score(&p.history, &p.machine)? <= 0.5;
            Ok(human_ok as usize + machine_ok as usize)
        })
        .collect::<Result<_>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / (2 * pairs.len()) as f64)
}

/// How hypotheses are produced from the generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

/// One response per example, in example order. Sampled responses use
/// per-example seeds drawn from `seed`.
pub fn generate_responses(
    gen: &GeneratorParams,
    examples: &[Example],
    max_len: usize,
    decoding: Decoding,
) -> Result<Vec<Vec<u32>>> {
    match decoding {
        Decoding::Greedy => examples
            .par_iter()
            .map(|e| Ok(greedy_decode(gen, &e.source, max_len)?.tokens))
            .collect(),
        Decoding::Sample { temperature, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seeds: Vec<u64> = examples.iter().map(|_| rng.gen()).collect();
            examples
                .par_iter()
                .zip(&seeds)
                .map(|(e, &s)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    Ok(sample_with_rng(gen, &e.source, max_len, temperature, &mut rng)?.tokens)
                })
                .collect()
        }
    }
}

/// Scores each human response against one response sampled (temperature 1,
/// seeded) from the generator.
pub fn adversarial_accuracy(
    disc: &impl ResponseScorer,
    gen: &GeneratorParams,
    test: &[Example],
    max_len: usize,
    seed: u64,
) -> Result<f64> {
    let machine = generate_responses(
        gen,
        test,
        max_len,
        Decoding::Sample {
            temperature: 1.0,
            seed,
        },
    )?;
    let pairs: Vec<LabelledPair> = test
        .iter()
        .zip(machine)
        .map(|(e, m)| LabelledPair {
            history: e.source.clone(),
            human: e.target.clone(),
            machine: m,
        })
        .collect();
    balanced_accuracy(disc, &pairs)
}

/// Drops a trailing EOS.
pub fn strip_eos(tokens: &[u32]) -> &[u32] {
    match tokens.last() {
        Some(&EOS) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}
