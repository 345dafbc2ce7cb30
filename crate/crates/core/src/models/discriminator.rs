//! Binary human/machine response classifier.
//!
//! The hierarchical variant encodes each utterance with a word-level GRU and
//! runs a context-level GRU over the history utterance vectors followed by
//! the response vector; a linear head on the final context state gives the
//! logit of `Q+({x, y})`. Because the word-level GRU reads the response left
//! to right, its state after `t` tokens is the encoding of the prefix `Y_t`,
//! which makes per-prefix scoring a single pass.
//!
//! The transformer variant concatenates `x EOS y` and applies the same head to
//! the mean-pooled output of a transformer encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::generator::check_against_specs;
use super::transformer;
use crate::corpus::EOS;
use crate::error::{Error, Result};
use crate::numerics::{gru_cell, sigmoid, GruVars, Init, ParamSet, ParamSpec, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscArchitecture {
    Hierarchical,
    Transformer,
}

impl std::str::FromStr for DiscArchitecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hierarchical" => Ok(DiscArchitecture::Hierarchical),
            "transformer" => Ok(DiscArchitecture::Transformer),
            other => Err(Error::Config(format!(
                "unknown discriminator `{other}` (expected hierarchical|transformer)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub arch: DiscArchitecture,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub layers: usize,
}

impl DiscriminatorConfig {
    pub fn hierarchical(vocab_size: usize) -> Self {
        DiscriminatorConfig {
            arch: DiscArchitecture::Hierarchical,
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            ff_dim: 0,
            heads: 0,
            layers: 1,
        }
    }

    pub fn transformer(vocab_size: usize) -> Self {
        DiscriminatorConfig {
            arch: DiscArchitecture::Transformer,
            vocab_size,
            embed_dim: 64,
            hidden_dim: 64,
            ff_dim: 128,
            heads: 4,
            layers: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        if self.arch == DiscArchitecture::Transformer
            && (self.heads == 0 || self.layers == 0 || self.ff_dim == 0 || self.embed_dim % self.heads != 0)
        {
            return Err(Error::Config(
                "transformer discriminator needs heads dividing embed_dim".into(),
            ));
        }
        Ok(())
    }

    fn head_width(&self) -> usize {
        match self.arch {
            DiscArchitecture::Hierarchical => self.hidden_dim,
            DiscArchitecture::Transformer => self.embed_dim,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = vec![ParamSpec::new("embed", &[self.vocab_size, self.embed_dim], Init::Uniform)];
        match self.arch {
            DiscArchitecture::Hierarchical => {
                specs.extend(GruVars::specs("utt.gru", self.embed_dim, self.hidden_dim));
                specs.extend(GruVars::specs("ctx.gru", self.hidden_dim, self.hidden_dim));
            }
            DiscArchitecture::Transformer => {
                specs.extend(transformer::encoder_specs("enc", self.layers, self.embed_dim, self.ff_dim));
            }
        }
        specs.push(ParamSpec::new("head.w", &[self.head_width(), 1], Init::Uniform));
        specs.push(ParamSpec::new("head.b", &[1], Init::Zeros));
        specs
    }

    pub fn to_meta(&self) -> Vec<f64> {
        let arch = match self.arch {
            DiscArchitecture::Hierarchical => 0.0,
            DiscArchitecture::Transformer => 1.0,
        };
        vec![
            arch,
            self.vocab_size as f64,
            self.embed_dim as f64,
            self.hidden_dim as f64,
            self.ff_dim as f64,
            self.heads as f64,
            self.layers as f64,
        ]
    }

    pub fn from_meta(meta: &[f64]) -> Result<Self> {
        if meta.len() != 7 {
            return Err(Error::invalid("discriminator metadata must have 7 fields"));
        }
        let arch = match meta[0] as u32 {
            0 => DiscArchitecture::Hierarchical,
            1 => DiscArchitecture::Transformer,
            other => return Err(Error::invalid(format!("unknown discriminator code {other}"))),
        };
        let cfg = DiscriminatorConfig {
            arch,
            vocab_size: meta[1] as usize,
            embed_dim: meta[2] as usize,
            hidden_dim: meta[3] as usize,
            ff_dim: meta[4] as usize,
            heads: meta[5] as usize,
            layers: meta[6] as usize,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
}

impl DiscriminatorParams {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamSet::initialize(&config.param_specs(), &mut rng)?;
        Ok(DiscriminatorParams { config, params })
    }

    pub fn from_parts(config: DiscriminatorConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        check_against_specs(&config.param_specs(), &params)?;
        Ok(DiscriminatorParams { config, params })
    }

    /// Sets the scoring head to zero so every score is exactly 0.5.
    pub fn zero_head(&mut self) {
        for name in ["head.w", "head.b"] {
            if let Some(t) = self.params.get_mut(name) {
                t.data_mut().fill(0.0);
            }
        }
    }

    fn check_ids(&self, ids: &[u32]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&id| {
                if (id as usize) < self.config.vocab_size {
                    Ok(id as usize)
                } else {
                    Err(Error::Index {
                        index: id as usize,
                        len: self.config.vocab_size,
                    })
                }
            })
            .collect()
    }

    fn check_pair(&self, x: &[u32], y: &[u32]) -> Result<(Vec<usize>, Vec<usize>)> {
        if x.is_empty() {
            return Err(Error::invalid("discriminator history must be non-empty"));
        }
        if y.is_empty() {
            return Err(Error::invalid("discriminator response must be non-empty"));
        }
        Ok((self.check_ids(x)?, self.check_ids(y)?))
    }
}

fn head(tape: &mut Tape, params: &ParamSet, features: Var) -> Result<Var> {
    let w = tape.param(params, "head.w")?;
    let b = tape.param(params, "head.b")?;
    let z = tape.matmul(features, w)?;
    tape.add(z, b)
}

/// Word-level GRU states after each token of `ids`.
fn utterance_states(tape: &mut Tape, disc: &DiscriminatorParams, ids: &[usize]) -> Result<Vec<Var>> {
    let p = &disc.params;
    let table = tape.param(p, "embed")?;
    let emb = tape.gather(table, ids)?;
    let gru = GruVars::register(tape, p, "utt.gru")?;
    let mut h = tape.leaf(Tensor::zeros(&[disc.config.hidden_dim]));
    let mut states = Vec::with_capacity(ids.len());
    for t in 0..ids.len() {
        let x = tape.row(emb, t)?;
        h = gru_cell(tape, x, h, &gru)?;
        states.push(h);
    }
    Ok(states)
}

/// Context-level state after consuming every history utterance.
fn history_context(tape: &mut Tape, disc: &DiscriminatorParams, x: &[usize]) -> Result<Var> {
    let ctx = GruVars::register(tape, &disc.params, "ctx.gru")?;
    let mut h = tape.leaf(Tensor::zeros(&[disc.config.hidden_dim]));
    for utt in x.split(|&t| t == EOS as usize).filter(|u| !u.is_empty()) {
        let states = utterance_states(tape, disc, utt)?;
        let last = *states.last().expect("non-empty utterance");
        h = gru_cell(tape, last, h, &ctx)?;
    }
    Ok(h)
}

fn transformer_logit(tape: &mut Tape, disc: &DiscriminatorParams, x: &[usize], y: &[usize]) -> Result<Var> {
    let ids: Vec<usize> = x
        .iter()
        .copied()
        .chain(std::iter::once(EOS as usize))
        .chain(y.iter().copied())
        .collect();
    let cfg = &disc.config;
    let emb = transformer::embed_tokens(tape, &disc.params, &ids)?;
    let enc = transformer::encode(tape, &disc.params, "enc", emb, cfg.layers, cfg.heads)?;
    let pooled = tape.mean_rows(enc)?;
    head(tape, &disc.params, pooled)
}

/// Logit of `Q+({x, y})` recorded on `tape`.
pub fn score_logit(tape: &mut Tape, disc: &DiscriminatorParams, x: &[u32], y: &[u32]) -> Result<Var> {
    let (x, y) = disc.check_pair(x, y)?;
    match disc.config.arch {
        DiscArchitecture::Hierarchical => {
            let h = history_context(tape, disc, &x)?;
            let states = utterance_states(tape, disc, &y)?;
            let ctx = GruVars::register(tape, &disc.params, "ctx.gru")?;
            let last = *states.last().expect("non-empty response");
            let top = gru_cell(tape, last, h, &ctx)?;
            head(tape, &disc.params, top)
        }
        DiscArchitecture::Transformer => transformer_logit(tape, disc, &x, &y),
    }
}

/// Logits of `Q+(x, Y_t)` for every prefix length `t = 1..=len(y)`.
pub fn prefix_logits(tape: &mut Tape, disc: &DiscriminatorParams, x: &[u32], y: &[u32]) -> Result<Vec<Var>> {
    let (x, y) = disc.check_pair(x, y)?;
    match disc.config.arch {
        DiscArchitecture::Hierarchical => {
            let h = history_context(tape, disc, &x)?;
            let states = utterance_states(tape, disc, &y)?;
            let ctx = GruVars::register(tape, &disc.params, "ctx.gru")?;
            states
                .into_iter()
                .map(|s| {
                    let top = gru_cell(tape, s, h, &ctx)?;
                    head(tape, &disc.params, top)
                })
                .collect()
        }
        DiscArchitecture::Transformer => (1..=y.len())
            .map(|t| transformer_logit(tape, disc, &x, &y[..t]))
            .collect(),
    }
}

/// `Q+({x, y})`, the probability that `y` is a human response to `x`.
/// `Q-({x, y}) = 1 - Q+`.
pub fn disc_score_full(disc: &DiscriminatorParams, x: &[u32], y: &[u32]) -> Result<f64> {
    let mut tape = Tape::new();
    let z = score_logit(&mut tape, disc, x, y)?;
    Ok(sigmoid(tape.value(z).item()))
}

/// `Q+(x, Y_t)` for each prefix `Y_t` of `y`.
pub fn disc_scores_partial(disc: &DiscriminatorParams, x: &[u32], y: &[u32]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let zs = prefix_logits(&mut tape, disc, x, y)?;
    Ok(zs.iter().map(|&z| sigmoid(tape.value(z).item())).collect())
}

/// Anything that can judge whether a response looks human.
pub trait ResponseScorer: Sync {
    fn score(&self, x: &[u32], y: &[u32]) -> Result<f64>;
}

impl ResponseScorer for DiscriminatorParams {
    fn score(&self, x: &[u32], y: &[u32]) -> Result<f64> {
        disc_score_full(self, x, y)
    }
}
