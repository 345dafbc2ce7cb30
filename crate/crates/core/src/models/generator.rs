//! Encoder-decoder generator policies.
//!
//! Two architectures share one contract: given source ids `x` and a response
//! `y`, step `i` yields a distribution over the vocabulary conditioned on `x`
//! and `BOS y_1 .. y_{i-1}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::transformer;
use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};
use crate::numerics::{
    gru_cell, AttentionVars, GruVars, Init, ParamSet, ParamSpec, Tape, Tensor, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Seq2Seq,
    Transformer,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Seq2Seq => "seq2seq",
            Architecture::Transformer => "transformer",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq2seq" => Ok(Architecture::Seq2Seq),
            "transformer" => Ok(Architecture::Transformer),
            other => Err(Error::Config(format!(
                "unknown architecture `{other}` (expected seq2seq|transformer)"
            ))),
        }
    }
}

/// Generator sizing.
///
/// For `Seq2Seq`, `embed_dim` is the token embedding width and `hidden_dim`
/// the GRU width; `layers` GRU layers are stacked in both encoder and decoder.
/// For `Transformer`, `embed_dim` is the model width, `ff_dim` the
/// feed-forward width, and `layers` counts both encoder and decoder blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub arch: Architecture,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub layers: usize,
}

impl GeneratorConfig {
    pub fn seq2seq(vocab_size: usize) -> Self {
        GeneratorConfig {
            arch: Architecture::Seq2Seq,
            vocab_size,
            embed_dim: 64,
            hidden_dim: 128,
            ff_dim: 0,
            heads: 0,
            layers: 1,
        }
    }

    pub fn transformer(vocab_size: usize) -> Self {
        GeneratorConfig {
            arch: Architecture::Transformer,
            vocab_size,
            embed_dim: 64,
            hidden_dim: 64,
            ff_dim: 128,
            heads: 4,
            layers: 2,
        }
    }

    pub fn for_arch(arch: Architecture, vocab_size: usize) -> Self {
        match arch {
            Architecture::Seq2Seq => Self::seq2seq(vocab_size),
            Architecture::Transformer => Self::transformer(vocab_size),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size == 0 || self.embed_dim == 0 || self.layers == 0 {
            return bad("generator sizes must be positive");
        }
        match self.arch {
            Architecture::Seq2Seq if self.hidden_dim == 0 => bad("hidden_dim must be positive"),
            Architecture::Transformer
                if self.heads == 0 || self.ff_dim == 0 || self.embed_dim % self.heads != 0 =>
            {
                bad("transformer needs heads dividing embed_dim and a positive ff_dim")
            }
            _ => Ok(()),
        }
    }

    /// Fixed-order numeric encoding used in checkpoints.
    pub fn to_meta(&self) -> Vec<f64> {
        let arch = match self.arch {
            Architecture::Seq2Seq => 0.0,
            Architecture::Transformer => 1.0,
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
            return Err(Error::invalid("generator metadata must have 7 fields"));
        }
        let arch = match meta[0] as u32 {
            0 => Architecture::Seq2Seq,
            1 => Architecture::Transformer,
            other => return Err(Error::invalid(format!("unknown architecture code {other}"))),
        };
        let cfg = GeneratorConfig {
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

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (v, e, h) = (self.vocab_size, self.embed_dim, self.hidden_dim);
        let mut specs = vec![ParamSpec::new("embed", &[v, e], Init::Uniform)];
        match self.arch {
            Architecture::Seq2Seq => {
                for l in 0..self.layers {
                    let d_in = if l == 0 { e } else { h };
                    specs.extend(GruVars::specs(&format!("enc.gru{l}"), d_in, h));
                }
                for l in 0..self.layers {
                    let d_in = if l == 0 { e + h } else { h };
                    specs.extend(GruVars::specs(&format!("dec.gru{l}"), d_in, h));
                }
                specs.extend(AttentionVars::specs("dec.attn", h, h, h));
                specs.push(ParamSpec::new("head.w", &[2 * h, v], Init::Uniform));
            }
            Architecture::Transformer => {
                specs.extend(transformer::encoder_specs("enc", self.layers, e, self.ff_dim));
                specs.extend(transformer::decoder_specs("dec", self.layers, e, self.ff_dim));
                specs.push(ParamSpec::new("head.w", &[e, v], Init::Uniform));
            }
        }
        specs.push(ParamSpec::new("head.b", &[v], Init::Zeros));
        specs
    }

    /// Parameter-name prefix of the last decoder block.
    pub fn last_decoder_block(&self) -> String {
        match self.arch {
            Architecture::Seq2Seq => format!("dec.gru{}.", self.layers - 1),
            Architecture::Transformer => format!("dec.{}.", self.layers - 1),
        }
    }
}

/// A generator policy: sizing plus named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub config: GeneratorConfig,
    pub params: ParamSet,
}

pub(crate) fn check_against_specs(specs: &[ParamSpec], params: &ParamSet) -> Result<()> {
    if specs.len() != params.len() {
        return Err(Error::invalid(format!(
            "expected {} parameter tensors, found {}",
            specs.len(),
            params.len()
        )));
    }
    for s in specs {
        let t = params.require(&s.name)?;
        if t.dims() != s.dims.as_slice() {
            return Err(Error::Shape {
                op: "parameter",
                lhs: s.dims.clone(),
                rhs: t.dims().to_vec(),
            });
        }
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("parameter `{}`", s.name)));
        }
    }
    Ok(())
}

impl GeneratorParams {
    /// Seeded initialization.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamSet::initialize(&config.param_specs(), &mut rng)?;
        Ok(GeneratorParams { config, params })
    }

    /// Wraps existing tensors after checking names and shapes.
    pub fn from_parts(config: GeneratorConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        check_against_specs(&config.param_specs(), &params)?;
        Ok(GeneratorParams { config, params })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn check_ids(&self, ids: &[u32], what: &str) -> Result<Vec<usize>> {
        if ids.is_empty() {
            return Err(Error::invalid(format!("{what} must be non-empty")));
        }
        ids.iter()
            .map(|&id| {
                let id = id as usize;
                if id >= self.config.vocab_size {
                    Err(Error::Index {
                        index: id,
                        len: self.config.vocab_size,
                    })
                } else {
                    Ok(id)
                }
            })
            .collect()
    }
}

/// Per-step probability vectors `p_1 .. p_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistributions {
    pub steps: Vec<Vec<f64>>,
}

impl StepDistributions {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Whether a response came from the corpus or from a generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Human,
    Machine,
}

/// A generated response with the untempered log-probability of each chosen token.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSequence {
    pub tokens: Vec<u32>,
    pub log_probs: Vec<f64>,
    pub origin: Origin,
}

impl SampledSequence {
    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    pub fn ends_with_eos(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}

enum DecoderState {
    Seq2Seq {
        memory: Var,
        keys: Var,
        hidden: Vec<Var>,
    },
    Transformer {
        memory: Var,
        prefix: Vec<usize>,
    },
}

fn seq2seq_encode(tape: &mut Tape, gen: &GeneratorParams, src: &[usize]) -> Result<DecoderState> {
    let p = &gen.params;
    let cfg = &gen.config;
    let table = tape.param(p, "embed")?;
    let embedded = tape.gather(table, src)?;
    let grus: Vec<GruVars> = (0..cfg.layers)
        .map(|l| GruVars::register(tape, p, &format!("enc.gru{l}")))
        .collect::<Result<_>>()?;
    let mut hidden: Vec<Var> = (0..cfg.layers)
        .map(|_| tape.leaf(Tensor::zeros(&[cfg.hidden_dim])))
        .collect();
    let mut tops = Vec::with_capacity(src.len());
    for t in 0..src.len() {
        let mut x = tape.row(embedded, t)?;
        for (h, gru) in hidden.iter_mut().zip(&grus) {
            *h = gru_cell(tape, x, *h, gru)?;
            x = *h;
        }
        tops.push(x);
    }
    let memory = tape.stack_rows(&tops)?;
    let attn = AttentionVars::register(tape, p, "dec.attn")?;
    let keys = attn.project_keys(tape, memory)?;
    Ok(DecoderState::Seq2Seq {
        memory,
        keys,
        hidden,
    })
}

fn begin(tape: &mut Tape, gen: &GeneratorParams, src: &[usize]) -> Result<DecoderState> {
    match gen.config.arch {
        Architecture::Seq2Seq => seq2seq_encode(tape, gen, src),
        Architecture::Transformer => {
            let x = transformer::embed_tokens(tape, &gen.params, src)?;
            let cfg = &gen.config;
            let memory = transformer::encode(tape, &gen.params, "enc", x, cfg.layers, cfg.heads)?;
            Ok(DecoderState::Transformer {
                memory,
                prefix: Vec::new(),
            })
        }
    }
}

/// Logits for the token following `prev`.
fn step(tape: &mut Tape, gen: &GeneratorParams, state: &mut DecoderState, prev: usize) -> Result<Var> {
    let p = &gen.params;
    let cfg = &gen.config;
    match state {
        DecoderState::Seq2Seq {
            memory,
            keys,
            hidden,
        } => {
            let attn = AttentionVars::register(tape, p, "dec.attn")?;
            let top = *hidden.last().expect("at least one layer");
            let (context, _) = attn.attend(tape, top, *keys, *memory)?;
            let table = tape.param(p, "embed")?;
            let emb = tape.gather(table, &[prev])?;
            let emb = tape.reshape(emb, &[cfg.embed_dim])?;
            let mut x = tape.concat(&[emb, context])?;
            for (l, h) in hidden.iter_mut().enumerate() {
                let gru = GruVars::register(tape, p, &format!("dec.gru{l}"))?;
                *h = gru_cell(tape, x, *h, &gru)?;
                x = *h;
            }
            let features = tape.concat(&[x, context])?;
            let w = tape.param(p, "head.w")?;
            let b = tape.param(p, "head.b")?;
            let logits = tape.matmul(features, w)?;
            tape.add(logits, b)
        }
        DecoderState::Transformer { memory, prefix } => {
            prefix.push(prev);
            let logits = transformer_logits(tape, gen, *memory, prefix)?;
            let last = tape.value(logits).rows() - 1;
            tape.row(logits, last)
        }
    }
}

/// Decoder logits `[len(inputs), V]` for the transformer given encoder memory.
fn transformer_logits(tape: &mut Tape, gen: &GeneratorParams, memory: Var, inputs: &[usize]) -> Result<Var> {
    let cfg = &gen.config;
    let x = transformer::embed_tokens(tape, &gen.params, inputs)?;
    let hidden = transformer::decode(tape, &gen.params, "dec", x, memory, cfg.layers, cfg.heads)?;
    let w = tape.param(&gen.params, "head.w")?;
    let b = tape.param(&gen.params, "head.b")?;
    let logits = tape.matmul(hidden, w)?;
    tape.add_row(logits, b)
}

/// Teacher-forced log-probability vectors, one `[V]` node per position of `y`.
pub fn step_log_probs(tape: &mut Tape, gen: &GeneratorParams, x: &[u32], y: &[u32]) -> Result<Vec<Var>> {
    let src = gen.check_ids(x, "source")?;
    let tgt = gen.check_ids(y, "target")?;
    let mut state = begin(tape, gen, &src)?;
    let inputs: Vec<usize> = std::iter::once(BOS as usize)
        .chain(tgt[..tgt.len() - 1].iter().copied())
        .collect();
    match &mut state {
        DecoderState::Transformer { memory, .. } => {
            let logits = transformer_logits(tape, gen, *memory, &inputs)?;
            let log_probs = tape.log_softmax(logits)?;
            (0..inputs.len()).map(|i| tape.row(log_probs, i)).collect()
        }
        DecoderState::Seq2Seq { .. } => inputs
            .iter()
            .map(|&prev| {
                let logits = step(tape, gen, &mut state, prev)?;
                tape.log_softmax(logits)
            })
            .collect(),
    }
}

/// Teacher-forced distributions for `y` given `x`.
pub fn decode_teacher_forced(gen: &GeneratorParams, x: &[u32], y: &[u32]) -> Result<StepDistributions> {
    let mut tape = Tape::new();
    let steps = step_log_probs(&mut tape, gen, x, y)?;
    Ok(StepDistributions {
        steps: steps
            .iter()
            .map(|&v| tape.value(v).data().iter().map(|lp| lp.exp()).collect())
            .collect(),
    })
}

/// [`decode_teacher_forced`] restricted to the transformer architecture.
pub fn transformer_forward(gen: &GeneratorParams, x: &[u32], y: &[u32]) -> Result<StepDistributions> {
    if gen.config.arch != Architecture::Transformer {
        return Err(Error::invalid("transformer_forward needs a transformer generator"));
    }
    decode_teacher_forced(gen, x, y)
}

/// `Σ_i log p_i[y_i]`.
pub fn sequence_log_prob(dists: &StepDistributions, y: &[u32]) -> Result<f64> {
    if dists.len() != y.len() {
        return Err(Error::Shape {
            op: "sequence_log_prob",
            lhs: vec![dists.len()],
            rhs: vec![y.len()],
        });
    }
    dists
        .steps
        .iter()
        .zip(y)
        .map(|(p, &t)| {
            p.get(t as usize).map(|v| v.ln()).ok_or(Error::Index {
                index: t as usize,
                len: p.len(),
            })
        })
        .sum()
}

/// Incremental decoder over one source sequence.
pub struct DecoderSession<'g> {
    gen: &'g GeneratorParams,
    tape: Tape,
    state: DecoderState,
}

impl<'g> DecoderSession<'g> {
    pub fn new(gen: &'g GeneratorParams, x: &[u32]) -> Result<Self> {
        let src = gen.check_ids(x, "source")?;
        let mut tape = Tape::new();
        let state = begin(&mut tape, gen, &src)?;
        Ok(DecoderSession { gen, tape, state })
    }

    /// Logits for the next token after feeding `prev` (BOS first).
    pub fn next_logits(&mut self, prev: u32) -> Result<Vec<f64>> {
        let prev = self.gen.check_ids(&[prev], "token")?[0];
        let v = step(&mut self.tape, self.gen, &mut self.state, prev)?;
        Ok(self.tape.value(v).data().to_vec())
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v - lse).collect()
}

/// Lowest index among the maximal entries.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws from `softmax(logits / temperature)`.
fn draw(logits: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        cumulative += w;
        if u < cumulative {
            return i;
        }
    }
    last_positive
}

fn generate(
    gen: &GeneratorParams,
    x: &[u32],
    max_len: usize,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> Result<SampledSequence> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let mut session = DecoderSession::new(gen, x)?;
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut log_probs = Vec::new();
    while tokens.len() < max_len {
        let logits = session.next_logits(prev)?;
        let tok = choose(&logits);
        log_probs.push(log_softmax(&logits)[tok]);
        tokens.push(tok as u32);
        if tok as u32 == EOS {
            break;
        }
        prev = tok as u32;
    }
    Ok(SampledSequence {
        tokens,
        log_probs,
        origin: Origin::Machine,
    })
}

/// Ancestral sampling at `temperature`, stopping at EOS or `max_len` tokens.
pub fn sample_with_rng(
    gen: &GeneratorParams,
    x: &[u32],
    max_len: usize,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampledSequence> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    generate(gen, x, max_len, |logits| draw(logits, temperature, rng))
}

pub fn sample_sequence(
    gen: &GeneratorParams,
    x: &[u32],
    max_len: usize,
    temperature: f64,
    seed: u64,
) -> Result<SampledSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with_rng(gen, x, max_len, temperature, &mut rng)
}

/// Per-step argmax with lowest-id tie-breaking.
pub fn greedy_decode(gen: &GeneratorParams, x: &[u32], max_len: usize) -> Result<SampledSequence> {
    generate(gen, x, max_len, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn draw_never_picks_zero_weight_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let t = draw(&[0.0, 5.0, 0.0], 1e-6, &mut rng);
            assert_eq!(t, 1);
        }
    }

    #[test]
    fn meta_roundtrip() {
        for cfg in [GeneratorConfig::seq2seq(30), GeneratorConfig::transformer(17)] {
            assert_eq!(GeneratorConfig::from_meta(&cfg.to_meta()).unwrap(), cfg);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = GeneratorConfig::transformer(10);
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        assert!("mc".parse::<Architecture>().is_err());
    }

    #[test]
    fn from_parts_checks_shapes() {
        let g = GeneratorParams::new(GeneratorConfig::seq2seq(8), 1).unwrap();
        assert!(GeneratorParams::from_parts(g.config, g.params.clone()).is_ok());
        let mut bad = g.params.clone();
        bad.insert("head.b", Tensor::zeros(&[9]));
        assert!(GeneratorParams::from_parts(g.config, bad).is_err());
    }

    #[test]
    fn rejects_out_of_vocab_ids() {
        let g = GeneratorParams::new(GeneratorConfig::seq2seq(8), 1).unwrap();
        assert!(matches!(
            decode_teacher_forced(&g, &[4], &[8]),
            Err(Error::Index { index: 8, len: 8 })
        ));
        assert!(decode_teacher_forced(&g, &[4], &[]).is_err());
    }

    #[test]
    fn sequence_log_prob_cases() {
        let certain = StepDistributions {
            steps: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        };
        assert_eq!(sequence_log_prob(&certain, &[1, 0]).unwrap(), 0.0);
        let v = 5;
        let uniform = StepDistributions {
            steps: vec![vec![1.0 / v as f64; v]; 3],
        };
        let lp = sequence_log_prob(&uniform, &[0, 4, 2]).unwrap();
        assert!((lp - 3.0 * (1.0 / v as f64).ln()).abs() < 1e-12);
        assert!(sequence_log_prob(&uniform, &[0]).is_err());
    }
}
