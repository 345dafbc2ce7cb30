//! DailyDialog-style text ingestion, vocabulary, and padded batches.
//!
//! Input is one dialogue per line with utterances separated by `__eou__`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const EOU: &str = "__eou__";

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NUM_RESERVED: usize = 4;
pub const RESERVED_MARKERS: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>"];

pub const DEFAULT_WINDOW: usize = 2;

/// One normalized utterance: lowercase, whitespace-split tokens.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Utterance {
    tokens: Vec<String>,
}

impl Utterance {
    /// Normalizes raw text; `None` if nothing is left.
    pub fn parse(text: &str) -> Option<Self> {
        let tokens: Vec<String> = text
            .trim()
            .to_lowercase()
            .split_whitespace()
            .map(str::to_string)
            .collect();
        (!tokens.is_empty()).then_some(Utterance { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl std::fmt::Display for Utterance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

pub type Dialogue = Vec<Utterance>;

/// Splits one line on `__eou__`, dropping empty utterances.
pub fn parse_line(line: &str) -> Dialogue {
    line.split(EOU).filter_map(Utterance::parse).collect()
}

/// Parses a whole corpus; blank and degenerate lines are dropped.
pub fn parse_dialogues(text: &str) -> Vec<Dialogue> {
    text.lines()
        .map(parse_line)
        .filter(|d| !d.is_empty())
        .collect()
}

/// Like [`parse_dialogues`] but validates UTF-8 line by line.
pub fn parse_dialogue_bytes(bytes: &[u8]) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = std::str::from_utf8(raw).map_err(|e| Error::Decode {
            line: i + 1,
            message: format!("invalid UTF-8: {e}"),
        })?;
        let d = parse_line(line);
        if !d.is_empty() {
            out.push(d);
        }
    }
    Ok(out)
}

/// A response and the utterances preceding it (most recent last).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialoguePair {
    pub history: Vec<Utterance>,
    pub response: Utterance,
}

/// One pair per utterance after the first, with up to `window` utterances of history.
pub fn make_pairs(dialogue: &[Utterance], window: usize) -> Vec<DialoguePair> {
    let window = window.max(1);
    (1..dialogue.len())
        .map(|i| DialoguePair {
            history: dialogue[i.saturating_sub(window)..i].to_vec(),
            response: dialogue[i].clone(),
        })
        .collect()
}

/// Token ↔ id mapping with fixed reserved ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_freq` times, ranked by descending
    /// frequency then ascending token, truncated so the total size is at
    /// most `max_size`.
    pub fn build(pairs: &[DialoguePair], max_size: usize, min_freq: usize) -> Result<Self> {
        if max_size <= NUM_RESERVED {
            return Err(Error::Config(format!(
                "vocabulary size must exceed {NUM_RESERVED}, got {max_size}"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for pair in pairs {
            for u in pair.history.iter().chain(std::iter::once(&pair.response)) {
                for t in u.tokens() {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_freq)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - NUM_RESERVED);
        Self::from_tokens(
            RESERVED_MARKERS
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
                .collect(),
        )
    }

    /// Rebuilds a vocabulary from its id-ordered token list (reserved markers first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_RESERVED
            || tokens[..NUM_RESERVED]
                .iter()
                .zip(RESERVED_MARKERS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::invalid("vocabulary must start with the reserved markers"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        match self.index.get(token) {
            Some(&id) if id as usize >= NUM_RESERVED => id,
            _ => UNK,
        }
    }

    pub fn encode(&self, utterance: &Utterance) -> Vec<u32> {
        utterance.tokens().iter().map(|t| self.id(t)).collect()
    }

    /// Utterances joined with a single EOS between consecutive utterances.
    pub fn encode_history(&self, history: &[Utterance]) -> Vec<u32> {
        let mut out = Vec::new();
        for (i, u) in history.iter().enumerate() {
            if i > 0 {
                out.push(EOS);
            }
            out.extend(self.encode(u));
        }
        out
    }

    /// Maps ids back to tokens; reserved ids become their markers.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.tokens.get(id as usize).cloned().ok_or(Error::Index {
                    index: id as usize,
                    len: self.tokens.len(),
                })
            })
            .collect()
    }

    /// Text of a generated response: stops at the first EOS and drops PAD/BOS.
    pub fn decode_response(&self, ids: &[u32]) -> Result<String> {
        let content: Vec<u32> = ids
            .iter()
            .copied()
            .take_while(|&id| id != EOS)
            .filter(|&id| id != PAD && id != BOS)
            .collect();
        Ok(self.decode(&content)?.join(" "))
    }

    /// One token per line in id order.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Encoded training example: `source` is the EOS-joined history, `target` the
/// response content followed by EOS (no BOS).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

impl Example {
    /// Encodes a pair, keeping the most recent `max_src_len` history ids and
    /// the first `max_tgt_len` response ids.
    pub fn encode(vocab: &Vocabulary, pair: &DialoguePair, max_src_len: usize, max_tgt_len: usize) -> Self {
        let mut source = vocab.encode_history(&pair.history);
        if source.len() > max_src_len {
            source.drain(..source.len() - max_src_len);
        }
        if source.is_empty() {
            source.push(UNK);
        }
        let mut target = vocab.encode(&pair.response);
        target.truncate(max_tgt_len);
        target.push(EOS);
        Example { source, target }
    }

    /// Response ids without the trailing EOS.
    pub fn response_content(&self) -> &[u32] {
        match self.target.last() {
            Some(&EOS) => &self.target[..self.target.len() - 1],
            _ => &self.target,
        }
    }
}

/// Padded mini-batch. Target rows are `BOS content EOS PAD*`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub source: Vec<Vec<u32>>,
    pub source_lens: Vec<usize>,
    pub target: Vec<Vec<u32>>,
    pub target_lens: Vec<usize>,
}

impl Batch {
    pub fn from_examples(examples: &[Example]) -> Self {
        let src_width = examples.iter().map(|e| e.source.len()).max().unwrap_or(0);
        let tgt_width = examples.iter().map(|e| e.target.len() + 1).max().unwrap_or(0);
        let mut batch = Batch {
            source: Vec::with_capacity(examples.len()),
            source_lens: Vec::with_capacity(examples.len()),
            target: Vec::with_capacity(examples.len()),
            target_lens: Vec::with_capacity(examples.len()),
        };
        for e in examples {
            let mut s = e.source.clone();
            batch.source_lens.push(s.len());
            s.resize(src_width, PAD);
            batch.source.push(s);

            let mut t = Vec::with_capacity(tgt_width);
            t.push(BOS);
            t.extend_from_slice(&e.target);
            batch.target_lens.push(t.len());
            t.resize(tgt_width, PAD);
            batch.target.push(t);
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Unpadded rows.
    pub fn examples(&self) -> Vec<Example> {
        (0..self.len())
            .map(|i| Example {
                source: self.source[i][..self.source_lens[i]].to_vec(),
                target: self.target[i][1..self.target_lens[i]].to_vec(),
            })
            .collect()
    }
}

/// Seeded shuffle of pre-encoded examples into batches; the last partial batch is kept.
pub fn batch_examples(examples: &[Example], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .map(|idx| {
            let rows: Vec<Example> = idx.iter().map(|&i| examples[i].clone()).collect();
            Batch::from_examples(&rows)
        })
        .collect())
}

/// Encodes, truncates, shuffles and batches dialogue pairs.
pub fn batchify(
    vocab: &Vocabulary,
    pairs: &[DialoguePair],
    batch_size: usize,
    max_src_len: usize,
    max_tgt_len: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    let examples: Vec<Example> = pairs
        .iter()
        .map(|p| Example::encode(vocab, p, max_src_len, max_tgt_len))
        .collect();
    batch_examples(&examples, batch_size, seed)
}
