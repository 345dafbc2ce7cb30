//! `key = value` run configuration.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use acgs::corpus::DEFAULT_WINDOW;
use acgs::models::{Architecture, DiscArchitecture, DiscriminatorConfig, GeneratorConfig};
use acgs::training::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Model sizing; `None` keeps the architecture default.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub disc_arch: Option<DiscArchitecture>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub ff_dim: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Architecture::Seq2Seq,
            disc_arch: None,
            embed_dim: None,
            hidden_dim: None,
            ff_dim: None,
            heads: None,
            layers: None,
        }
    }
}

impl ModelConfig {
    pub fn generator(&self, vocab_size: usize) -> GeneratorConfig {
        let mut c = GeneratorConfig::for_arch(self.arch, vocab_size);
        c.embed_dim = self.embed_dim.unwrap_or(c.embed_dim);
        c.hidden_dim = self.hidden_dim.unwrap_or(c.hidden_dim);
        c.ff_dim = self.ff_dim.unwrap_or(c.ff_dim);
        c.heads = self.heads.unwrap_or(c.heads);
        c.layers = self.layers.unwrap_or(c.layers);
        c
    }

    /// Discriminator architecture, defaulting to the generator's family.
    pub fn discriminator_arch(&self) -> DiscArchitecture {
        self.disc_arch.unwrap_or(match self.arch {
            Architecture::Seq2Seq => DiscArchitecture::Hierarchical,
            Architecture::Transformer => DiscArchitecture::Transformer,
        })
    }

    pub fn discriminator(&self, vocab_size: usize) -> DiscriminatorConfig {
        match self.discriminator_arch() {
            DiscArchitecture::Hierarchical => DiscriminatorConfig::hierarchical(vocab_size),
            DiscArchitecture::Transformer => DiscriminatorConfig::transformer(vocab_size),
        }
    }
}

/// Corpus preparation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Maximum vocabulary size including the reserved markers.
    pub vocab_size: usize,
    pub min_freq: usize,
    /// History utterances per pair.
    pub window: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            vocab_size: 5000,
            min_freq: 1,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
}

pub const KEYS: &[&str] = &[
    "lr",
    "batch_size",
    "epochs",
    "rounds",
    "mode",
    "teacher_forcing_ratio",
    "d_steps",
    "g_steps",
    "baseline_decay",
    "temperature",
    "max_src_len",
    "max_tgt_len",
    "seed",
    "freeze",
    "disc_loss",
    "disc_warmup_steps",
    "clip_norm",
    "arch",
    "disc_arch",
    "embed_dim",
    "hidden_dim",
    "ff_dim",
    "heads",
    "layers",
    "vocab_size",
    "min_freq",
    "window",
];

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("invalid value `{value}`: {e}"))
}

fn in_range<T: PartialOrd + Copy>(v: T, ok: impl Fn(T) -> bool, range: &str) -> Result<T, String> {
    if ok(v) {
        Ok(v)
    } else {
        Err(format!("value out of range {range}"))
    }
}

fn at_least(value: &str, min: usize) -> Result<usize, String> {
    in_range(parse::<usize>(value)?, |v| v >= min, &format!("[{min}, inf)"))
}

fn unit_interval(value: &str, lo_open: bool, hi_open: bool) -> Result<f64, String> {
    let v: f64 = parse(value)?;
    let lo_ok = if lo_open { v > 0.0 } else { v >= 0.0 };
    let hi_ok = if hi_open { v < 1.0 } else { v <= 1.0 };
    let range = format!(
        "{}0, 1{}",
        if lo_open { "(" } else { "[" },
        if hi_open { ")" } else { "]" }
    );
    in_range(v, |_| lo_ok && hi_ok, &range)
}

fn positive(value: &str) -> Result<f64, String> {
    in_range(parse::<f64>(value)?, |v| v > 0.0 && v.is_finite(), "(0, inf)")
}

fn lowercase_enum<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        let m = &mut self.model;
        match key {
            "lr" => t.lr = unit_interval(value, true, false)?,
            "batch_size" => t.batch_size = at_least(value, 1)?,
            "epochs" => t.epochs = at_least(value, 0)?,
            "rounds" => t.rounds = at_least(value, 0)?,
            "mode" => t.mode = lowercase_enum(value)?,
            "teacher_forcing_ratio" => t.teacher_forcing_ratio = unit_interval(value, false, false)?,
            "d_steps" => t.d_steps = at_least(value, 0)?,
            "g_steps" => t.g_steps = at_least(value, 0)?,
            "baseline_decay" => t.baseline_decay = unit_interval(value, true, true)?,
            "temperature" => t.temperature = positive(value)?,
            "max_src_len" => t.max_src_len = at_least(value, 1)?,
            "max_tgt_len" => t.max_tgt_len = at_least(value, 1)?,
            "seed" => t.seed = parse(value)?,
            "freeze" => t.freeze = parse(value)?,
            "disc_loss" => t.disc_loss = lowercase_enum(value)?,
            "disc_warmup_steps" => t.disc_warmup_steps = at_least(value, 0)?,
            "clip_norm" => t.clip_norm = positive(value)?,
            "arch" => m.arch = lowercase_enum(value)?,
            "disc_arch" => m.disc_arch = Some(lowercase_enum(value)?),
            "embed_dim" => m.embed_dim = Some(at_least(value, 1)?),
            "hidden_dim" => m.hidden_dim = Some(at_least(value, 1)?),
            "ff_dim" => m.ff_dim = Some(at_least(value, 1)?),
            "heads" => m.heads = Some(at_least(value, 1)?),
            "layers" => m.layers = Some(at_least(value, 1)?),
            "vocab_size" => self.data.vocab_size = at_least(value, 5)?,
            "min_freq" => self.data.min_freq = at_least(value, 1)?,
            "window" => self.data.window = at_least(value, 1)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }
}

/// Parses configuration text. Blank lines and `#` comments are ignored;
/// omitted keys keep their defaults.
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut config = RunConfig::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| ConfigError::Line { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(err(format!("expected `key = value`, found `{content}`")));
        }
        if !seen.insert(key.to_string()) && KEYS.contains(&key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        config.set(key, value).map_err(|m| err(format!("{key}: {m}")))?;
    }
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}
