use crate::error::{Error, Result};

/// Learning rates tried for adversarial fine-tuning; the first is the default.
pub const LEARNING_RATE_GRID: [f64; 3] = [1e-3, 3e-4, 5e-5];

/// How generator samples are rewarded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// One discriminator score for the whole response.
    Pg,
    /// A discriminator score for every prefix of the response.
    Regs,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Pg => "pg",
            Mode::Regs => "regs",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pg" => Ok(Mode::Pg),
            "regs" => Ok(Mode::Regs),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected pg|regs)"))),
        }
    }
}

/// Discriminator objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscLoss {
    /// Binary cross-entropy on the logit.
    Bce,
    /// Squared error between the score and the {0, 1} label.
    Mse,
}

impl std::str::FromStr for DiscLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(DiscLoss::Bce),
            "mse" => Ok(DiscLoss::Mse),
            other => Err(Error::Config(format!("unknown disc_loss `{other}` (expected bce|mse)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// MLE pretraining epochs.
    pub epochs: usize,
    /// Adversarial rounds.
    pub rounds: usize,
    pub mode: Mode,
    pub teacher_forcing_ratio: f64,
    pub d_steps: usize,
    pub g_steps: usize,
    pub baseline_decay: f64,
    pub temperature: f64,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub seed: u64,
    /// Train only the output head and the last decoder block.
    pub freeze: bool,
    pub disc_loss: DiscLoss,
    /// Discriminator-only updates before the first adversarial round.
    pub disc_warmup_steps: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: LEARNING_RATE_GRID[0],
            batch_size: 16,
            epochs: 10,
            rounds: 20,
            mode: Mode::Regs,
            teacher_forcing_ratio: 0.5,
            d_steps: 1,
            g_steps: 1,
            baseline_decay: 0.95,
            temperature: 1.0,
            max_src_len: 30,
            max_tgt_len: 20,
            seed: 42,
            freeze: false,
            disc_loss: DiscLoss::Bce,
            disc_warmup_steps: 0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    /// Checks every field against its documented range.
    pub fn validate(&self) -> Result<()> {
        let range = |ok: bool, field: &str, range: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{field} must be in {range}")))
            }
        };
        range(self.lr > 0.0 && self.lr <= 1.0, "lr", "(0, 1]")?;
        range(self.batch_size >= 1, "batch_size", "[1, inf)")?;
        range(
            (0.0..=1.0).contains(&self.teacher_forcing_ratio),
            "teacher_forcing_ratio",
            "[0, 1]",
        )?;
        range(
            self.baseline_decay > 0.0 && self.baseline_decay < 1.0,
            "baseline_decay",
            "(0, 1)",
        )?;
        range(
            self.temperature > 0.0 && self.temperature.is_finite(),
            "temperature",
            "(0, inf)",
        )?;
        range(self.max_src_len >= 1, "max_src_len", "[1, inf)")?;
        range(self.max_tgt_len >= 1, "max_tgt_len", "[1, inf)")?;
        range(self.clip_norm > 0.0, "clip_norm", "(0, inf)")?;
        Ok(())
    }

    /// Token budget for sampled responses: content plus EOS.
    pub fn sample_len(&self) -> usize {
        self.max_tgt_len + 1
    }
}
