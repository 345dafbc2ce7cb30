//! Subcommand implementations.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use acgs::corpus::{make_pairs, parse_dialogue_bytes, DialoguePair, Example, Utterance, Vocabulary, EOU};
use acgs::diagnostics::{gradient_suite, GRADCHECK_TOLERANCE};
use acgs::eval::{emit_report, evaluate, ReportFormat};
use acgs::models::{greedy_decode, sample_sequence, Architecture, DiscriminatorParams, GeneratorParams};
use acgs::training::{adversarial_train, pretrain, TrainConfig};

use crate::checkpoint::{load_discriminator, load_generator, save_discriminator, save_generator};
use crate::config::{parse_config, RunConfig};

/// Offset between the generator seed and a fresh discriminator's seed.
const DISC_SEED_OFFSET: u64 = 0x5eed;

#[derive(Debug, Parser)]
#[command(name = "acgs", version, about = "Adversarial training of dialogue response generators")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the vocabulary and (history, response) pairs from a dialogue file.
    Prepare {
        input: PathBuf,
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Maximum-likelihood pretraining of a generator.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file, rewritten after every epoch.
        #[arg(long)]
        out: PathBuf,
    },
    /// Adversarial training against a discriminator.
    Advtrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Pretrained generator checkpoint.
        #[arg(long)]
        init: PathBuf,
        /// Existing discriminator checkpoint; a fresh one is created otherwise.
        #[arg(long)]
        disc_init: Option<PathBuf>,
        /// Directory for gen.ckpt, disc.ckpt and history.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// BLEU, Dist-n and adversarial accuracy on held-out dialogues.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        disc_ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print one response to a prompt (utterances separated by __eou__).
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, conflicts_with = "temperature")]
        greedy: bool,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of every training loss.
    Gradcheck {
        #[arg(long)]
        arch: Architecture,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => Ok(parse_config(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn load_pairs(path: &Path, window: usize) -> anyhow::Result<Vec<DialoguePair>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let dialogues = parse_dialogue_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    let pairs: Vec<DialoguePair> = dialogues.iter().flat_map(|d| make_pairs(d, window)).collect();
    if pairs.is_empty() {
        bail!("{} contains no dialogue pairs", path.display());
    }
    Ok(pairs)
}

fn encode_all(vocab: &Vocabulary, pairs: &[DialoguePair], train: &TrainConfig) -> Vec<Example> {
    pairs
        .iter()
        .map(|p| Example::encode(vocab, p, train.max_src_len, train.max_tgt_len))
        .collect()
}

fn format_history(pair: &DialoguePair) -> String {
    pair.history
        .iter()
        .map(Utterance::to_string)
        .collect::<Vec<_>>()
        .join(&format!(" {EOU} "))
}

fn prepare(input: &Path, out_dir: &Path, config: &RunConfig) -> anyhow::Result<()> {
    let pairs = load_pairs(input, config.data.window)?;
    let vocab = Vocabulary::build(&pairs, config.data.vocab_size, config.data.min_freq)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("vocab.txt"), vocab.to_file_string())?;
    let mut tsv = String::new();
    for p in &pairs {
        tsv.push_str(&format_history(p));
        tsv.push('\t');
        tsv.push_str(&p.response.to_string());
        tsv.push('\n');
    }
    fs::write(out_dir.join("pairs.tsv"), tsv)?;
    println!("pairs\t{}", pairs.len());
    println!("vocab\t{}", vocab.len());
    Ok(())
}

fn run_pretrain(config: &RunConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let pairs = load_pairs(data, config.data.window)?;
    let vocab = Vocabulary::build(&pairs, config.data.vocab_size, config.data.min_freq)?;
    let examples = encode_all(&vocab, &pairs, &config.train);
    let mut gen = GeneratorParams::new(config.model.generator(vocab.len()), config.train.seed)?;
    save_generator(out, &vocab, &gen)?;
    pretrain(&mut gen, &examples, &config.train, |stats, gen| {
        println!("{}\t{:.6}\t{:.6}", stats.epoch, stats.loss, stats.accuracy);
        save_generator(out, &vocab, gen).map_err(|e| acgs::Error::Invalid(e.to_string()))?;
        Ok(ControlFlow::Continue(()))
    })?;
    Ok(())
}

fn run_advtrain(
    config: &RunConfig,
    data: &Path,
    init: &Path,
    disc_init: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let (vocab, mut gen) = load_generator(init)?;
    let mut disc = match disc_init {
        Some(p) => {
            let (disc_vocab, disc) = load_discriminator(p)?;
            if disc_vocab != vocab {
                bail!("discriminator vocabulary differs from the generator's");
            }
            disc
        }
        None => DiscriminatorParams::new(
            config.model.discriminator(vocab.len()),
            config.train.seed.wrapping_add(DISC_SEED_OFFSET),
        )?,
    };
    let pairs = load_pairs(data, config.data.window)?;
    let examples = encode_all(&vocab, &pairs, &config.train);

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let gen_path = out.join("gen.ckpt");
    let disc_path = out.join("disc.ckpt");
    let history_path = out.join("history.tsv");
    save_generator(&gen_path, &vocab, &gen)?;
    save_discriminator(&disc_path, &vocab, &disc)?;
    let mut history = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&history_path)
        .with_context(|| format!("creating {}", history_path.display()))?;

    let io_err = |e: &dyn std::fmt::Display| acgs::Error::Invalid(e.to_string());
    adversarial_train(&mut gen, &mut disc, &examples, &config.train, true, |row, gen, disc| {
        let line = row.to_line();
        println!("{line}");
        writeln!(history, "{line}").map_err(|e| io_err(&e))?;
        history.flush().map_err(|e| io_err(&e))?;
        if let Ok(text) = vocab.decode_response(&row.sample) {
            log::info!("round {} sample: {text}", row.round);
        }
        save_generator(&gen_path, &vocab, gen).map_err(|e| io_err(&e))?;
        save_discriminator(&disc_path, &vocab, disc).map_err(|e| io_err(&e))?;
        Ok(())
    })?;
    Ok(())
}

fn run_evaluate(
    ckpt: &Path,
    disc_ckpt: &Path,
    data: &Path,
    format: ReportFormat,
    config: &RunConfig,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let (vocab, gen) = load_generator(ckpt)?;
    let (disc_vocab, disc) = load_discriminator(disc_ckpt)?;
    if disc_vocab != vocab {
        bail!("discriminator vocabulary differs from the generator's");
    }
    let pairs = load_pairs(data, config.data.window)?;
    let examples = encode_all(&vocab, &pairs, &config.train);
    let seed = seed.unwrap_or(config.train.seed);
    let report = evaluate(&gen, &disc, &examples, config.train.sample_len(), seed)?;
    print!("{}", emit_report(&report, format));
    Ok(())
}

fn run_sample(
    ckpt: &Path,
    prompt: &str,
    greedy: bool,
    temperature: Option<f64>,
    seed: Option<u64>,
    config: &RunConfig,
) -> anyhow::Result<()> {
    let (vocab, gen) = load_generator(ckpt)?;
    let history: Vec<Utterance> = prompt.split(EOU).filter_map(Utterance::parse).collect();
    if history.is_empty() {
        bail!("prompt is empty");
    }
    let pair = DialoguePair {
        response: history[history.len() - 1].clone(),
        history,
    };
    let source = Example::encode(&vocab, &pair, config.train.max_src_len, config.train.max_tgt_len).source;
    let max_len = config.train.sample_len();
    let tokens = if greedy {
        greedy_decode(&gen, &source, max_len)?.tokens
    } else {
        let temperature = temperature.unwrap_or(config.train.temperature);
        sample_sequence(&gen, &source, max_len, temperature, seed.unwrap_or(config.train.seed))?.tokens
    };
    println!("{}", vocab.decode_response(&tokens)?);
    Ok(())
}

fn run_gradcheck(arch: Architecture, seed: u64) -> anyhow::Result<i32> {
    let outcomes = gradient_suite(arch, seed)?;
    let mut worst = 0.0f64;
    for o in &outcomes {
        println!(
            "{}\t{:.3e}\t{}",
            o.name,
            o.max_rel_err,
            if o.passed() { "ok" } else { "FAIL" }
        );
        worst = worst.max(o.max_rel_err);
    }
    println!("max\t{worst:.3e}\ttolerance {GRADCHECK_TOLERANCE:e}");
    Ok(if outcomes.iter().all(|o| o.passed()) { 0 } else { 1 })
}

/// Runs a parsed command; the value is the process exit code.
pub fn execute(command: Command) -> anyhow::Result<i32> {
    match command {
        Command::Prepare { input, out_dir, config } => {
            prepare(&input, &out_dir, &load_config(config.as_deref())?)?;
        }
        Command::Pretrain { config, data, out } => {
            run_pretrain(&load_config(config.as_deref())?, &data, &out)?;
        }
        Command::Advtrain {
            config,
            data,
            init,
            disc_init,
            out,
        } => {
            run_advtrain(&load_config(config.as_deref())?, &data, &init, disc_init.as_deref(), &out)?;
        }
        Command::Evaluate {
            ckpt,
            disc_ckpt,
            data,
            format,
            config,
            seed,
        } => {
            run_evaluate(&ckpt, &disc_ckpt, &data, format, &load_config(config.as_deref())?, seed)?;
        }
        Command::Sample {
            ckpt,
            prompt,
            greedy,
            temperature,
            seed,
            config,
        } => {
            run_sample(&ckpt, &prompt, greedy, temperature, seed, &load_config(config.as_deref())?)?;
        }
        Command::Gradcheck { arch, seed } => return run_gradcheck(arch, seed),
    }
    Ok(0)
}
