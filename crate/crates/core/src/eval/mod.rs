//! Corpus BLEU, Dist-n, adversarial accuracy, and report rendering.

mod adversarial;
mod metrics;
mod report;

pub use adversarial::{
    adversarial_accuracy, balanced_accuracy, generate_responses, strip_eos, Decoding, LabelledPair,
};
pub use metrics::{corpus_bleu, dist_n, BLEU_SMOOTHING, MAX_BLEU_ORDER};
pub use report::{emit_report, parse_csv_report, MetricReport, ReportFormat, REPORT_COLUMNS};

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::models::{GeneratorParams, ResponseScorer};

/// A history, its reference response and a generated hypothesis, all
/// without EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalTriple {
    pub history: Vec<u32>,
    pub reference: Vec<u32>,
    pub hypothesis: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalCorpus {
    triples: Vec<EvalTriple>,
}

impl EvalCorpus {
    pub fn new(triples: Vec<EvalTriple>) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::invalid("evaluation corpus is empty"));
        }
        Ok(EvalCorpus { triples })
    }

    /// Hypotheses decoded from `gen` for each example.
    pub fn decode(gen: &GeneratorParams, examples: &[Example], max_len: usize, decoding: Decoding) -> Result<Self> {
        let hyps = generate_responses(gen, examples, max_len, decoding)?;
        Self::new(
            examples
                .iter()
                .zip(hyps)
                .map(|(e, h)| EvalTriple {
                    history: e.source.clone(),
                    reference: strip_eos(&e.target).to_vec(),
                    hypothesis: strip_eos(&h).to_vec(),
                })
                .collect(),
        )
    }

    pub fn triples(&self) -> &[EvalTriple] {
        &self.triples
    }

    pub fn hypotheses(&self) -> Vec<Vec<u32>> {
        self.triples.iter().map(|t| t.hypothesis.clone()).collect()
    }
}

/// Corpus BLEU of the hypotheses against their references.
pub fn bleu(corpus: &EvalCorpus, max_n: usize) -> Result<f64> {
    corpus_bleu(
        corpus
            .triples
            .iter()
            .map(|t| (t.reference.as_slice(), t.hypothesis.as_slice())),
        max_n,
    )
}

/// Dist-n with a value of 0 when no hypothesis has `n` tokens.
fn dist_or_zero(hyps: &[Vec<u32>], n: usize) -> f64 {
    dist_n(hyps, n).unwrap_or(0.0)
}

/// Full report: greedy hypotheses for BLEU and Dist-n, seeded samples for
/// adversarial accuracy.
pub fn evaluate(
    gen: &GeneratorParams,
    disc: &impl ResponseScorer,
    examples: &[Example],
    max_len: usize,
    seed: u64,
) -> Result<MetricReport> {
    let corpus = EvalCorpus::decode(gen, examples, max_len, Decoding::Greedy)?;
    let hyps = corpus.hypotheses();
    let mut bleus = [0.0; 4];
    for (n, b) in bleus.iter_mut().enumerate() {
        *b = bleu(&corpus, n + 1)?;
    }
    let report = MetricReport {
        dist1: dist_or_zero(&hyps, 1),
        dist2: dist_or_zero(&hyps, 2),
        bleu: bleus,
        adversarial_accuracy: adversarial_accuracy(disc, gen, examples, max_len, seed)?,
    };
    report.validate()?;
    Ok(report)
}
