use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::error::{Error, Result};

pub const BLEU_SMOOTHING: f64 = 1e-9;
pub const MAX_BLEU_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over `(reference, hypothesis)` pairs with uniform weights up
/// to `max_n`. An order with no clipped matches uses `(m + ε) / (t + ε)`.
pub fn corpus_bleu<'a, T: Eq + Hash + 'a>(
    pairs: impl IntoIterator<Item = (&'a [T], &'a [T])>,
    max_n: usize,
) -> Result<f64> {
    if !(1..=MAX_BLEU_ORDER).contains(&max_n) {
        return Err(Error::invalid(format!("BLEU order {max_n} outside 1..=4")));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len, mut seen) = (0usize, 0usize, 0usize);
    for (reference, hypothesis) in pairs {
        seen += 1;
        hyp_len += hypothesis.len();
        ref_len += reference.len();
        for n in 1..=max_n {
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(hypothesis, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += hypothesis.len().saturating_sub(n - 1);
        }
    }
    if seen == 0 {
        return Err(Error::invalid("BLEU of an empty corpus"));
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let log_mean = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| {
            let p = if m == 0 {
                (m as f64 + BLEU_SMOOTHING) / (t as f64 + BLEU_SMOOTHING)
            } else {
                m as f64 / t as f64
            };
            p.ln()
        })
        .sum::<f64>()
        / max_n as f64;
    let brevity = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok((brevity * log_mean.exp()).clamp(0.0, 1.0))
}

/// Distinct n-grams over all hypotheses divided by the total n-gram count.
pub fn dist_n<T: Eq + Hash>(hypotheses: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for h in hypotheses.iter().filter(|h| h.len() >= n) {
        for gram in h.windows(n) {
            unique.insert(gram);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid(format!("no {n}-grams in the hypotheses")));
    }
    Ok(unique.len() as f64 / total as f64)
}
