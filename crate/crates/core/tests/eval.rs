use acgs::corpus::{Example, EOS};
use acgs::diagnostics::{tiny_discriminator_config, tiny_generator_config};
use acgs::eval::{
    adversarial_accuracy, balanced_accuracy, bleu, corpus_bleu, dist_n, emit_report, evaluate,
    parse_csv_report, EvalCorpus, EvalTriple, LabelledPair, MetricReport, ReportFormat,
    BLEU_SMOOTHING,
};
use acgs::models::{Architecture, DiscArchitecture, DiscriminatorParams, GeneratorParams, ResponseScorer};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn occurrences(tokens: &[u32], gram: &[u32]) -> usize {
    if gram.len() > tokens.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len())
        .filter(|&i| &tokens[i..i + gram.len()] == gram)
        .count()
}

/// Corpus BLEU by direct counting: every distinct hypothesis n-gram is
/// matched against the reference by scanning both sequences.
fn brute_force_bleu(pairs: &[(Vec<u32>, Vec<u32>)], max_n: usize) -> f64 {
    let c: usize = pairs.iter().map(|(_, h)| h.len()).sum();
    let r: usize = pairs.iter().map(|(rf, _)| rf.len()).sum();
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (mut m, mut t) = (0usize, 0usize);
        for (reference, hyp) in pairs {
            if hyp.len() < n {
                continue;
            }
            t += hyp.len() - n + 1;
            let mut distinct: Vec<&[u32]> = Vec::new();
            for i in 0..=hyp.len() - n {
                let g = &hyp[i..i + n];
                if !distinct.contains(&g) {
                    distinct.push(g);
                }
            }
            for g in distinct {
                m += occurrences(hyp, g).min(occurrences(reference, g));
            }
        }
        let p = if m == 0 {
            BLEU_SMOOTHING / (t as f64 + BLEU_SMOOTHING)
        } else {
            m as f64 / t as f64
        };
        log_sum += p.ln();
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    (bp * (log_sum / max_n as f64).exp()).min(1.0)
}

fn brute_force_dist(hyps: &[Vec<u32>], n: usize) -> Option<f64> {
    let grams: Vec<&[u32]> = hyps.iter().flat_map(|h| h.windows(n)).collect();
    if grams.is_empty() {
        return None;
    }
    let unique: std::collections::BTreeSet<&[u32]> = grams.iter().copied().collect();
    Some(unique.len() as f64 / grams.len() as f64)
}

fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<(Vec<u32>, Vec<u32>)> {
    let alphabet = rng.gen_range(2..7);
    let seq = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let len = rng.gen_range(0..9);
        (0..len).map(|_| rng.gen_range(0..alphabet)).collect()
    };
    (0..rng.gen_range(1..7)).map(|_| (seq(rng), seq(rng))).collect()
}

fn refs_hyps(pairs: &[(Vec<u32>, Vec<u32>)]) -> impl Iterator<Item = (&[u32], &[u32])> {
    pairs.iter().map(|(r, h)| (r.as_slice(), h.as_slice()))
}

#[test]
fn bleu_matches_brute_force_on_100_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let pairs = random_corpus(&mut rng);
        for n in 1..=4 {
            let got = corpus_bleu(refs_hyps(&pairs), n).unwrap();
            let want = brute_force_bleu(&pairs, n);
            assert!((got - want).abs() <= 1e-12, "trial {trial} n={n}: {got} vs {want}");
            assert!((0.0..=1.0).contains(&got));
        }
    }
}

#[test]
fn dist_matches_set_oracle_on_100_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let hyps: Vec<Vec<u32>> = random_corpus(&mut rng).into_iter().map(|(_, h)| h).collect();
        for n in 1..=2 {
            match brute_force_dist(&hyps, n) {
                Some(want) => assert!((dist_n(&hyps, n).unwrap() - want).abs() <= 1e-12),
                None => assert!(dist_n(&hyps, n).is_err()),
            }
        }
    }
}

proptest! {
    #[test]
    fn metrics_ignore_corpus_order(seed in 0u64..10_000, shuffle_seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = random_corpus(&mut rng);
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        for n in 1..=4 {
            let a = corpus_bleu(refs_hyps(&pairs), n).unwrap();
            let b = corpus_bleu(refs_hyps(&shuffled), n).unwrap();
            prop_assert!((a - b).abs() <= 1e-15);
        }
        let hyps: Vec<Vec<u32>> = pairs.iter().map(|(_, h)| h.clone()).collect();
        let shuffled_hyps: Vec<Vec<u32>> = shuffled.iter().map(|(_, h)| h.clone()).collect();
        for n in 1..=2 {
            prop_assert_eq!(dist_n(&hyps, n).ok(), dist_n(&shuffled_hyps, n).ok());
        }
    }
}

#[test]
fn hand_computed_metric_values() {
    let the = vec!["the", "the", "the"];
    let cat = vec!["the", "cat"];
    let b1 = corpus_bleu([(cat.as_slice(), the.as_slice())], 1).unwrap();
    assert!((b1 - 1.0 / 3.0).abs() < 1e-12);
    let same = [vec![4u32, 5, 6, 7], vec![8, 9]];
    for n in 1..=4 {
        let b = corpus_bleu(same.iter().map(|s| (s.as_slice(), s.as_slice())), n).unwrap();
        assert!((b - 1.0).abs() < 1e-12);
    }
    assert!(corpus_bleu([([1u32, 2].as_slice(), [3u32, 4].as_slice())], 2).unwrap() < 1e-8);
    assert_eq!(dist_n(&[vec!["a"; 4]], 1).unwrap(), 0.25);
    assert_eq!(dist_n(&[vec![1, 2, 3], vec![1, 2, 3]], 1).unwrap(), 0.5);
    assert_eq!(dist_n(&[vec![1, 2, 3, 4]], 2).unwrap(), 1.0);
}

#[test]
fn eval_corpus_bleu_uses_reference_and_hypothesis() {
    let corpus = EvalCorpus::new(vec![
        EvalTriple {
            history: vec![4],
            reference: vec![5, 6, 7],
            hypothesis: vec![5, 6, 7],
        },
        EvalTriple {
            history: vec![8],
            reference: vec![5, 5],
            hypothesis: vec![5, 6],
        },
    ])
    .unwrap();
    let direct = corpus_bleu([([5u32, 6, 7].as_slice(), [5u32, 6, 7].as_slice()), ([5, 5].as_slice(), [5, 6].as_slice())], 2);
    assert_eq!(bleu(&corpus, 2).unwrap(), direct.unwrap());
    assert!(EvalCorpus::new(vec![]).is_err());
}

/// Judges by lookup in the known human responses.
struct Oracle(Vec<Vec<u32>>);

impl ResponseScorer for Oracle {
    fn score(&self, _x: &[u32], y: &[u32]) -> acgs::Result<f64> {
        Ok(if self.0.iter().any(|h| h == y) { 0.99 } else { 0.01 })
    }
}

struct Constant(f64);

impl ResponseScorer for Constant {
    fn score(&self, _x: &[u32], _y: &[u32]) -> acgs::Result<f64> {
        Ok(self.0)
    }
}

fn labelled_pairs(seed: u64, n: usize) -> Vec<LabelledPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| LabelledPair {
            history: vec![rng.gen_range(4..20)],
            human: vec![100 + i as u32, EOS],
            machine: vec![rng.gen_range(4..20), rng.gen_range(4..20), EOS],
        })
        .collect()
}

#[test]
fn oracle_and_constant_discriminators() {
    for seed in 0..20 {
        let pairs = labelled_pairs(seed, 1 + seed as usize);
        let oracle = Oracle(pairs.iter().map(|p| p.human.clone()).collect());
        assert_eq!(balanced_accuracy(&oracle, &pairs).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&Constant(0.5), &pairs).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&Constant(0.7), &pairs).unwrap(), 0.5);
        let inverted = Oracle(pairs.iter().map(|p| p.machine.clone()).collect());
        assert_eq!(balanced_accuracy(&inverted, &pairs).unwrap(), 0.0);
    }
    assert!(balanced_accuracy(&Constant(0.5), &[]).is_err());
}

fn test_set() -> Vec<Example> {
    (0..8u32)
        .map(|i| Example {
            source: vec![4 + i % 5, 5],
            target: vec![4 + (i * 3) % 5, EOS],
        })
        .collect()
}

#[test]
fn adversarial_accuracy_is_reproducible_and_bounded() {
    let gen = GeneratorParams::new(tiny_generator_config(Architecture::Seq2Seq, 9), 1).unwrap();
    let disc = DiscriminatorParams::new(tiny_discriminator_config(DiscArchitecture::Hierarchical, 9), 2).unwrap();
    let data = test_set();
    let a = adversarial_accuracy(&disc, &gen, &data, 5, 11).unwrap();
    let b = adversarial_accuracy(&disc, &gen, &data, 5, 11).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!((0.0..=1.0).contains(&a));
    assert_eq!(adversarial_accuracy(&Constant(0.5), &gen, &data, 5, 3).unwrap(), 0.5);
}

#[test]
fn full_report_is_in_range_and_roundtrips() {
    let gen = GeneratorParams::new(tiny_generator_config(Architecture::Transformer, 9), 1).unwrap();
    let disc = DiscriminatorParams::new(tiny_discriminator_config(DiscArchitecture::Transformer, 9), 2).unwrap();
    let report = evaluate(&gen, &disc, &test_set(), 5, 3).unwrap();
    assert!(report.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(report, evaluate(&gen, &disc, &test_set(), 5, 3).unwrap());

    let csv = emit_report(&report, ReportFormat::Csv);
    let back = parse_csv_report(&csv).unwrap();
    for (a, b) in report.values().iter().zip(back.values()) {
        assert!((a - b).abs() <= 5e-7);
    }
    let text = emit_report(&report, ReportFormat::Text);
    assert!(text.contains("Bleu-1 (1e-3)") && text.contains("Adversarial Accuracy"));

    let zero = MetricReport::from_values([0.0; 7]).unwrap();
    let zero_csv = emit_report(&zero, ReportFormat::Csv);
    assert_eq!(
        zero_csv,
        "Dist-1,Dist-2,Bleu-1,Bleu-2,Bleu-3,Bleu-4,Adversarial Accuracy\n\
         0.000000,0.000000,0.000000,0.000000,0.000000,0.000000,0.000000\n"
    );
}
