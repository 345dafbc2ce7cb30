use acgs::corpus::{
    batchify, make_pairs, parse_dialogues, DialoguePair, Example, Utterance, Vocabulary, BOS, EOS,
    PAD, UNK,
};
use proptest::prelude::*;

const WORDS: [&str; 8] = ["a", "b", "c", "hi", "ok", "no", "yes", "!"];

fn utterance() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..6).prop_map(|w| w.join(" "))
}

fn corpus_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::collection::vec(utterance(), 1..5), 1..6).prop_map(|dialogues| {
        dialogues
            .iter()
            .map(|d| d.iter().map(|u| format!("{u} __eou__ ")).collect::<String>())
            .collect::<Vec<_>>()
            .join("\n")
    })
}

fn all_pairs(text: &str, window: usize) -> Vec<DialoguePair> {
    parse_dialogues(text)
        .iter()
        .flat_map(|d| make_pairs(d, window))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pair_count_is_utterances_minus_one(text in corpus_text(), window in 1usize..4) {
        for d in parse_dialogues(&text) {
            let pairs = make_pairs(&d, window);
            prop_assert_eq!(pairs.len(), d.len() - 1);
            for (i, p) in pairs.iter().enumerate() {
                prop_assert!(!p.history.is_empty() && p.history.len() <= window);
                prop_assert_eq!(&p.response, &d[i + 1]);
                prop_assert_eq!(p.history.last().unwrap(), &d[i]);
            }
        }
    }

    #[test]
    fn vocabulary_build_is_deterministic(text in corpus_text(), max_size in 5usize..12, min_freq in 1usize..3) {
        let pairs = all_pairs(&text, 2);
        let a = Vocabulary::build(&pairs, max_size, min_freq).unwrap();
        let mut reversed = pairs.clone();
        reversed.reverse();
        let b = Vocabulary::build(&reversed, max_size, min_freq).unwrap();
        prop_assert_eq!(a.tokens(), b.tokens());
        prop_assert!(a.len() <= max_size);
        prop_assert_eq!(&a.tokens()[..4], &["<pad>", "<bos>", "<eos>", "<unk>"]);
    }

    #[test]
    fn encode_decode_roundtrips_in_vocabulary(text in corpus_text()) {
        let pairs = all_pairs(&text, 2);
        let vocab = Vocabulary::build(&pairs, 100, 1).unwrap();
        for p in &pairs {
            let ids = vocab.encode(&p.response);
            prop_assert!(!ids.contains(&UNK));
            prop_assert_eq!(vocab.decode(&ids).unwrap(), p.response.tokens().to_vec());
        }
    }

    #[test]
    fn no_pad_before_content(
        text in corpus_text(),
        batch_size in 1usize..5,
        max_src in 1usize..8,
        max_tgt in 1usize..6,
        seed in 0u64..100,
    ) {
        let pairs = all_pairs(&text, 2);
        let vocab = Vocabulary::build(&pairs, 100, 1).unwrap();
        let batches = batchify(&vocab, &pairs, batch_size, max_src, max_tgt, seed).unwrap();
        prop_assert_eq!(batches.iter().map(|b| b.len()).sum::<usize>(), pairs.len());
        for b in &batches {
            for (rows, lens) in [(&b.source, &b.source_lens), (&b.target, &b.target_lens)] {
                for (row, &len) in rows.iter().zip(lens.iter()) {
                    prop_assert!(len <= row.len());
                    prop_assert!(row[..len].iter().all(|&t| t != PAD));
                    prop_assert!(row[len..].iter().all(|&t| t == PAD));
                }
            }
            for (row, &len) in b.target.iter().zip(&b.target_lens) {
                prop_assert_eq!(row[0], BOS);
                prop_assert_eq!(row[len - 1], EOS);
                prop_assert!(len <= max_tgt + 2);
            }
            for &len in &b.source_lens {
                prop_assert!(len <= max_src);
            }
        }
    }
}

#[test]
fn history_is_joined_with_eos() {
    let text = "a b __eou__ c __eou__ hi ok __eou__\n";
    let pairs = all_pairs(text, 2);
    let vocab = Vocabulary::build(&pairs, 50, 1).unwrap();
    let e = Example::encode(&vocab, &pairs[1], 30, 20);
    let id = |t: &str| vocab.id(t);
    assert_eq!(e.source, vec![id("a"), id("b"), EOS, id("c")]);
    assert_eq!(e.target, vec![id("hi"), id("ok"), EOS]);
}

#[test]
fn parses_a_worked_dialogue() {
    let d = parse_dialogues("Good morning ! __eou__ Hi ! __eou__\n");
    assert_eq!(d.len(), 1);
    let tokens: Vec<Vec<String>> = d[0].iter().map(|u| u.tokens().to_vec()).collect();
    assert_eq!(tokens, vec![vec!["good", "morning", "!"], vec!["hi", "!"]]);
    assert!(parse_dialogues("").is_empty());
    assert!(parse_dialogues("  __eou__   __eou__ \n").is_empty());
    assert!(Utterance::parse("   ").is_none());
}

#[test]
fn batch_order_depends_only_on_seed() {
    let text = (0..5).map(|i| format!("w{i} __eou__ r{i} __eou__\n")).collect::<String>();
    let pairs = all_pairs(&text, 2);
    let vocab = Vocabulary::build(&pairs, 100, 1).unwrap();
    let a = batchify(&vocab, &pairs, 2, 10, 10, 9).unwrap();
    let b = batchify(&vocab, &pairs, 2, 10, 10, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
}
