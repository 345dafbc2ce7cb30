use acgs::diagnostics::{gradient_suite, GRADCHECK_TOLERANCE};
use acgs::models::Architecture;

#[test]
fn every_loss_matches_finite_differences() {
    for arch in [Architecture::Seq2Seq, Architecture::Transformer] {
        for seed in 1..=4 {
            for o in gradient_suite(arch, seed).unwrap() {
                assert!(
                    o.max_rel_err < GRADCHECK_TOLERANCE,
                    "{arch:?} seed {seed} {}: {:e}",
                    o.name,
                    o.max_rel_err
                );
            }
        }
    }
}
