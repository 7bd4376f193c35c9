mod common;

use citefield::anchor::{extract_anchor_sets, AnchorConfig, ModelConfidence};
use citefield::labeler::{forward_backward, path_score, viterbi};
use citefield::metrics::evaluate;
use citefield::pretrain::{build_plan, mask_budget, Guide, MaskingStrategy, StrategyKind};
use citefield::subword::{encode_citation, CLS_ID};
use citefield::FieldLabel;
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginals_are_row_stochastic(seed in 0u64..10_000, n in 1usize..40) {
        let (em, tr) = random_tables(&mut ChaCha8Rng::seed_from_u64(seed), n, 20.0);
        let fb = forward_backward(&em, &tr);
        prop_assert!(fb.log_partition.is_finite());
        for row in &fb.marginals {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn viterbi_beats_any_path(seed in 0u64..10_000, n in 1usize..30, other in prop::collection::vec(0usize..5, 30)) {
        let (em, tr) = random_tables(&mut ChaCha8Rng::seed_from_u64(seed), n, 5.0);
        let (path, score) = viterbi(&em, &tr);
        prop_assert!((path_score(&em, &tr, &path) - score).abs() < 1e-9);
        prop_assert!(score >= path_score(&em, &tr, &other[..n]) - 1e-9);
        prop_assert!(score <= forward_backward(&em, &tr).log_partition + 1e-9);
    }

    #[test]
    fn plans_respect_budget(seed in 0u64..5_000, frac in 0.05f64..0.6) {
        let corpus = synthetic_citations(4, seed);
        let vocab = small_vocab(&corpus);
        let mut strategy = MaskingStrategy::new(StrategyKind::RandomOnly);
        strategy.mask_fraction = frac;
        for (i, c) in corpus.iter().enumerate() {
            let seq = encode_citation(c, &vocab, 128).unwrap();
            let plan = build_plan(i, &seq, Guide::None, &strategy, vocab.len(), seed).unwrap();
            prop_assert!(plan.positions.len() <= mask_budget(seq.len(), frac));
            prop_assert!(plan.positions.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(plan.positions.iter().all(|&p| p > 0 && seq.ids[p] != CLS_ID));
        }
    }

    #[test]
    fn metrics_ignore_corpus_order(seed in 0u64..1_000) {
        let f = metric_fixture();
        let mut idx: Vec<usize> = (0..f.gold.len()).collect();
        let k = (seed as usize) % idx.len();
        idx.rotate_left(k);
        let j = (seed as usize / 3) % idx.len();
        idx.swap(0, j);
        let gold: Vec<Vec<FieldLabel>> = idx.iter().map(|&i| f.gold[i].clone()).collect();
        let pred: Vec<Vec<FieldLabel>> = idx.iter().map(|&i| f.pred[i].clone()).collect();
        let mut a = evaluate(&f.gold, &f.pred).unwrap();
        let mut b = evaluate(&gold, &pred).unwrap();
        a.citations = 0;
        b.citations = 0;
        prop_assert_eq!(a, b);
    }
}

#[test]
fn anchor_members_are_venue_scores_above_delta() {
    let corpus = synthetic_citations(40, 11);
    let vocab = small_vocab(&corpus);
    let model = random_model(&vocab, 4, 4, 5, 0.6);
    let conf = ModelConfidence {
        model: &model,
        vocab: &vocab,
    };
    for delta in [1e-4, 0.01, 0.05] {
        let cfg = AnchorConfig {
            delta,
            ..AnchorConfig::default()
        };
        for set in extract_anchor_sets(&conf, &corpus, &cfg).unwrap() {
            let c = &corpus[set.citation];
            let expected: Vec<usize> = set
                .scores
                .iter()
                .filter(|s| s.score > delta)
                .map(|s| s.token_index)
                .collect();
            assert_eq!(set.members, expected);
            assert!(set
                .scores
                .iter()
                .all(|s| c.labels[s.token_index] == FieldLabel::Venue));
            let k = c.labels.iter().filter(|&&l| l == FieldLabel::Venue).count();
            assert_eq!(set.degenerate, k < 2);
        }
    }
}

#[test]
fn anchor_extraction_is_deterministic() {
    let corpus = synthetic_citations(10, 12);
    let vocab = small_vocab(&corpus);
    let model = random_model(&vocab, 4, 4, 6, 0.6);
    let twin = model.clone();
    let cfg = AnchorConfig::default();
    let a = extract_anchor_sets(
        &ModelConfidence {
            model: &model,
            vocab: &vocab,
        },
        &corpus,
        &cfg,
    )
    .unwrap();
    let b = extract_anchor_sets(
        &ModelConfidence {
            model: &twin,
            vocab: &vocab,
        },
        &corpus,
        &cfg,
    )
    .unwrap();
    assert_eq!(a, b);
}
