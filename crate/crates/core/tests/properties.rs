use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use screenqa::corpus::Vocabulary;
use screenqa::cues::{bag_similarity, TokenBag, WordVectors, MIN_DISTANCE};
use screenqa::evaluator::Metrics;
use screenqa::fusion::{random_input, rank_of, ForwardOptions, ModelConfig, QAModel, Variant};
use screenqa::kb::AnswerPool;

const WORDS: [&str; 8] = ["layer", "brush", "mask", "blur", "crop", "curve", "hue", "stroke"];

fn vectors(dim: usize, seed: u64) -> WordVectors {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wv = WordVectors::new(dim);
    // The last word is left out so fallback vectors are covered too.
    for w in &WORDS[..WORDS.len() - 1] {
        wv.insert(w, (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    }
    wv
}

fn bag(picks: &[(usize, u32)]) -> TokenBag {
    let mut b = TokenBag::new();
    for &(w, c) in picks {
        b.add(WORDS[w % WORDS.len()], c);
    }
    b
}

fn picks() -> impl Strategy<Value = Vec<(usize, u32)>> {
    prop::collection::vec((0..WORDS.len(), 1u32..5), 0..12)
}

proptest! {
    #[test]
    fn similarity_is_non_negative_and_zero_on_empty(test in picks(), train in picks(), dim in 1usize..8, seed in 0u64..50) {
        let wv = vectors(dim, seed);
        let (t, r) = (bag(&test), bag(&train));
        let s = bag_similarity(&t, &r, &wv);
        prop_assert!(s >= 0.0 && s.is_finite());
        if t.is_empty() || r.is_empty() {
            prop_assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn growing_the_reference_bag_never_lowers_similarity(
        test in picks(), train in picks(), extra in 0..WORDS.len(), dim in 1usize..8, seed in 0u64..50
    ) {
        let wv = vectors(dim, seed);
        let t = bag(&test);
        let mut r = bag(&train);
        let before = bag_similarity(&t, &r, &wv);
        r.add(WORDS[extra], 1);
        prop_assert!(bag_similarity(&t, &r, &wv) >= before);
    }

    #[test]
    fn shared_words_hit_the_distance_floor(word in 0..WORDS.len(), count in 1u32..6, dim in 1usize..8) {
        let wv = vectors(dim, 1);
        let t = bag(&[(word, count)]);
        prop_assert_eq!(bag_similarity(&t, &t, &wv), count as f64 / MIN_DISTANCE);
    }

    #[test]
    fn metric_invariants(ranks in prop::collection::vec(1usize..60, 1..200)) {
        let m = Metrics::from_ranks(&ranks).unwrap();
        prop_assert!(m.r1 <= m.r5 && m.r5 <= m.r10);
        prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        prop_assert!(m.mrr >= m.r1);
        prop_assert!(m.avg_rank >= 1.0);
        // Harmonic mean never exceeds the arithmetic mean.
        prop_assert!(1.0 / m.mrr <= m.avg_rank * (1.0 + 1e-12));
        prop_assert_eq!(m.count, ranks.len());
    }

    #[test]
    fn rank_counts_strictly_better_scores(scores in prop::collection::vec(-3i32..3, 1..30), gold in 0usize..30) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let gold = gold % scores.len();
        let r = rank_of(&scores, gold).unwrap();
        prop_assert_eq!(r, 1 + scores.iter().filter(|&&s| s > scores[gold]).count());
        prop_assert!(r >= 1 && r <= scores.len());
    }
}

fn toy_model(variant: Variant, seed: u64) -> QAModel {
    let vocab = Vocabulary::from_tokens((0..20).map(|i| format!("w{i}")).collect(), 1);
    let pool = AnswerPool::from_ids((0..6).map(|i| format!("a{i}")).collect());
    let cfg = ModelConfig {
        w: 2,
        seed,
        ..ModelConfig::miniature(variant)
    };
    let mut model = QAModel::new(cfg, vocab, pool, None, None).unwrap();
    model.jitter(0.3, seed);
    model
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn permuting_the_pool_permutes_scores(
        variant in prop::sample::select(Variant::ALL.to_vec()),
        perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
        seed in 0u64..1000,
    ) {
        let model = toy_model(variant, seed);
        let mut other = model.clone();
        other.pool = AnswerPool::from_ids(perm.iter().map(|&i| model.pool.ids()[i].clone()).collect());
        let dim = model.answers.dim;
        let src = model.params.get(model.answers.id).value.clone();
        let dst = &mut other.params.get_mut(other.answers.id).value;
        for (new, &old) in perm.iter().enumerate() {
            dst[new * dim..(new + 1) * dim].copy_from_slice(&src[old * dim..(old + 1) * dim]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut input = random_input(&model, &mut rng);
        let before = model.run(&input, ForwardOptions::default()).unwrap().scores;
        for s in &mut input.steps {
            for slot in s.cues.iter_mut().flatten() {
                *slot = perm.iter().position(|&o| o == *slot).unwrap();
            }
        }
        let after = other.run(&input, ForwardOptions::default()).unwrap().scores;
        for (new, &old) in perm.iter().enumerate() {
            prop_assert!((after[new] - before[old]).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_without_dropout(variant in prop::sample::select(Variant::ALL.to_vec()), seed in 0u64..1000) {
        let model = toy_model(variant, seed);
        let input = random_input(&model, &mut ChaCha8Rng::seed_from_u64(seed));
        let a = model.run(&input, ForwardOptions::default()).unwrap();
        let b = model.run(&input, ForwardOptions::default()).unwrap();
        prop_assert_eq!(a.scores, b.scores);
        prop_assert_eq!(a.trace, b.trace);
    }
}
