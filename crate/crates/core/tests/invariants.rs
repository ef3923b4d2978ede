use personachat::corpus::{generate_synthetic, load_canonical, write_canonical, Example, Speaker, SynthConfig};
use personachat::eval::{f1, hits_at_1, perplexity, RandomScorer};
use personachat::generative::{decode_word_dist, GenConfig, GenModel, GenParams};
use personachat::rankers::{kv_attend, IrRanker, KvPair, KvStore, Ranker};
use personachat::textrep::{Dictionary, Vocabulary};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["cat", "dog", "ski", "tea", "red", "sea", "run", "sun"];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 1..6).prop_map(|w| w.join(" "))
}

fn random_params(k: usize, seed: u64) -> GenParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = GenParams::zeros(k, 4, 3);
    for block in p.blocks_mut() {
        block.iter_mut().for_each(|x| *x = rng.random_range(-2.0..2.0));
    }
    p
}

fn example(i: usize, context: String, gold: String) -> Example {
    Example {
        episode_id: format!("e{i}"),
        turn: 1,
        speaker: Speaker::P1,
        context: vec![context],
        profile: vec![],
        candidates: vec![gold.clone()],
        gold,
        gold_index: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn word_distribution_sums_to_one(seed in any::<u64>(), h in prop::collection::vec(-1.0f64..1.0, 3)) {
        let p = random_params(10, seed);
        let d = decode_word_dist(&p, &h);
        prop_assert_eq!(d.len(), 10);
        prop_assert!(d.iter().all(|&x| x > 0.0));
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perplexity_ignores_example_order(
        seed in any::<u64>(),
        pairs in prop::collection::vec((sentence(), sentence()), 1..6),
        rot in 0usize..6,
    ) {
        let vocab = Vocabulary::build([WORDS.join(" ").as_str()], 1).unwrap();
        let model = GenModel::new(vocab.clone(), random_params(vocab.len(), seed), &GenConfig::default());
        let ex: Vec<Example> = pairs.into_iter().enumerate().map(|(i, (c, g))| example(i, c, g)).collect();
        let mut turned = ex.clone();
        turned.rotate_left(rot % ex.len());
        turned.reverse();
        let a = perplexity(&model, &ex).unwrap();
        prop_assert!(a >= 1.0);
        prop_assert_eq!(a, perplexity(&model, &turned).unwrap());
    }

    #[test]
    fn f1_is_symmetric_and_bounded(a in sentence(), b in sentence()) {
        let x = f1(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, f1(&b, &a));
        prop_assert_eq!(f1(&a, &a), 1.0);
    }

    #[test]
    fn ranker_scores_follow_candidates(
        context in sentence(),
        cands in prop::collection::vec(sentence(), 2..8),
        seed in any::<u64>(),
    ) {
        let ir = IrRanker::new(Dictionary::build([WORDS.join(" ").as_str(), "cat dog"], 1).unwrap());
        let scorers: [&dyn Ranker; 2] = [&ir, &RandomScorer { seed }];
        for r in scorers {
            let s = r.score(std::slice::from_ref(&context), &[], &cands);
            prop_assert_eq!(s.len(), cands.len());
            prop_assert_eq!(&s, &r.score(std::slice::from_ref(&context), &[], &cands));
        }
        let s = ir.score(std::slice::from_ref(&context), &[], &cands);
        let mut rev = cands.clone();
        rev.reverse();
        let mut back = ir.score(std::slice::from_ref(&context), &[], &rev);
        back.reverse();
        prop_assert_eq!(s, back);
    }

    #[test]
    fn hits_at_1_is_a_fraction(n in 1usize..40, k in 1usize..6, seed in any::<u64>()) {
        let ex: Vec<Example> = (0..n)
            .map(|i| {
                let cands: Vec<String> = (0..k).map(|j| format!("c{i} {j}")).collect();
                Example { gold: cands[i % k].clone(), gold_index: i % k, candidates: cands, ..example(i, "x".into(), String::new()) }
            })
            .collect();
        let h = hits_at_1(&RandomScorer { seed }, &ex).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!(((h * n as f64).round() - h * n as f64).abs() < 1e-9);
        if k == 1 {
            prop_assert_eq!(h, 1.0);
        }
    }

    #[test]
    fn kv_cap_at_or_above_store_size_changes_nothing(
        rows in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 3), prop::collection::vec(-1.0f64..1.0, 3)), 1..12),
        q in prop::collection::vec(-1.0f64..1.0, 3),
        extra in 0usize..4,
        residual in any::<bool>(),
    ) {
        let pairs = rows.into_iter().map(|(key, value)| KvPair { key, value, text: String::new() }).collect::<Vec<_>>();
        let full = KvStore { top_m: None, pairs, residual };
        let capped = KvStore { top_m: Some(full.len() + extra), ..full.clone() };
        prop_assert_eq!(kv_attend(&q, &full).unwrap(), kv_attend(&q, &capped).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn canonical_jsonl_round_trips(seed in any::<u64>(), n in 20usize..40) {
        let corpus = generate_synthetic(&SynthConfig { seed, n_episodes: n, ..Default::default() }).unwrap();
        let mut a = Vec::new();
        write_canonical(&corpus.episodes, &mut a).unwrap();
        let back = load_canonical(a.as_slice()).unwrap();
        prop_assert_eq!(&back, &corpus.episodes);
        let mut b = Vec::new();
        write_canonical(&back, &mut b).unwrap();
        prop_assert_eq!(a, b);
    }
}
