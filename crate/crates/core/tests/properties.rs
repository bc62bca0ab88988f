use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reuse_scope::oracle::{self, stack, LoopOverrides, DEFAULT_UNROLL_CAP};
use reuse_scope::*;

/// Bracket-balanced scalar trace text over `alphabet` symbols.
fn random_trace(seed: u64, alphabet: u32, max_depth: usize, max_count: u64, max_len: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens: Vec<String> = Vec::new();
    let mut depth = 0;
    while tokens.len() + depth < max_len {
        let roll: f64 = rng.gen();
        if depth < max_depth && roll < 0.15 && tokens.len() + depth + 2 < max_len {
            tokens.push(format!("[{}", rng.gen_range(1..=max_count)));
            depth += 1;
        } else if depth > 0 && roll < 0.3 {
            tokens.push("]".into());
            depth -= 1;
        } else {
            tokens.push(format!("s{}", rng.gen_range(0..alphabet)));
        }
    }
    tokens.extend(std::iter::repeat_n("]".to_string(), depth));
    tokens.join(" ")
}

fn profile(p: &[(Option<u64>, u64)]) -> ReuseProfile {
    let mut out = ReuseProfile::default();
    for (d, c) in p {
        out.add(*d, *c);
    }
    out
}

fn arb_profile() -> impl Strategy<Value = ReuseProfile> {
    (prop::collection::btree_map(0u64..20, 0u64..1000, 0..8), 0u64..1000)
        .prop_map(|(hist, inf_count)| ReuseProfile { hist, inf_count })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn static_equals_unrolled_oracle(seed in any::<u64>()) {
        let text = random_trace(seed, 8, 3, 6, 40);
        let trace = parse_trace(&text).unwrap();
        let predicted = calc_reuse_profile(&trace).unwrap();
        let actual = oracle::oracle_profile(&trace, &LoopOverrides::default(), DEFAULT_UNROLL_CAP).unwrap();
        prop_assert_eq!(&predicted, &actual, "{}", text);
        prop_assert_eq!(predicted.total(), trace.unrolled_len().unwrap());
    }

    #[test]
    fn first_accesses_are_cold(seed in any::<u64>()) {
        let trace = parse_trace(&random_trace(seed, 10, 2, 4, 30)).unwrap();
        let symbols: BTreeSet<String> = trace.tokens.iter().filter_map(|t| match t {
            TraceToken::Access(a) => Some(a.render()),
            _ => None,
        }).collect();
        prop_assert_eq!(calc_reuse_profile(&trace).unwrap().inf_count, symbols.len() as u64);
    }

    #[test]
    fn render_parse_round_trip(seed in any::<u64>()) {
        let text = random_trace(seed, 12, 3, 9, 60).replace(' ', " → ");
        let trace = parse_trace(&text).unwrap();
        prop_assert_eq!(trace.render(false), text);
    }

    #[test]
    fn tree_equals_naive(stream in prop::collection::vec(0u32..40, 0..1500)) {
        prop_assert_eq!(stack::exact_reuse_profile(&stream), stack::naive_reuse_profile(&stream));
    }

    #[test]
    fn parallel_equals_sequential(stream in prop::collection::vec(0u32..300, 0..3000), chunks in 1usize..17) {
        prop_assert_eq!(stack::parallel_reuse_profile(&stream, chunks), stack::exact_reuse_profile(&stream));
    }

    #[test]
    fn merge_distributes_over_multipliers(p in arb_profile(), q in arb_profile(), a in 0u64..50, b in 0u64..50) {
        let once = merge_profiles(&p, &q, a + b);
        let twice = merge_profiles(&merge_profiles(&p, &q, a), &q, b);
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.total(), p.total() + (a + b) * q.total());
    }

    #[test]
    fn merge_is_associative(p in arb_profile(), q in arb_profile(), r in arb_profile()) {
        let left = merge_profiles(&merge_profiles(&p, &q, 1), &r, 1);
        let right = merge_profiles(&p, &merge_profiles(&q, &r, 1), 1);
        prop_assert_eq!(left, right);
    }

    #[test]
    fn larger_counts_keep_the_distance_set(seed in any::<u64>(), bump in 1u64..20) {
        let text = random_trace(seed, 6, 2, 5, 30);
        let trace = parse_trace(&text).unwrap();
        let mut bigger = trace.clone();
        for t in &mut bigger.tokens {
            if let TraceToken::LoopStart { count, .. } = t {
                if *count >= 2 {
                    *count += bump;
                }
            }
        }
        let a: BTreeSet<u64> = calc_reuse_profile(&trace).unwrap().hist.keys().copied().collect();
        let b: BTreeSet<u64> = calc_reuse_profile(&bigger).unwrap().hist.keys().copied().collect();
        prop_assert_eq!(a, b, "{}", text);
    }
}

#[test]
fn generator_respects_limits() {
    for seed in 0..200 {
        let trace = parse_trace(&random_trace(seed, 12, 3, 8, 60)).unwrap();
        assert!(trace.tokens.len() <= 60);
        assert!(trace.max_depth() <= 3);
    }
}

#[test]
fn naive_oracle_examples() {
    assert_eq!(stack::naive_reuse_profile(&[0, 1, 0]), profile(&[(None, 2), (Some(1), 1)]));
    assert_eq!(stack::naive_reuse_profile(&[0, 1, 2]), profile(&[(None, 3)]));
}
