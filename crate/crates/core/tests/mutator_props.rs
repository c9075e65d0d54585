use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ntfuzz::mutator::{
    diff_log, mutate_blob, mutate_in_place, MutationConfig, MutationLog, Strategy as Havoc,
    ARITH_MAX,
};

/// Applies a log by hand: XOR for flips, plain writes otherwise.
fn replay_by_hand(log: &MutationLog, blob: &[u8]) -> Vec<u8> {
    let mut out = blob.to_vec();
    for s in &log.steps {
        for (k, b) in s.operand.iter().enumerate() {
            let dst = &mut out[s.offset + k];
            *dst = match s.strategy {
                Havoc::Flip => *dst ^ b,
                _ => *b,
            };
        }
    }
    out
}

fn value(bytes: &[u8], big: bool) -> u128 {
    let mut v = 0u128;
    let ordered: Vec<u8> = if big {
        bytes.to_vec()
    } else {
        bytes.iter().rev().copied().collect()
    };
    for b in ordered {
        v = (v << 8) | b as u128;
    }
    v
}

fn arith_delta_ok(before: &[u8], after: &[u8]) -> bool {
    let modulus = 1u128 << (8 * before.len());
    [true, false].iter().any(|&big| {
        let (a, b) = (value(before, big), value(after, big));
        let up = (b + modulus - a) % modulus;
        let down = (a + modulus - b) % modulus;
        (1..=ARITH_MAX as u128).contains(&up) || (1..=ARITH_MAX as u128).contains(&down)
    })
}

fn config() -> impl Strategy<Value = MutationConfig> {
    (
        any::<u64>(),
        1u32..8,
        prop::collection::vec(0u32..4, 4),
        prop::collection::vec(prop::collection::vec(any::<u8>(), 0..12), 0..3),
        1usize..96,
    )
        .prop_filter("some weight", |(_, _, w, _, _)| w.iter().any(|&x| x > 0))
        .prop_map(|(seed, rounds, weights, tokens, chunk)| MutationConfig {
            max_mutations_per_round: rounds,
            strategy_weights: Havoc::ALL.into_iter().zip(weights).collect(),
            tokens,
            rng_seed: seed,
            max_chunk: chunk,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn logs_replay_to_the_mutated_blob(
        cfg in config(),
        blob in prop::collection::vec(any::<u8>(), 1..512),
    ) {
        let (out, log) = mutate_blob(&blob, &cfg).unwrap();
        prop_assert!(!log.is_empty());
        prop_assert!(log.len() <= cfg.max_mutations_per_round as usize);
        prop_assert_eq!(out.len(), blob.len());
        prop_assert_eq!(&replay_by_hand(&log, &blob), &out);
        prop_assert_eq!(&log.replay(&blob).unwrap(), &out);
        let text = log.to_text();
        prop_assert_eq!(&MutationLog::from_text(&text).unwrap(), &log);
        for s in &log.steps {
            prop_assert!(cfg.strategy_weights[&s.strategy] > 0);
            prop_assert!(s.offset + s.width <= blob.len());
            prop_assert_eq!(s.operand.len(), s.width);
        }
    }

    #[test]
    fn same_seed_same_round(cfg in config(), blob in prop::collection::vec(any::<u8>(), 1..256)) {
        prop_assert_eq!(mutate_blob(&blob, &cfg).unwrap(), mutate_blob(&blob, &cfg).unwrap());
    }

    #[test]
    fn diff_log_rebuilds_any_target(
        pair in prop::collection::vec(any::<(u8, bool)>(), 0..300),
    ) {
        let from: Vec<u8> = pair.iter().map(|p| p.0).collect();
        let to: Vec<u8> = pair.iter().map(|&(b, keep)| if keep { b } else { !b }).collect();
        prop_assert_eq!(diff_log(&from, &to).replay(&from).unwrap(), to);
    }
}

#[test]
fn every_strategy_fires_with_its_own_semantics() {
    let cfg = MutationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut seen: BTreeMap<Havoc, usize> = BTreeMap::new();
    let base: Vec<u8> = (0..1024u32).map(|i| (i * 7) as u8).collect();
    for _ in 0..10_000 {
        let mut blob = base.clone();
        let log = mutate_in_place(&mut blob, &cfg, &mut rng).unwrap();
        let mut cur = base.clone();
        for s in &log.steps {
            *seen.entry(s.strategy).or_default() += 1;
            let before = cur[s.offset..s.offset + s.width].to_vec();
            let one = MutationLog {
                steps: vec![s.clone()],
            };
            cur = one.replay(&cur).unwrap();
            let after = &cur[s.offset..s.offset + s.width];
            match s.strategy {
                Havoc::Flip => {
                    let diff: u32 = before
                        .iter()
                        .zip(after)
                        .map(|(a, b)| (a ^ b).count_ones())
                        .sum();
                    assert_eq!(diff, 1);
                }
                Havoc::Arith => assert!(arith_delta_ok(&before, after), "{s}"),
                Havoc::Interesting => assert!([1, 2, 4, 8].contains(&s.width)),
                Havoc::Overwrite => assert!(s.width >= 1),
            }
        }
        assert_eq!(cur, blob);
    }
    let fired: BTreeSet<Havoc> = seen.keys().copied().collect();
    assert_eq!(fired, Havoc::ALL.into_iter().collect());
    // equal weights: each strategy within 20% of a quarter
    let total: usize = seen.values().sum();
    for (s, n) in &seen {
        let share = *n as f64 / total as f64;
        assert!((0.2..0.3).contains(&share), "{s}: {share}");
    }
}

#[test]
fn zero_weights_are_rejected() {
    let mut cfg = MutationConfig::default();
    for w in cfg.strategy_weights.values_mut() {
        *w = 0;
    }
    assert!(mutate_blob(&[1, 2, 3], &cfg).is_err());
}
