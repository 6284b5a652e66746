mod common;

use common::{naive_modes, random_instance};
use proptest::prelude::*;
use tagslice::miner::audit;
use tagslice::{ingest, mine_exhaustive, mine_greedy, MinerConfig, Rate, Split, Strategy};

fn config(s: u64, a: (u64, u64), l: usize, freq: u64) -> MinerConfig {
    MinerConfig {
        min_support: s,
        min_drop: Rate::new(a.0, a.1),
        max_tags: l,
        freq_threshold: freq,
        ..MinerConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exhaustive_equals_record_scan(
        seed in any::<u64>(),
        s in 5u64..40,
        a in 5u64..40,
        l in 1usize..=3,
        freq in 0u64..30,
    ) {
        let images = random_instance(seed, 10, 300);
        let cfg = config(s, (a, 100), l, freq);
        let ds = ingest::from_images(&images, freq, Split::Train).unwrap();
        let report = mine_exhaustive(&ds, &cfg).unwrap();
        prop_assert_eq!(report.keys(), naive_modes(&images, &cfg));
        prop_assert!(audit(&report, &ds).is_empty());
    }

    #[test]
    fn greedy_is_a_subset_and_exact_at_full_width(
        seed in any::<u64>(),
        s in 5u64..40,
        beam in 1usize..4,
    ) {
        let images = random_instance(seed, 10, 300);
        let mut cfg = config(s, (1, 5), 3, 5);
        cfg.strategy = Strategy::Greedy;
        cfg.beam_width = beam;
        let ds = ingest::from_images(&images, cfg.freq_threshold, Split::Train).unwrap();
        let exhaustive = mine_exhaustive(&ds, &cfg).unwrap().keys();
        let greedy = mine_greedy(&ds, &cfg).unwrap();
        prop_assert!(greedy.keys().is_subset(&exhaustive));
        prop_assert!(audit(&greedy, &ds).is_empty());
        cfg.beam_width = ds.classes.values().map(|c| c.vocabulary.len()).max().unwrap_or(1).max(1);
        prop_assert_eq!(mine_greedy(&ds, &cfg).unwrap().keys(), exhaustive);
    }

    #[test]
    fn input_order_does_not_matter(seed in any::<u64>(), rot in 0usize..1000) {
        let mut images = random_instance(seed, 8, 200);
        let cfg = config(10, (1, 5), 3, 5);
        let a = mine_exhaustive(&ingest::from_images(&images, 5, Split::Train).unwrap(), &cfg).unwrap();
        let k = rot % images.len();
        images.rotate_left(k);
        images.reverse();
        let b = mine_exhaustive(&ingest::from_images(&images, 5, Split::Train).unwrap(), &cfg).unwrap();
        prop_assert_eq!(a.modes, b.modes);
    }
}

#[test]
fn deeper_schedule_beyond_listed_margins() {
    // l = 5 uses b_5 = b_2 / 8, past the end of the listed schedule
    for seed in 0..10 {
        let images = random_instance(seed, 8, 400);
        let cfg = config(8, (1, 10), 5, 0);
        let ds = ingest::from_images(&images, 0, Split::Train).unwrap();
        assert_eq!(
            mine_exhaustive(&ds, &cfg).unwrap().keys(),
            naive_modes(&images, &cfg),
            "seed {seed}"
        );
    }
}

#[test]
fn instances_are_not_trivially_empty() {
    let cfg = config(10, (1, 5), 3, 5);
    let found: usize = (0..20)
        .map(|s| naive_modes(&random_instance(s, 10, 300), &cfg).len())
        .sum();
    assert!(found >= 10, "only {found} modes over 20 instances");
}
