#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagslice::model::ImageRecord;
use tagslice::{MinerConfig, Split};

/// Random instance: a few classes, small vocabularies, a planted low-accuracy
/// pocket so that some modes exist.
pub fn random_instance(seed: u64, max_tags: usize, max_images: usize) -> Vec<ImageRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(1..=3);
    let mut out = Vec::new();
    for c in 0..classes {
        let n_tags = rng.random_range(1..=max_tags);
        let n = rng.random_range(20..=max_images);
        let marg: Vec<f64> = (0..n_tags).map(|_| rng.random_range(0.1..0.6)).collect();
        let pocket: Vec<usize> = (0..n_tags).filter(|_| rng.random::<f64>() < 0.25).collect();
        for i in 0..n {
            let tags: BTreeSet<usize> = (0..n_tags)
                .filter(|&t| rng.random::<f64>() < marg[t])
                .collect();
            let hit = !pocket.is_empty() && pocket.iter().all(|t| tags.contains(t));
            let p = if hit { 0.3 } else { 0.85 };
            out.push(ImageRecord {
                id: format!("c{c}-{i}"),
                class_label: format!("c{c}"),
                tags: tags.into_iter().map(|t| format!("t{t:02}")).collect(),
                correct: rng.random::<f64>() < p,
                split: Split::Train,
            });
        }
    }
    out
}

/// `(correct, total)` of records carrying every tag in `tags`.
fn scan(records: &[&ImageRecord], tags: &[&String]) -> (i128, i128) {
    let group: Vec<_> = records
        .iter()
        .filter(|r| tags.iter().all(|t| r.tags.contains(*t)))
        .collect();
    (
        group.iter().filter(|r| r.correct).count() as i128,
        group.len() as i128,
    )
}

/// `a/b - c/d >= num/den`, exactly.
fn at_least(a: (i128, i128), c: (i128, i128), num: i128, den: i128) -> bool {
    (a.0 * c.1 - c.0 * a.1) * den >= num * a.1 * c.1
}

fn b_for(config: &MinerConfig, n: usize) -> (i128, i128) {
    let r = match config.b_schedule.get(n - 2) {
        Some(&r) => (r.numer() as i128, r.denom() as i128),
        None => {
            let r = config.b_schedule[0];
            (r.numer() as i128, r.denom() as i128 * (1 << (n - 2)))
        }
    };
    r
}

/// Every qualifying `(class, tags)` found by scanning records for every tag
/// subset up to `max_tags`.
pub fn naive_modes(
    images: &[ImageRecord],
    config: &MinerConfig,
) -> BTreeSet<(String, Vec<String>)> {
    let mut by_class: BTreeMap<&str, Vec<&ImageRecord>> = BTreeMap::new();
    for r in images {
        by_class.entry(&r.class_label).or_default().push(r);
    }
    let mut out = BTreeSet::new();
    for (class, recs) in by_class {
        let mut counts: BTreeMap<&String, u64> = BTreeMap::new();
        for r in &recs {
            for t in &r.tags {
                *counts.entry(t).or_default() += 1;
            }
        }
        let vocab: Vec<&String> = counts
            .into_iter()
            .filter(|(_, c)| *c >= config.freq_threshold)
            .map(|(t, _)| t)
            .collect();
        let base = scan(&recs, &[]);
        let a = (
            config.min_drop.numer() as i128,
            config.min_drop.denom() as i128,
        );
        let n = vocab.len();
        for bits in 1u64..(1u64 << n) {
            let k = bits.count_ones() as usize;
            if k > config.max_tags {
                continue;
            }
            let tags: Vec<&String> = (0..n)
                .filter(|i| bits & (1 << i) != 0)
                .map(|i| vocab[i])
                .collect();
            let g = scan(&recs, &tags);
            if g.1 < config.min_support as i128 || !at_least(base, g, a.0, a.1) {
                continue;
            }
            let minimal = k < 2
                || tags.iter().all(|t| {
                    let rest: Vec<&String> = tags.iter().copied().filter(|u| u != t).collect();
                    let (bn, bd) = b_for(config, k);
                    at_least(scan(&recs, &rest), g, bn, bd)
                });
            if minimal {
                out.insert((class.to_string(), tags.into_iter().cloned().collect()));
            }
        }
    }
    out
}
