//! Failure-mode search.
//!
//! A tag set `S` of class `c` is reported when
//!
//! 1. at least `min_support` class images carry every tag in `S`,
//! 2. accuracy on those images is at least `min_drop` below the class
//!    baseline, and
//! 3. for `|S| >= 2`, dropping any single tag raises the group accuracy by
//!    at least the margin for `|S|` tags.
//!
//! The exhaustive search walks tag sets in increasing vocabulary order and
//! keeps one intersection mask per depth, so each extension costs one AND
//! plus a popcount. Branches are cut as soon as support falls below the
//! floor, which is sound because support can only shrink as tags are added.
//! Accuracy has no such monotonicity and is never used for pruning.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::error::{Error, Result};
use crate::model::{ClassIndex, FailureMode, Margin, MinerConfig, Strategy, TaggedDataset};
use crate::rate::Accuracy;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineStats {
    /// Tag sets whose support reached the floor and whose accuracy was computed.
    pub candidates_evaluated: u64,
    /// Tag sets discarded because their support fell below the floor.
    pub candidates_pruned_support: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl MineStats {
    fn absorb(&mut self, other: &MineStats) {
        self.candidates_evaluated += other.candidates_evaluated;
        self.candidates_pruned_support += other.candidates_pruned_support;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    #[serde(rename = "class")]
    pub class_label: String,
    pub image_count: usize,
    pub vocabulary_size: usize,
    pub baseline_accuracy: f64,
    pub modes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineReport {
    pub config: MinerConfig,
    pub classes: Vec<ClassSummary>,
    /// Sorted by class, then tag count, then drop (largest first), then tags.
    pub modes: Vec<FailureMode>,
    pub stats: MineStats,
}

impl MineReport {
    pub fn modes_of<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a FailureMode> + 'a {
        self.modes.iter().filter(move |m| m.class_label == class)
    }

    /// `(class, tags)` pairs, for set comparisons.
    pub fn keys(&self) -> BTreeSet<(String, Vec<String>)> {
        self.modes
            .iter()
            .map(|m| (m.class_label.clone(), m.tags.clone()))
            .collect()
    }
}

/// A qualifying tag set found inside one class.
#[derive(Clone, Debug)]
struct Found {
    positions: Vec<usize>,
    group: Accuracy,
    without: Vec<Accuracy>,
}

/// Runs the search selected by `config.strategy`.
pub fn mine(dataset: &TaggedDataset, config: &MinerConfig) -> Result<MineReport> {
    match config.strategy {
        Strategy::Exhaustive => mine_exhaustive(dataset, config),
        Strategy::Greedy => mine_greedy(dataset, config),
    }
}

pub fn mine_exhaustive(dataset: &TaggedDataset, config: &MinerConfig) -> Result<MineReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let classes: Vec<&ClassIndex> = dataset.classes.values().collect();
    // one unit of work per (class, first tag) keeps workers balanced
    let work: Vec<(usize, usize)> = classes
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.vocabulary.len()).map(move |t| (ci, t)))
        .collect();
    let results: Vec<(usize, Vec<Found>, MineStats)> = work
        .into_par_iter()
        .map(|(ci, first)| {
            let mut search = DepthFirst::new(classes[ci], config);
            search.run_from(first);
            (ci, search.found, search.stats)
        })
        .collect();
    let mut per_class: Vec<Vec<Found>> = vec![Vec::new(); classes.len()];
    let mut stats = MineStats::default();
    for (ci, found, s) in results {
        per_class[ci].extend(found);
        stats.absorb(&s);
    }
    stats.wall_time = start.elapsed();
    Ok(finish(config, &classes, per_class, stats))
}

struct DepthFirst<'a> {
    index: &'a ClassIndex,
    config: &'a MinerConfig,
    baseline: Accuracy,
    /// `masks[d]` is the intersection of the first `d + 1` chosen tags.
    masks: Vec<Bitset>,
    positions: Vec<usize>,
    found: Vec<Found>,
    stats: MineStats,
}

impl<'a> DepthFirst<'a> {
    fn new(index: &'a ClassIndex, config: &'a MinerConfig) -> Self {
        let n = index.image_count();
        Self {
            index,
            config,
            baseline: index.baseline(),
            masks: vec![Bitset::zeros(n); config.max_tags],
            positions: Vec::with_capacity(config.max_tags),
            found: Vec::new(),
            stats: MineStats::default(),
        }
    }

    fn run_from(&mut self, first: usize) {
        let mask = &self.index.tag_masks[first];
        let support = mask.count();
        if support < self.config.min_support {
            self.stats.candidates_pruned_support += 1;
            return;
        }
        self.masks[0].clone_from(mask);
        let correct = mask.count_and(&self.index.correct_mask);
        self.positions.push(first);
        self.consider(Accuracy::new(correct, support));
        if self.config.max_tags > 1 {
            self.extend(1, first);
        }
        self.positions.pop();
    }

    fn extend(&mut self, depth: usize, last: usize) {
        let leaf = depth + 1 == self.config.max_tags;
        for next in last + 1..self.index.vocabulary.len() {
            let tag_mask = &self.index.tag_masks[next];
            let (support, correct) = if leaf {
                self.masks[depth - 1].count_and2(tag_mask, &self.index.correct_mask)
            } else {
                let (done, rest) = self.masks.split_at_mut(depth);
                rest[0].assign_and(&done[depth - 1], tag_mask);
                let support = rest[0].count();
                let correct = if support >= self.config.min_support {
                    rest[0].count_and(&self.index.correct_mask)
                } else {
                    0
                };
                (support, correct)
            };
            if support < self.config.min_support {
                self.stats.candidates_pruned_support += 1;
                continue;
            }
            self.positions.push(next);
            self.consider(Accuracy::new(correct, support));
            if !leaf {
                self.extend(depth + 1, next);
            }
            self.positions.pop();
        }
    }

    fn consider(&mut self, group: Accuracy) {
        self.stats.candidates_evaluated += 1;
        if let Some(found) = qualify(
            self.index,
            self.config,
            self.baseline,
            &self.positions,
            group,
        ) {
            self.found.push(found);
        }
    }
}

/// Applies the drop and minimality predicates to a tag set that already
/// meets the support floor.
fn qualify(
    index: &ClassIndex,
    config: &MinerConfig,
    baseline: Accuracy,
    positions: &[usize],
    group: Accuracy,
) -> Option<Found> {
    if !baseline.exceeds_by(group, config.min_drop) {
        return None;
    }
    let without = if positions.len() >= 2 {
        let margin = config.margin_for(positions.len());
        let without = accuracies_without_each(index, positions);
        if !without.iter().all(|w| w.exceeds_by(group, margin)) {
            return None;
        }
        without
    } else {
        Vec::new()
    };
    Some(Found {
        positions: positions.to_vec(),
        group,
        without,
    })
}

/// Accuracy of the group defined by `positions` minus each tag in turn.
fn accuracies_without_each(index: &ClassIndex, positions: &[usize]) -> Vec<Accuracy> {
    (0..positions.len())
        .map(|skip| {
            let rest: Vec<usize> = positions
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &p)| p)
                .collect();
            let mask = index.mask_of_positions(&rest);
            // a superset of the full group, so never empty once support >= 1
            Accuracy::new(mask.count_and(&index.correct_mask), mask.count())
        })
        .collect()
}

/// Beam search. Each beam member is extended by every tag it lacks; the
/// `beam_width` lowest-accuracy extensions of each member (with enough
/// support) form the next beam. Every tag set evaluated along the way is
/// then filtered with the same predicates as the exhaustive search.
pub fn mine_greedy(dataset: &TaggedDataset, config: &MinerConfig) -> Result<MineReport> {
    config.validate()?;
    if config.beam_width < 1 {
        return Err(Error::InvalidConfig("beam width must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let classes: Vec<&ClassIndex> = dataset.classes.values().collect();
    let results: Vec<(Vec<Found>, MineStats)> = classes
        .par_iter()
        .map(|index| greedy_class(index, config))
        .collect();
    let mut stats = MineStats::default();
    let mut per_class = Vec::with_capacity(classes.len());
    for (found, s) in results {
        stats.absorb(&s);
        per_class.push(found);
    }
    stats.wall_time = start.elapsed();
    Ok(finish(config, &classes, per_class, stats))
}

fn greedy_class(index: &ClassIndex, config: &MinerConfig) -> (Vec<Found>, MineStats) {
    let mut stats = MineStats::default();
    let mut visited: HashMap<Vec<usize>, Accuracy> = HashMap::new();
    let vocab = index.vocabulary.len();
    let lowest = |mut options: Vec<(Vec<usize>, Accuracy)>| {
        options.sort_by(|a, b| a.1.cmp_value(b.1).then_with(|| a.0.cmp(&b.0)));
        options.truncate(config.beam_width);
        options.into_iter().map(|(p, _)| p)
    };

    let mut level: Vec<(Vec<usize>, Accuracy)> = Vec::new();
    for t in 0..vocab {
        let mask = &index.tag_masks[t];
        let support = mask.count();
        if support < config.min_support {
            stats.candidates_pruned_support += 1;
            continue;
        }
        let acc = Accuracy::new(mask.count_and(&index.correct_mask), support);
        stats.candidates_evaluated += 1;
        visited.insert(vec![t], acc);
        level.push((vec![t], acc));
    }
    let mut beam: BTreeSet<Vec<usize>> = lowest(level).collect();

    for _depth in 2..=config.max_tags {
        let mut next = BTreeSet::new();
        for member in &beam {
            let mask = index.mask_of_positions(member);
            let mut children = Vec::new();
            for t in (0..vocab).filter(|t| !member.contains(t)) {
                let mut child = member.clone();
                let at = child.partition_point(|&p| p < t);
                child.insert(at, t);
                let acc = match visited.get(&child) {
                    Some(&acc) => acc,
                    None => {
                        let (support, correct) =
                            mask.count_and2(&index.tag_masks[t], &index.correct_mask);
                        if support < config.min_support {
                            stats.candidates_pruned_support += 1;
                            continue;
                        }
                        stats.candidates_evaluated += 1;
                        let acc = Accuracy::new(correct, support);
                        visited.insert(child.clone(), acc);
                        acc
                    }
                };
                children.push((child, acc));
            }
            next.extend(lowest(children));
        }
        if next.is_empty() {
            break;
        }
        beam = next;
    }

    let baseline = index.baseline();
    let mut found: Vec<Found> = visited
        .into_iter()
        .filter_map(|(positions, acc)| qualify(index, config, baseline, &positions, acc))
        .collect();
    found.sort_by(|a, b| a.positions.cmp(&b.positions));
    (found, stats)
}

fn finish(
    config: &MinerConfig,
    classes: &[&ClassIndex],
    per_class: Vec<Vec<Found>>,
    stats: MineStats,
) -> MineReport {
    let mut modes = Vec::new();
    let mut summaries = Vec::with_capacity(classes.len());
    for (index, mut found) in classes.iter().zip(per_class) {
        found.sort_by(|a, b| {
            a.positions
                .len()
                .cmp(&b.positions.len())
                .then_with(|| a.group.cmp_value(b.group))
                .then_with(|| a.positions.cmp(&b.positions))
        });
        summaries.push(ClassSummary {
            class_label: index.class_label.clone(),
            image_count: index.image_count(),
            vocabulary_size: index.vocabulary.len(),
            baseline_accuracy: index.baseline_accuracy(),
            modes: found.len(),
        });
        let baseline = index.baseline();
        modes.extend(found.into_iter().map(|f| {
            let tags = index.positions_to_tags(&f.positions);
            let margins = tags
                .iter()
                .cloned()
                .zip(f.without.iter().map(|&w| Margin::from_counts(w)))
                .collect();
            FailureMode::new(&index.class_label, tags, f.group, baseline, margins)
        }));
    }
    MineReport {
        config: config.clone(),
        classes: summaries,
        modes,
        stats,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimalityCheck {
    pub without: Accuracy,
    pub accuracy_without: f64,
    pub passes: bool,
}

/// For each tag of `tags`, the accuracy of the group without it and whether
/// that clears the group accuracy by the margin for `|tags|`.
pub fn check_minimality<S: AsRef<str>>(
    index: &ClassIndex,
    tags: &[S],
    config: &MinerConfig,
) -> Result<BTreeMap<String, MinimalityCheck>> {
    if tags.len() < 2 {
        return Err(Error::TagSetTooSmall(tags.len()));
    }
    let mut positions = index.tag_positions(tags)?;
    positions.sort_unstable();
    positions.dedup();
    if positions.len() < 2 {
        return Err(Error::TagSetTooSmall(positions.len()));
    }
    let group = index.group_counts(&index.mask_of_positions(&positions))?;
    let margin = config.margin_for(positions.len());
    let without = accuracies_without_each(index, &positions);
    Ok(positions
        .iter()
        .zip(without)
        .map(|(&p, w)| {
            (
                index.vocabulary[p].clone(),
                MinimalityCheck {
                    without: w,
                    accuracy_without: w.value(),
                    passes: w.exceeds_by(group, margin),
                },
            )
        })
        .collect())
}

/// Re-derives every reported mode from the dataset and lists any predicate
/// or bookkeeping violation. An empty list means the report is sound.
pub fn audit(report: &MineReport, dataset: &TaggedDataset) -> Vec<String> {
    let cfg = &report.config;
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    for m in &report.modes {
        let name = &m.description;
        if !seen.insert(m.key()) {
            problems.push(format!("{name}: duplicate mode"));
        }
        if m.tags.is_empty() || m.tags.len() > cfg.max_tags {
            problems.push(format!(
                "{name}: {} tags outside 1..={}",
                m.tags.len(),
                cfg.max_tags
            ));
            continue;
        }
        if !m.tags.windows(2).all(|w| w[0] < w[1]) {
            problems.push(format!("{name}: tags not sorted"));
        }
        let Some(index) = dataset.class(&m.class_label) else {
            problems.push(format!("{name}: class missing from dataset"));
            continue;
        };
        let group = match index
            .group_mask(&m.tags)
            .and_then(|mask| index.group_counts(&mask))
        {
            Ok(g) => g,
            Err(e) => {
                problems.push(format!("{name}: {e}"));
                continue;
            }
        };
        if group != m.group() || index.baseline() != m.baseline() {
            problems.push(format!("{name}: stored counts differ from dataset"));
        }
        if group.total < cfg.min_support {
            problems.push(format!(
                "{name}: support {} below {}",
                group.total, cfg.min_support
            ));
        }
        if !index.baseline().exceeds_by(group, cfg.min_drop) {
            problems.push(format!("{name}: drop below {}", cfg.min_drop));
        }
        if m.tags.len() >= 2 {
            match check_minimality(index, &m.tags, cfg) {
                Ok(checks) => {
                    for (tag, c) in checks {
                        if !c.passes {
                            problems.push(format!("{name}: tag {tag:?} is redundant"));
                        }
                        if m.minimality_margins.get(&tag).map(Margin::counts) != Some(c.without) {
                            problems.push(format!("{name}: stored margin for {tag:?} is wrong"));
                        }
                    }
                }
                Err(e) => problems.push(format!("{name}: {e}")),
            }
        }
    }
    let sorted = report.modes.windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        a.class_label
            .cmp(&b.class_label)
            .then(a.tags.len().cmp(&b.tags.len()))
            .then_with(|| a.group().cmp_value(b.group()))
            .then_with(|| a.tags.cmp(&b.tags))
            != Ordering::Greater
    });
    if !sorted {
        problems.push("modes are not in canonical order".into());
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::from_images;
    use crate::model::{normalize_tags, ImageRecord, Split};
    use crate::rate::Rate;

    fn class_from(rows: &[(&[&str], bool)]) -> TaggedDataset {
        let images: Vec<ImageRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (tags, correct))| ImageRecord {
                id: format!("i{i}"),
                class_label: "c".into(),
                tags: normalize_tags(tags.iter()),
                correct: *correct,
                split: Split::Train,
            })
            .collect();
        from_images(&images, 1, Split::Train).unwrap()
    }

    fn cfg(s: u64, a: &str, l: usize) -> MinerConfig {
        MinerConfig {
            min_support: s,
            min_drop: a.parse().unwrap(),
            max_tags: l,
            freq_threshold: 1,
            ..MinerConfig::default()
        }
    }

    #[test]
    fn all_correct_yields_nothing() {
        let rows: Vec<(&[&str], bool)> = (0..40)
            .map(|i| {
                (
                    if i % 2 == 0 {
                        &["a", "b"][..]
                    } else {
                        &["a"][..]
                    },
                    true,
                )
            })
            .collect();
        let ds = class_from(&rows);
        let r = mine_exhaustive(&ds, &cfg(1, "0.1", 3)).unwrap();
        assert!(r.modes.is_empty());
        assert!(r.stats.candidates_evaluated > 0);
    }

    #[test]
    fn empty_vocabulary_yields_nothing() {
        let rows: Vec<(&[&str], bool)> = (0..10).map(|i| (&[][..], i % 2 == 0)).collect();
        let ds = class_from(&rows);
        assert!(mine_exhaustive(&ds, &cfg(1, "0.1", 3))
            .unwrap()
            .modes
            .is_empty());
    }

    #[test]
    fn empty_dataset_and_bad_config_are_errors() {
        let ds = TaggedDataset {
            split: Split::Train,
            classes: BTreeMap::new(),
        };
        assert!(matches!(
            mine_exhaustive(&ds, &cfg(1, "0.1", 2)),
            Err(Error::EmptyDataset)
        ));
        let ds = class_from(&[(&["a"], true)]);
        assert!(matches!(
            mine_exhaustive(&ds, &cfg(0, "0.1", 2)),
            Err(Error::InvalidConfig(_))
        ));
    }

    /// Pair {a, b} fails, each tag alone is fine.
    fn planted_pair() -> TaggedDataset {
        let mut rows: Vec<(&[&str], bool)> = Vec::new();
        for i in 0..20 {
            rows.push((&["a", "b"], i < 4)); // 20% on the pair
            rows.push((&["a"], i < 18));
            rows.push((&["b"], i < 18));
            rows.push((&["z"], i < 19));
        }
        class_from(&rows)
    }

    #[test]
    fn finds_planted_pair_with_margins() {
        let ds = planted_pair();
        let r = mine_exhaustive(&ds, &cfg(10, "0.3", 3)).unwrap();
        let keys: Vec<_> = r.modes.iter().map(|m| m.tags.clone()).collect();
        assert_eq!(keys, vec![vec!["a".to_string(), "b".to_string()]]);
        let m = &r.modes[0];
        assert_eq!(m.support, 20);
        assert_eq!(m.group_correct, 4);
        assert_eq!(m.description, "c: a + b");
        // a alone: 40 images, 22 correct
        assert_eq!(m.minimality_margins["b"].counts(), Accuracy::new(22, 40));
        assert!(audit(&r, &ds).is_empty());
    }

    #[test]
    fn redundant_tag_fails_minimality() {
        // "r" appears on every image of {a}, so {a, r} has the same group as {a}
        let mut rows: Vec<(&[&str], bool)> = Vec::new();
        for i in 0..20 {
            rows.push((&["a", "r"], i < 2));
            rows.push((&["z"], i < 19));
        }
        let ds = class_from(&rows);
        let index = ds.class("c").unwrap();
        let checks = check_minimality(index, &["a", "r"], &MinerConfig::default()).unwrap();
        assert!(checks.values().all(|c| !c.passes));
        assert_eq!(checks["a"].without, checks["r"].without);
        let r = mine_exhaustive(&ds, &cfg(5, "0.3", 2)).unwrap();
        let keys: Vec<_> = r.modes.iter().map(|m| m.tags.clone()).collect();
        assert_eq!(keys, vec![vec!["a".to_string()], vec!["r".to_string()]]);
    }

    #[test]
    fn check_minimality_errors() {
        let ds = planted_pair();
        let index = ds.class("c").unwrap();
        assert!(matches!(
            check_minimality(index, &["a"], &MinerConfig::default()),
            Err(Error::TagSetTooSmall(1))
        ));
        assert!(matches!(
            check_minimality(index, &["a", "nope"], &MinerConfig::default()),
            Err(Error::UnknownTag(_))
        ));
    }

    #[test]
    fn minimality_boundary_is_inclusive() {
        // group {a,b}: 2/10 correct; {a}: 30 images 9 correct (0.3); b likewise
        // 0.3 - 0.2 == b2 exactly, so the pair passes
        let mut rows: Vec<(&[&str], bool)> = Vec::new();
        for i in 0..10 {
            rows.push((&["a", "b"], i < 2));
        }
        for i in 0..20 {
            rows.push((&["a"], i < 7));
            rows.push((&["b"], i < 7));
        }
        for _ in 0..60 {
            rows.push((&["z"], true));
        }
        let ds = class_from(&rows);
        let index = ds.class("c").unwrap();
        let checks = check_minimality(index, &["a", "b"], &MinerConfig::default()).unwrap();
        assert_eq!(checks["a"].without, Accuracy::new(9, 30));
        assert!(checks.values().all(|c| c.passes));
        let strict = MinerConfig {
            b_schedule: vec![Rate::new(101, 1000)],
            ..MinerConfig::default()
        };
        let checks = check_minimality(index, &["a", "b"], &strict).unwrap();
        assert!(checks.values().all(|c| !c.passes));
    }

    #[test]
    fn greedy_with_full_width_matches_exhaustive() {
        let ds = planted_pair();
        let mut c = cfg(5, "0.2", 3);
        let ex = mine_exhaustive(&ds, &c).unwrap();
        c.strategy = Strategy::Greedy;
        c.beam_width = 4;
        let gr = mine_greedy(&ds, &c).unwrap();
        assert_eq!(ex.modes, gr.modes);
    }

    #[test]
    fn report_is_deterministic_and_sorted() {
        let ds = planted_pair();
        let c = cfg(1, "0.05", 3);
        let a = mine_exhaustive(&ds, &c).unwrap();
        let b = mine_exhaustive(&ds, &c).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert!(audit(&a, &ds).is_empty());
    }

    #[test]
    fn audit_catches_tampering() {
        let ds = planted_pair();
        let mut r = mine_exhaustive(&ds, &cfg(10, "0.3", 3)).unwrap();
        r.modes[0].group_correct += 1;
        r.modes.push(r.modes[0].clone());
        let problems = audit(&r, &ds);
        assert!(problems.iter().any(|p| p.contains("stored counts")));
        assert!(problems.iter().any(|p| p.contains("duplicate")));
    }
}
