//! Domain types shared by every stage: images, per-class tag incidence, and
//! the mined failure modes themselves.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::error::{Error, Result};
use crate::rate::{Accuracy, Rate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Holdout,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Holdout => "holdout",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "holdout" => Ok(Split::Holdout),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

/// Lowercases, trims, and collapses internal runs of whitespace.
/// Returns `None` for tags that are empty after normalization.
pub fn normalize_tag(raw: &str) -> Option<String> {
    let joined = raw
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ");
    (!joined.is_empty()).then_some(joined)
}

/// Normalizes and deduplicates a tag list.
pub fn normalize_tags<I, S>(raw: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    raw.into_iter()
        .filter_map(|t| normalize_tag(t.as_ref()))
        .collect()
}

/// One line of a tags file: an image before its correctness is known.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRecord {
    pub id: String,
    #[serde(rename = "class")]
    pub class_label: String,
    pub split: Split,
    pub tags: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub class_label: String,
    pub tags: BTreeSet<String>,
    pub correct: bool,
    pub split: Split,
}

impl ImageRecord {
    pub fn from_tagged(record: &TagRecord, correct: bool) -> Self {
        Self {
            id: record.id.clone(),
            class_label: record.class_label.clone(),
            tags: record.tags.clone(),
            correct,
            split: record.split,
        }
    }
}

/// Tag incidence for the images of a single class.
///
/// Bit `i` of every mask refers to `image_ids[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassIndex {
    pub class_label: String,
    pub vocabulary: Vec<String>,
    pub image_ids: Vec<String>,
    pub tag_masks: Vec<Bitset>,
    pub correct_mask: Bitset,
}

impl ClassIndex {
    /// Builds the index for one class, keeping only tags that occur in at
    /// least `freq_threshold` images.
    pub fn build(records: &[ImageRecord], freq_threshold: u64) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyClass)?;
        let class_label = first.class_label.clone();
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for r in records {
            if r.class_label != class_label {
                return Err(Error::MixedClasses {
                    expected: class_label,
                    found: r.class_label.clone(),
                });
            }
            for t in &r.tags {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let vocabulary: Vec<String> = counts
            .into_iter()
            .filter(|&(_, c)| c >= freq_threshold)
            .map(|(t, _)| t.to_string())
            .collect();
        let n = records.len();
        let slot: HashMap<&str, usize> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let mut tag_masks = vec![Bitset::zeros(n); vocabulary.len()];
        let mut correct_mask = Bitset::zeros(n);
        for (i, r) in records.iter().enumerate() {
            for t in &r.tags {
                if let Some(&k) = slot.get(t.as_str()) {
                    tag_masks[k].insert(i);
                }
            }
            if r.correct {
                correct_mask.insert(i);
            }
        }
        Ok(Self {
            class_label,
            vocabulary,
            image_ids: records.iter().map(|r| r.id.clone()).collect(),
            tag_masks,
            correct_mask,
        })
    }

    pub fn image_count(&self) -> usize {
        self.image_ids.len()
    }

    pub fn baseline(&self) -> Accuracy {
        Accuracy::new(self.correct_mask.count(), self.image_count() as u64)
    }

    pub fn baseline_accuracy(&self) -> f64 {
        self.baseline().value()
    }

    pub fn tag_position(&self, tag: &str) -> Option<usize> {
        self.vocabulary
            .binary_search_by(|t| t.as_str().cmp(tag))
            .ok()
    }

    pub fn tag_positions<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.tag_position(t.as_ref())
                    .ok_or_else(|| Error::UnknownTag(t.as_ref().to_string()))
            })
            .collect()
    }

    /// Images containing every tag in `tags`; the empty set selects the whole class.
    pub fn group_mask<S: AsRef<str>>(&self, tags: &[S]) -> Result<Bitset> {
        let positions = self.tag_positions(tags)?;
        Ok(self.mask_of_positions(&positions))
    }

    pub fn mask_of_positions(&self, positions: &[usize]) -> Bitset {
        let mut iter = positions.iter();
        match iter.next() {
            None => Bitset::ones(self.image_count()),
            Some(&first) => {
                let mut mask = self.tag_masks[first].clone();
                for &p in iter {
                    mask = mask.and(&self.tag_masks[p]);
                }
                mask
            }
        }
    }

    /// Accuracy counts over the images selected by `mask`.
    pub fn group_counts(&self, mask: &Bitset) -> Result<Accuracy> {
        let total = mask.count();
        if total == 0 {
            return Err(Error::EmptyGroup);
        }
        Ok(Accuracy::new(mask.count_and(&self.correct_mask), total))
    }

    pub fn group_accuracy(&self, mask: &Bitset) -> Result<f64> {
        self.group_counts(mask).map(Accuracy::value)
    }

    pub fn positions_to_tags(&self, positions: &[usize]) -> Vec<String> {
        positions
            .iter()
            .map(|&p| self.vocabulary[p].clone())
            .collect()
    }
}

/// One split of the data, indexed per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedDataset {
    pub split: Split,
    pub classes: BTreeMap<String, ClassIndex>,
}

impl TaggedDataset {
    pub fn image_count(&self) -> usize {
        self.classes.values().map(ClassIndex::image_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class(&self, label: &str) -> Option<&ClassIndex> {
        self.classes.get(label)
    }

    /// `(class, bit position)` of every image id.
    pub fn id_table(&self) -> HashMap<&str, (&str, usize)> {
        self.classes
            .values()
            .flat_map(|c| {
                c.image_ids
                    .iter()
                    .enumerate()
                    .map(move |(bit, id)| (id.as_str(), (c.class_label.as_str(), bit)))
            })
            .collect()
    }

    pub fn image_id(&self, class: &str, bit: usize) -> Option<&str> {
        self.classes
            .get(class)
            .and_then(|c| c.image_ids.get(bit))
            .map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Exhaustive,
    Greedy,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Strategy::Exhaustive),
            "greedy" => Ok(Strategy::Greedy),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Search hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinerConfig {
    /// Minimum group size.
    pub min_support: u64,
    /// Minimum accuracy drop below the class baseline.
    pub min_drop: Rate,
    /// Minimality margins `[b2, b3, b4, ...]`.
    pub b_schedule: Vec<Rate>,
    /// Largest tag set considered.
    pub max_tags: usize,
    pub freq_threshold: u64,
    pub strategy: Strategy,
    pub beam_width: usize,
    pub seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            min_support: 30,
            min_drop: Rate::new(3, 10),
            b_schedule: vec![Rate::new(1, 10), Rate::new(1, 20), Rate::new(1, 40)],
            max_tags: 4,
            freq_threshold: 50,
            strategy: Strategy::Exhaustive,
            beam_width: 5,
            seed: 0,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.min_support < 1 {
            return bad("minimum support must be at least 1".into());
        }
        if !self.min_drop.is_proper_fraction() {
            return bad(format!(
                "accuracy drop {} must lie in (0, 1)",
                self.min_drop
            ));
        }
        if let Some(b) = self.b_schedule.iter().find(|b| !b.is_proper_fraction()) {
            return bad(format!("minimality margin {b} must lie in (0, 1)"));
        }
        if self.b_schedule.is_empty() && self.max_tags >= 2 {
            return bad("minimality schedule is empty".into());
        }
        if self.max_tags < 1 {
            return bad("maximum tag count must be at least 1".into());
        }
        if self.strategy == Strategy::Greedy && self.beam_width < 1 {
            return bad("beam width must be at least 1".into());
        }
        Ok(())
    }

    /// Minimality margin for tag sets of size `n >= 2`. Sizes past the end of
    /// the schedule continue by halving from `b2`.
    pub fn margin_for(&self, n: usize) -> Rate {
        assert!(n >= 2, "minimality margins start at two tags");
        if let Some(&b) = self.b_schedule.get(n - 2) {
            return b;
        }
        let mut b = self.b_schedule[0];
        for _ in 2..n {
            b = b.halved();
        }
        b
    }
}

/// Accuracy of the group left after dropping one tag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub support: u64,
    pub correct: u64,
    pub accuracy: f64,
}

impl Margin {
    pub fn from_counts(acc: Accuracy) -> Self {
        Self {
            support: acc.total,
            correct: acc.correct,
            accuracy: acc.value(),
        }
    }

    pub fn counts(&self) -> Accuracy {
        Accuracy::new(self.correct, self.support)
    }
}

/// A class plus a tag set whose images the classifier gets markedly wrong.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureMode {
    #[serde(rename = "class")]
    pub class_label: String,
    pub tags: Vec<String>,
    pub description: String,
    pub support: u64,
    pub group_correct: u64,
    pub group_accuracy: f64,
    pub class_size: u64,
    pub class_correct: u64,
    pub baseline_accuracy: f64,
    pub drop: f64,
    pub minimality_margins: BTreeMap<String, Margin>,
}

impl FailureMode {
    pub fn new(
        class_label: &str,
        tags: Vec<String>,
        group: Accuracy,
        baseline: Accuracy,
        minimality_margins: BTreeMap<String, Margin>,
    ) -> Self {
        debug_assert!(tags.windows(2).all(|w| w[0] < w[1]));
        Self {
            class_label: class_label.to_string(),
            description: describe(class_label, &tags),
            tags,
            support: group.total,
            group_correct: group.correct,
            group_accuracy: group.value(),
            class_size: baseline.total,
            class_correct: baseline.correct,
            baseline_accuracy: baseline.value(),
            drop: baseline.value() - group.value(),
            minimality_margins,
        }
    }

    pub fn group(&self) -> Accuracy {
        Accuracy::new(self.group_correct, self.support)
    }

    pub fn baseline(&self) -> Accuracy {
        Accuracy::new(self.class_correct, self.class_size)
    }

    pub fn key(&self) -> (&str, &[String]) {
        (&self.class_label, &self.tags)
    }
}

/// `"<class>: <tag1> + <tag2> + ..."`, also the lookup key for description
/// embeddings.
pub fn describe<S: AsRef<str>>(class_label: &str, tags: &[S]) -> String {
    let joined = tags
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" + ");
    format!("{class_label}: {joined}")
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as PStrategy;

    fn record(id: &str, class: &str, tags: &[&str], correct: bool) -> ImageRecord {
        ImageRecord {
            id: id.into(),
            class_label: class.into(),
            tags: normalize_tags(tags),
            correct,
            split: Split::Train,
        }
    }

    #[test]
    fn normalization_lowercases_trims_and_collapses() {
        assert_eq!(normalize_tag("  Snow  "), Some("snow".into()));
        assert_eq!(normalize_tag("Tree\t Branch"), Some("tree branch".into()));
        assert_eq!(normalize_tag("   "), None);
        let set = normalize_tags(["Snow", "snow ", ""]);
        assert_eq!(
            set.into_iter().collect::<Vec<_>>(),
            vec!["snow".to_string()]
        );
    }

    #[test]
    fn vocabulary_respects_threshold() {
        let recs = vec![
            record("1", "c", &["a", "b"], true),
            record("2", "c", &["a"], true),
            record("3", "c", &["b"], false),
        ];
        let idx = ClassIndex::build(&recs, 2).unwrap();
        assert_eq!(idx.vocabulary, vec!["a", "b"]);
        assert!(idx.tag_masks.iter().all(|m| m.count() == 2));
        assert!(idx.tag_masks.iter().all(|m| m.len() == 3));

        let idx3 = ClassIndex::build(&recs, 3).unwrap();
        assert!(idx3.vocabulary.is_empty());
    }

    #[test]
    fn build_rejects_empty_and_mixed() {
        assert!(matches!(ClassIndex::build(&[], 1), Err(Error::EmptyClass)));
        let recs = vec![record("1", "a", &[], true), record("2", "b", &[], true)];
        assert!(matches!(
            ClassIndex::build(&recs, 1),
            Err(Error::MixedClasses { .. })
        ));
    }

    #[test]
    fn all_correct_baseline_is_one() {
        let recs: Vec<_> = (0..4)
            .map(|i| record(&i.to_string(), "c", &["x"], true))
            .collect();
        let idx = ClassIndex::build(&recs, 1).unwrap();
        assert_eq!(idx.baseline_accuracy(), 1.0);
    }

    #[test]
    fn group_mask_and_accuracy() {
        // masks a=1100, b=1010; correct=0110
        let recs = vec![
            record("0", "c", &["a", "b"], false),
            record("1", "c", &["a"], true),
            record("2", "c", &["b"], true),
            record("3", "c", &[], false),
        ];
        let idx = ClassIndex::build(&recs, 1).unwrap();
        let ab = idx.group_mask(&["a", "b"]).unwrap();
        assert_eq!(ab.iter_ones().collect::<Vec<_>>(), vec![0]);
        let empty: [&str; 0] = [];
        assert_eq!(idx.group_mask(&empty).unwrap().count(), 4);
        assert!(matches!(idx.group_mask(&["zzz"]), Err(Error::UnknownTag(t)) if t == "zzz"));

        let mask = Bitset::from_bools(&[true, true, true, false]);
        assert!((idx.group_accuracy(&mask).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let all = idx.group_mask(&empty).unwrap();
        assert_eq!(idx.group_counts(&all).unwrap(), idx.baseline());
        assert!(matches!(
            idx.group_accuracy(&Bitset::zeros(4)),
            Err(Error::EmptyGroup)
        ));
    }

    #[test]
    fn margin_schedule_extends_by_halving() {
        let cfg = MinerConfig::default();
        assert_eq!(cfg.margin_for(2), Rate::new(1, 10));
        assert_eq!(cfg.margin_for(3), Rate::new(1, 20));
        assert_eq!(cfg.margin_for(4), Rate::new(1, 40));
        assert_eq!(cfg.margin_for(5), Rate::new(1, 80));
        assert_eq!(cfg.margin_for(6), Rate::new(1, 160));
        let custom = MinerConfig {
            b_schedule: vec![Rate::new(1, 5)],
            ..MinerConfig::default()
        };
        assert_eq!(custom.margin_for(3), Rate::new(1, 10));
    }

    #[test]
    fn config_validation() {
        assert!(MinerConfig::default().validate().is_ok());
        for bad in [
            MinerConfig {
                min_support: 0,
                ..MinerConfig::default()
            },
            MinerConfig {
                min_drop: Rate::zero(),
                ..MinerConfig::default()
            },
            MinerConfig {
                min_drop: Rate::new(1, 1),
                ..MinerConfig::default()
            },
            MinerConfig {
                max_tags: 0,
                ..MinerConfig::default()
            },
            MinerConfig {
                b_schedule: vec![Rate::new(3, 2)],
                ..MinerConfig::default()
            },
            MinerConfig {
                strategy: Strategy::Greedy,
                beam_width: 0,
                ..MinerConfig::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn description_format() {
        assert_eq!(describe("wolf", &["floor", "hide"]), "wolf: floor + hide");
    }

    fn random_class() -> impl PStrategy<Value = Vec<ImageRecord>> {
        proptest::collection::vec(
            (proptest::collection::vec(0usize..6, 0..5), any::<bool>()),
            1..80,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (tags, correct))| {
                    let names: Vec<String> = tags.iter().map(|t| format!("t{t}")).collect();
                    ImageRecord {
                        id: format!("img{i}"),
                        class_label: "c".into(),
                        tags: normalize_tags(&names),
                        correct,
                        split: Split::Train,
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn group_mask_matches_record_scan(recs in random_class(), pick in proptest::collection::btree_set(0usize..6, 0..4)) {
            let idx = ClassIndex::build(&recs, 1).unwrap();
            let wanted: Vec<String> = pick.iter().map(|t| format!("t{t}")).filter(|t| idx.tag_position(t).is_some()).collect();
            let mask = idx.group_mask(&wanted).unwrap();
            let members: Vec<&ImageRecord> = recs.iter().filter(|r| wanted.iter().all(|t| r.tags.contains(t))).collect();
            prop_assert_eq!(mask.count() as usize, members.len());
            if !members.is_empty() {
                let correct = members.iter().filter(|r| r.correct).count();
                prop_assert_eq!(idx.group_counts(&mask).unwrap(), Accuracy::new(correct as u64, members.len() as u64));
            }
            // intersection of singleton masks, and support is anti-monotone
            let mut inter = Bitset::ones(idx.image_count());
            for t in &wanted {
                let single = idx.group_mask(std::slice::from_ref(t)).unwrap();
                prop_assert!(mask.count() <= single.count());
                inter = inter.and(&single);
            }
            prop_assert_eq!(inter, mask);
        }
    }
}
