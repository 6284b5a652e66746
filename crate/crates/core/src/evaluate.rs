//! Holdout evaluation of mined modes: does the same tag set pick out a hard
//! group of unseen images, and is the full tag set harder than its subsets?

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::MineReport;
use crate::model::{ClassIndex, FailureMode, TaggedDataset};
use crate::rate::{Accuracy, Rate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutStatus {
    Ok,
    /// Fewer holdout images than `min_holdout_support` carry the tags.
    InsufficientSupport,
    ClassMissing,
    /// Some tag is not in the holdout class vocabulary.
    TagsMissing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRecord {
    #[serde(rename = "class")]
    pub class_label: String,
    pub tags: Vec<String>,
    pub description: String,
    pub train_support: u64,
    pub train_accuracy: f64,
    pub train_drop: f64,
    pub holdout_class_size: u64,
    pub holdout_class_correct: u64,
    pub holdout_baseline: Option<f64>,
    pub holdout_support: u64,
    pub holdout_correct: u64,
    pub holdout_accuracy: Option<f64>,
    pub holdout_drop: Option<f64>,
    pub status: HoldoutStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdShare {
    pub threshold: Rate,
    /// Evaluated modes whose holdout drop reaches the threshold.
    pub count: usize,
    pub fraction_of_evaluated: Option<f64>,
    pub fraction_of_all: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    #[serde(rename = "class")]
    pub class_label: String,
    pub tags: Vec<String>,
    pub train_drop: f64,
    pub holdout_drop: f64,
    pub holdout_support: u64,
}

/// The `y = x` line over the range spanned by the scatter points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLine {
    pub slope: f64,
    pub intercept: f64,
    pub from: [f64; 2],
    pub to: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationSummary {
    pub modes: usize,
    pub evaluated: usize,
    pub flagged: BTreeMap<HoldoutStatus, usize>,
    pub min_holdout_support: u64,
    pub thresholds: Vec<ThresholdShare>,
    pub mean_abs_drop_gap: Option<f64>,
    pub mean_train_drop: Option<f64>,
    pub mean_holdout_drop: Option<f64>,
    pub scatter: Vec<ScatterPoint>,
    pub reference_line: ReferenceLine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generalization {
    pub records: Vec<GeneralizationRecord>,
    pub summary: GeneralizationSummary,
}

#[derive(Clone, Debug)]
pub struct GeneralizeOptions {
    pub min_holdout_support: u64,
    pub drop_thresholds: Vec<Rate>,
}

impl Default for GeneralizeOptions {
    fn default() -> Self {
        Self {
            min_holdout_support: 10,
            drop_thresholds: vec![Rate::new(1, 5), Rate::new(1, 4)],
        }
    }
}

/// Looks up each mode's tags in the same class of `holdout` and measures the
/// accuracy drop there against the holdout class baseline.
pub fn generalize(
    report: &MineReport,
    holdout: &TaggedDataset,
    opts: &GeneralizeOptions,
) -> Generalization {
    let records: Vec<GeneralizationRecord> = report
        .modes
        .iter()
        .map(|m| generalize_one(m, holdout, opts.min_holdout_support))
        .collect();
    let summary = summarize(&records, opts);
    Generalization { records, summary }
}

fn generalize_one(
    mode: &FailureMode,
    holdout: &TaggedDataset,
    min_support: u64,
) -> GeneralizationRecord {
    let mut rec = GeneralizationRecord {
        class_label: mode.class_label.clone(),
        tags: mode.tags.clone(),
        description: mode.description.clone(),
        train_support: mode.support,
        train_accuracy: mode.group_accuracy,
        train_drop: mode.drop,
        holdout_class_size: 0,
        holdout_class_correct: 0,
        holdout_baseline: None,
        holdout_support: 0,
        holdout_correct: 0,
        holdout_accuracy: None,
        holdout_drop: None,
        status: HoldoutStatus::Ok,
        missing_tags: Vec::new(),
    };
    let Some(index) = holdout.class(&mode.class_label) else {
        rec.status = HoldoutStatus::ClassMissing;
        return rec;
    };
    let baseline = index.baseline();
    rec.holdout_class_size = baseline.total;
    rec.holdout_class_correct = baseline.correct;
    rec.holdout_baseline = Some(baseline.value());
    rec.missing_tags = mode
        .tags
        .iter()
        .filter(|t| index.tag_position(t).is_none())
        .cloned()
        .collect();
    if !rec.missing_tags.is_empty() {
        rec.status = HoldoutStatus::TagsMissing;
        return rec;
    }
    let group = counts_for(index, &mode.tags);
    rec.holdout_support = group.total;
    rec.holdout_correct = group.correct;
    if group.total < min_support.max(1) {
        rec.status = HoldoutStatus::InsufficientSupport;
        return rec;
    }
    rec.holdout_accuracy = Some(group.value());
    rec.holdout_drop = Some(baseline.value() - group.value());
    rec
}

/// Counts over the class images carrying all `tags`; tags outside the
/// vocabulary select nothing.
fn counts_for(index: &ClassIndex, tags: &[String]) -> Accuracy {
    match index.group_mask(tags) {
        Ok(mask) => Accuracy::new(mask.count_and(&index.correct_mask), mask.count()),
        Err(_) => Accuracy::new(0, 0),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(records: &[GeneralizationRecord], opts: &GeneralizeOptions) -> GeneralizationSummary {
    let ok: Vec<&GeneralizationRecord> = records
        .iter()
        .filter(|r| r.status == HoldoutStatus::Ok)
        .collect();
    let mut flagged = BTreeMap::new();
    for r in records.iter().filter(|r| r.status != HoldoutStatus::Ok) {
        *flagged.entry(r.status).or_insert(0) += 1;
    }
    let thresholds = opts
        .drop_thresholds
        .iter()
        .map(|&threshold| {
            let count = ok
                .iter()
                .filter(|r| {
                    let base = Accuracy::new(r.holdout_class_correct, r.holdout_class_size);
                    base.exceeds_by(
                        Accuracy::new(r.holdout_correct, r.holdout_support),
                        threshold,
                    )
                })
                .count();
            ThresholdShare {
                threshold,
                count,
                fraction_of_evaluated: (!ok.is_empty()).then(|| count as f64 / ok.len() as f64),
                fraction_of_all: (!records.is_empty()).then(|| count as f64 / records.len() as f64),
            }
        })
        .collect();
    let scatter: Vec<ScatterPoint> = ok
        .iter()
        .map(|r| ScatterPoint {
            class_label: r.class_label.clone(),
            tags: r.tags.clone(),
            train_drop: r.train_drop,
            holdout_drop: r.holdout_drop.unwrap_or(f64::NAN),
            holdout_support: r.holdout_support,
        })
        .collect();
    let lo = scatter
        .iter()
        .flat_map(|p| [p.train_drop, p.holdout_drop])
        .fold(f64::INFINITY, f64::min);
    let hi = scatter
        .iter()
        .flat_map(|p| [p.train_drop, p.holdout_drop])
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if scatter.is_empty() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    };
    GeneralizationSummary {
        modes: records.len(),
        evaluated: ok.len(),
        flagged,
        min_holdout_support: opts.min_holdout_support,
        thresholds,
        mean_abs_drop_gap: mean(
            scatter
                .iter()
                .map(|p| (p.train_drop - p.holdout_drop).abs()),
        ),
        mean_train_drop: mean(scatter.iter().map(|p| p.train_drop)),
        mean_holdout_drop: mean(scatter.iter().map(|p| p.holdout_drop)),
        scatter,
        reference_line: ReferenceLine {
            slope: 1.0,
            intercept: 0.0,
            from: [lo, lo],
            to: [hi, hi],
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub size: usize,
    pub tags: Vec<String>,
    pub support: u64,
    pub accuracy: Option<f64>,
    pub drop: Option<f64>,
    /// Zero support; excluded from the size means.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    #[serde(rename = "class")]
    pub class_label: String,
    pub tags: Vec<String>,
    pub baseline_accuracy: f64,
    /// Every nonempty subset of the mode's tags, largest first; the full set
    /// is the first row.
    pub rows: Vec<AblationRow>,
    /// Mean drop over the unflagged subsets of each size.
    pub mean_drop_by_size: BTreeMap<usize, Option<f64>>,
}

/// Accuracy of every nonempty subset of a mode's tags on `dataset`.
pub fn subset_ablation(mode: &FailureMode, dataset: &TaggedDataset) -> Result<AblationTable> {
    let n = mode.tags.len();
    if n < 2 {
        return Err(Error::TagSetTooSmall(n));
    }
    let index = dataset
        .class(&mode.class_label)
        .ok_or_else(|| Error::UnknownClass(mode.class_label.clone()))?;
    let baseline = index.baseline();
    let mut subsets: Vec<Vec<String>> = (1u32..(1 << n))
        .map(|bits| {
            (0..n)
                .filter(|i| bits & (1 << i) != 0)
                .map(|i| mode.tags[i].clone())
                .collect()
        })
        .collect();
    subsets.sort_by(|a: &Vec<String>, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let rows: Vec<AblationRow> = subsets
        .into_iter()
        .map(|tags| {
            let acc = counts_for(index, &tags);
            let defined = acc.total > 0;
            AblationRow {
                size: tags.len(),
                support: acc.total,
                accuracy: defined.then(|| acc.value()),
                drop: defined.then(|| baseline.value() - acc.value()),
                flagged: !defined,
                tags,
            }
        })
        .collect();
    let mean_drop_by_size = (1..=n)
        .map(|k| {
            (
                k,
                mean(rows.iter().filter(|r| r.size == k).filter_map(|r| r.drop)),
            )
        })
        .collect();
    Ok(AblationTable {
        class_label: mode.class_label.clone(),
        tags: mode.tags.clone(),
        baseline_accuracy: baseline.value(),
        rows,
        mean_drop_by_size,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationAggregate {
    pub mode_size: usize,
    pub subset_size: usize,
    pub modes: usize,
    pub mean_drop: f64,
}

/// Averages per-mode size means across modes with the same tag count.
pub fn ablation_summary(tables: &[AblationTable]) -> Vec<AblationAggregate> {
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for t in tables {
        for (&k, v) in &t.mean_drop_by_size {
            if let Some(v) = v {
                let e = acc.entry((t.tags.len(), k)).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    let mut out: Vec<AblationAggregate> = acc
        .into_iter()
        .map(
            |((mode_size, subset_size), (sum, modes))| AblationAggregate {
                mode_size,
                subset_size,
                modes,
                mean_drop: sum / modes as f64,
            },
        )
        .collect();
    out.sort_by(|a, b| {
        a.mode_size
            .cmp(&b.mode_size)
            .then(b.subset_size.cmp(&a.subset_size))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::from_images;
    use crate::miner::mine_exhaustive;
    use crate::model::{normalize_tags, ImageRecord, MinerConfig, Split};

    fn dataset(rows: &[(&str, &[&str], bool)], split: Split) -> TaggedDataset {
        let images: Vec<ImageRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (class, tags, correct))| ImageRecord {
                id: format!("{split}{i}"),
                class_label: class.to_string(),
                tags: normalize_tags(tags.iter()),
                correct: *correct,
                split,
            })
            .collect();
        from_images(&images, 1, split).unwrap()
    }

    fn rows() -> Vec<(&'static str, &'static [&'static str], bool)> {
        let mut rows = Vec::new();
        for i in 0..20 {
            rows.push(("c", &["a", "b"][..], i < 4));
            rows.push(("c", &["a"][..], i < 18));
            rows.push(("c", &["b"][..], i < 18));
            rows.push(("c", &["z"][..], i < 19));
        }
        rows
    }

    fn config() -> MinerConfig {
        MinerConfig {
            min_support: 10,
            freq_threshold: 1,
            max_tags: 3,
            ..MinerConfig::default()
        }
    }

    #[test]
    fn identical_holdout_reproduces_train_drop() {
        let train = dataset(&rows(), Split::Train);
        let report = mine_exhaustive(&train, &config()).unwrap();
        assert!(!report.modes.is_empty());
        let g = generalize(&report, &train, &GeneralizeOptions::default());
        for r in &g.records {
            assert_eq!(r.status, HoldoutStatus::Ok);
            assert_eq!(r.holdout_drop, Some(r.train_drop));
        }
        assert_eq!(g.summary.mean_abs_drop_gap, Some(0.0));
        assert_eq!(g.summary.reference_line.slope, 1.0);
    }

    #[test]
    fn flags_missing_class_tags_and_low_support() {
        let train = dataset(&rows(), Split::Train);
        let report = mine_exhaustive(&train, &config()).unwrap();
        let other = dataset(&[("d", &["a"], true)], Split::Holdout);
        let g = generalize(&report, &other, &GeneralizeOptions::default());
        assert!(g
            .records
            .iter()
            .all(|r| r.status == HoldoutStatus::ClassMissing));
        assert_eq!(g.summary.evaluated, 0);

        let no_b = dataset(&[("c", &["a"], true), ("c", &["z"], false)], Split::Holdout);
        let g = generalize(&report, &no_b, &GeneralizeOptions::default());
        assert_eq!(g.records[0].status, HoldoutStatus::TagsMissing);
        assert_eq!(g.records[0].missing_tags, vec!["b".to_string()]);

        let few = dataset(
            &[("c", &["a", "b"], false), ("c", &["z"], true)],
            Split::Holdout,
        );
        let g = generalize(&report, &few, &GeneralizeOptions::default());
        assert_eq!(g.records[0].status, HoldoutStatus::InsufficientSupport);
        assert_eq!(g.records[0].holdout_support, 1);
    }

    #[test]
    fn threshold_shares() {
        let train = dataset(&rows(), Split::Train);
        let report = mine_exhaustive(&train, &config()).unwrap();
        let opts = GeneralizeOptions {
            min_holdout_support: 10,
            drop_thresholds: vec![Rate::new(1, 2), Rate::new(3, 5)],
        };
        let g = generalize(&report, &train, &opts);
        // the pair drops 59/80 - 4/20 = 0.5375
        assert_eq!(g.summary.thresholds[0].count, 1);
        assert_eq!(g.summary.thresholds[1].count, 0);
        assert_eq!(g.summary.thresholds[0].fraction_of_all, Some(1.0));
    }

    #[test]
    fn ablation_of_two_tags_has_two_singletons() {
        let train = dataset(&rows(), Split::Train);
        let report = mine_exhaustive(&train, &config()).unwrap();
        let t = subset_ablation(&report.modes[0], &train).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows.iter().filter(|r| r.size == 1).count(), 2);
        assert_eq!(t.rows[0].tags, report.modes[0].tags);
        let full = t.mean_drop_by_size[&2].unwrap();
        let single = t.mean_drop_by_size[&1].unwrap();
        assert!(full > single);
        let agg = ablation_summary(&[t]);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].subset_size, 2);
    }

    #[test]
    fn ablation_flags_empty_subsets() {
        let train = dataset(&rows(), Split::Train);
        let report = mine_exhaustive(&train, &config()).unwrap();
        let sparse = dataset(&[("c", &["a"], true), ("c", &["b"], false)], Split::Holdout);
        let t = subset_ablation(&report.modes[0], &sparse).unwrap();
        assert!(t.rows[0].flagged);
        assert_eq!(t.mean_drop_by_size[&2], None);
        assert!(t.mean_drop_by_size[&1].is_some());

        let single = FailureMode::new(
            "c",
            vec!["a".into()],
            Accuracy::new(1, 2),
            Accuracy::new(2, 2),
            BTreeMap::new(),
        );
        assert!(matches!(
            subset_ablation(&single, &train),
            Err(Error::TagSetTooSmall(1))
        ));
    }
}
