//! Synthetic tagged datasets with planted failure modes.
//!
//! Every class draws its tags independently per image. Images carrying all
//! planted tags of their class are classified correctly with probability
//! `p_fail`, every other image with `p_base`. The generator also builds
//! indicator embeddings whose geometry follows the tags, so similarity and
//! distance diagnostics have predictable answers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, EmbeddingFormat, Prediction};
use crate::miner::check_minimality;
use crate::model::{ClassIndex, ImageRecord, MinerConfig, Split, TagRecord};

/// Marginal range for the extra noise tags added by [`generate`].
pub const NOISE_MARGINALS: (f64, f64) = (0.05, 0.15);

/// A tag that copies another tag's presence with probability `agreement`
/// and is otherwise absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedundantTag {
    pub tag: String,
    pub follows: String,
    pub agreement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    #[serde(rename = "class")]
    pub class_label: String,
    pub planted_tags: Vec<String>,
    pub p_fail: f64,
    pub p_base: f64,
    /// Presence probability of every tag of the class, planted ones included.
    pub tag_marginals: BTreeMap<String, f64>,
    pub n_images: usize,
    /// Extra images drawn the same way for the holdout split.
    pub n_holdout: usize,
    pub redundant: Option<RedundantTag>,
    pub seed: u64,
}

/// Closed-form quantities of a spec under independent tags.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Expected {
    /// Probability that an image carries every planted tag.
    pub planted_rate: f64,
    pub support: f64,
    pub baseline_accuracy: f64,
    pub group_accuracy: f64,
    pub drop: f64,
    /// Group accuracy after removing each planted tag.
    pub subset_accuracy: BTreeMap<String, f64>,
    /// Drop below baseline of each of those leave-one-out groups.
    pub subset_drop: BTreeMap<String, f64>,
}

impl PlantSpec {
    fn check_shape(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::InfeasibleSpec {
                class: self.class_label.clone(),
                reason,
            })
        };
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_fail) || !prob(self.p_base) || self.p_fail >= self.p_base {
            return bad(format!(
                "need 0 <= p_fail < p_base <= 1, got {} and {}",
                self.p_fail, self.p_base
            ));
        }
        if self.planted_tags.is_empty() {
            return bad("no planted tags".into());
        }
        let distinct: BTreeSet<&String> = self.planted_tags.iter().collect();
        if distinct.len() != self.planted_tags.len() {
            return bad("planted tags repeat".into());
        }
        if let Some(t) = self
            .planted_tags
            .iter()
            .find(|t| !self.tag_marginals.contains_key(*t))
        {
            return bad(format!("planted tag {t:?} has no marginal"));
        }
        if let Some((t, m)) = self.tag_marginals.iter().find(|(_, m)| !prob(**m)) {
            return bad(format!("marginal of {t:?} is {m}"));
        }
        if let Some(r) = &self.redundant {
            if self.tag_marginals.contains_key(&r.tag)
                || !self.tag_marginals.contains_key(&r.follows)
                || !prob(r.agreement)
            {
                return bad(format!("redundant tag {:?} is malformed", r.tag));
            }
        }
        if self.n_images == 0 {
            return bad("no images".into());
        }
        Ok(())
    }

    pub fn expected(&self) -> Result<Expected> {
        self.check_shape()?;
        let rate = |tags: &mut dyn Iterator<Item = &String>| {
            tags.map(|t| self.tag_marginals[t]).product::<f64>()
        };
        let q = rate(&mut self.planted_tags.iter());
        let baseline = q * self.p_fail + (1.0 - q) * self.p_base;
        let mut subset_accuracy = BTreeMap::new();
        let mut subset_drop = BTreeMap::new();
        for t in &self.planted_tags {
            let rest = rate(&mut self.planted_tags.iter().filter(|u| *u != t));
            // among images with the other planted tags, `t` is present w.p. m_t
            let m = self.tag_marginals[t];
            let acc = if rest > 0.0 {
                m * self.p_fail + (1.0 - m) * self.p_base
            } else {
                f64::NAN
            };
            subset_accuracy.insert(t.clone(), acc);
            subset_drop.insert(t.clone(), baseline - acc);
        }
        Ok(Expected {
            planted_rate: q,
            support: q * self.n_images as f64,
            baseline_accuracy: baseline,
            group_accuracy: self.p_fail,
            drop: baseline - self.p_fail,
            subset_accuracy,
            subset_drop,
        })
    }

    /// Checks that, in expectation, the planted set clears each miner
    /// predicate: support reaches the floor, the drop clears `a + margin`,
    /// and for two or more tags every leave-one-out group is at least
    /// `b_k + margin` more accurate.
    pub fn validate(&self, config: &MinerConfig, margin: f64) -> Result<Expected> {
        let e = self.expected()?;
        let bad = |reason: String| {
            Err(Error::InfeasibleSpec {
                class: self.class_label.clone(),
                reason,
            })
        };
        if e.support < config.min_support as f64 {
            return bad(format!(
                "expected support {:.1} is below the floor {}",
                e.support, config.min_support
            ));
        }
        let a = config.min_drop.as_f64();
        if e.drop < a + margin {
            return bad(format!(
                "expected drop {:.4} is below {:.4}",
                e.drop,
                a + margin
            ));
        }
        let k = self.planted_tags.len();
        if k >= 2 {
            let b = config.margin_for(k).as_f64();
            for (t, acc) in &e.subset_accuracy {
                if acc - e.group_accuracy < b + margin {
                    return bad(format!(
                        "removing {t:?} gains {:.4}, below {:.4}",
                        acc - e.group_accuracy,
                        b + margin
                    ));
                }
            }
        }
        Ok(e)
    }

    fn draw(
        &self,
        rng: &mut ChaCha8Rng,
        count: usize,
        split: Split,
        start: usize,
        out: &mut Vec<(TagRecord, bool)>,
    ) {
        let planted: BTreeSet<&str> = self.planted_tags.iter().map(String::as_str).collect();
        for i in start..start + count {
            let mut tags = BTreeSet::new();
            for (t, &m) in &self.tag_marginals {
                if rng.random::<f64>() < m {
                    tags.insert(t.clone());
                }
            }
            if let Some(r) = &self.redundant {
                if tags.contains(&r.follows) && rng.random::<f64>() < r.agreement {
                    tags.insert(r.tag.clone());
                }
            }
            let hit = planted.iter().all(|t| tags.contains(*t));
            let p = if hit { self.p_fail } else { self.p_base };
            let correct = rng.random::<f64>() < p;
            out.push((
                TagRecord {
                    id: format!("{}-{}-{i:06}", self.class_label, split),
                    class_label: self.class_label.clone(),
                    split,
                    tags,
                },
                correct,
            ));
        }
    }

    /// Train images followed by holdout images, drawn from `self.seed`.
    pub fn sample(&self) -> Result<Vec<(TagRecord, bool)>> {
        self.check_shape()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.n_images + self.n_holdout);
        self.draw(&mut rng, self.n_images, Split::Train, 0, &mut out);
        self.draw(&mut rng, self.n_holdout, Split::Holdout, 0, &mut out);
        Ok(out)
    }

    /// Fraction of `trials` fresh train draws in which the planted set meets
    /// all three miner predicates.
    pub fn monte_carlo(&self, config: &MinerConfig, trials: usize, seed: u64) -> Result<f64> {
        self.check_shape()?;
        if trials == 0 {
            return Err(Error::InvalidConfig("trial count must be positive".into()));
        }
        let passes = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(trial as u64);
                let mut rows = Vec::with_capacity(self.n_images);
                self.draw(&mut rng, self.n_images, Split::Train, 0, &mut rows);
                let images: Vec<ImageRecord> = rows
                    .iter()
                    .map(|(r, c)| ImageRecord::from_tagged(r, *c))
                    .collect();
                planted_qualifies(&images, &self.planted_tags, config)
            })
            .filter(|ok| *ok)
            .count();
        Ok(passes as f64 / trials as f64)
    }
}

fn planted_qualifies(images: &[ImageRecord], planted: &[String], config: &MinerConfig) -> bool {
    let Ok(index) = ClassIndex::build(images, config.freq_threshold) else {
        return false;
    };
    let Ok(mask) = index.group_mask(planted) else {
        return false;
    };
    let Ok(group) = index.group_counts(&mask) else {
        return false;
    };
    if group.total < config.min_support || !index.baseline().exceeds_by(group, config.min_drop) {
        return false;
    }
    planted.len() < 2
        || check_minimality(&index, planted, config)
            .is_ok_and(|checks| checks.values().all(|c| c.passes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedMode {
    #[serde(rename = "class")]
    pub class_label: String,
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub planted: Vec<PlantedMode>,
}

impl GroundTruth {
    pub fn keys(&self) -> BTreeSet<(String, Vec<String>)> {
        self.planted
            .iter()
            .map(|p| (p.class_label.clone(), p.tags.clone()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub records: Vec<TagRecord>,
    pub correct: Vec<bool>,
    pub truth: GroundTruth,
}

impl SynthData {
    pub fn images(&self) -> Vec<ImageRecord> {
        self.records
            .iter()
            .zip(&self.correct)
            .map(|(r, &c)| ImageRecord::from_tagged(r, c))
            .collect()
    }

    /// Writes `tags.jsonl`, `preds.jsonl` and `truth.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        ingest::write_tags(dir.join("tags.jsonl"), &self.records)?;
        let preds: Vec<Prediction> = self
            .correct
            .iter()
            .map(|&c| Prediction::Correct(c))
            .collect();
        ingest::write_predictions(
            dir.join("preds.jsonl"),
            self.records.iter().map(|r| r.id.as_str()).zip(&preds),
        )?;
        let truth = dir.join("truth.json");
        let mut text = serde_json::to_string_pretty(&self.truth)?;
        text.push('\n');
        std::fs::write(&truth, text).map_err(|e| Error::io(&truth, e))
    }
}

/// Draws every spec (in parallel, each from its own seed). `n_noise_tags`
/// extra tags named `noise00`, `noise01`, ... join every class with
/// marginals drawn from [`NOISE_MARGINALS`] using `seed`.
pub fn generate(specs: &[PlantSpec], n_noise_tags: usize, seed: u64) -> Result<SynthData> {
    let classes: BTreeSet<&str> = specs.iter().map(|s| s.class_label.as_str()).collect();
    if classes.len() != specs.len() {
        return Err(Error::InvalidConfig("one spec per class".into()));
    }
    let specs: Vec<PlantSpec> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut s = s.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for j in 0..n_noise_tags {
                let name = format!("noise{j:02}");
                if s.tag_marginals.contains_key(&name) {
                    return Err(Error::InfeasibleSpec {
                        class: s.class_label.clone(),
                        reason: format!("tag {name:?} clashes with a noise tag"),
                    });
                }
                s.tag_marginals.insert(
                    name,
                    rng.random_range(NOISE_MARGINALS.0..=NOISE_MARGINALS.1),
                );
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let drawn: Vec<Vec<(TagRecord, bool)>> = specs
        .par_iter()
        .map(PlantSpec::sample)
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut correct = Vec::new();
    for (r, c) in drawn.into_iter().flatten() {
        records.push(r);
        correct.push(c);
    }
    let truth = GroundTruth {
        planted: specs
            .iter()
            .map(|s| {
                let mut tags = s.planted_tags.clone();
                tags.sort();
                PlantedMode {
                    class_label: s.class_label.clone(),
                    tags,
                }
            })
            .collect(),
    };
    Ok(SynthData {
        records,
        correct,
        truth,
    })
}

/// A family of specs: `classes` classes with `tags_per_class` tags each,
/// class `i` getting `planted_sizes[i % len]` planted tags at random
/// positions and the remaining tags uniform marginals in `filler`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPlan {
    pub classes: usize,
    pub images_per_class: usize,
    pub holdout_per_class: usize,
    pub tags_per_class: usize,
    pub planted_sizes: Vec<usize>,
    /// Marginal of each planted tag; `None` uses 0.3 for one tag and 0.35 otherwise.
    pub planted_marginal: Option<f64>,
    pub filler: (f64, f64),
    pub p_fail: f64,
    pub p_base: f64,
    pub seed: u64,
}

impl Default for SynthPlan {
    fn default() -> Self {
        Self {
            classes: 5,
            images_per_class: 2000,
            holdout_per_class: 0,
            tags_per_class: 20,
            planted_sizes: vec![1, 2, 3],
            planted_marginal: None,
            filler: NOISE_MARGINALS,
            p_fail: 0.02,
            p_base: 0.95,
            seed: 0,
        }
    }
}

impl SynthPlan {
    pub fn specs(&self) -> Result<Vec<PlantSpec>> {
        if self.planted_sizes.is_empty()
            || self
                .planted_sizes
                .iter()
                .any(|&k| k == 0 || k > self.tags_per_class)
        {
            return Err(Error::InvalidConfig(format!(
                "planted sizes {:?} must lie in 1..={}",
                self.planted_sizes, self.tags_per_class
            )));
        }
        if !(0.0..=1.0).contains(&self.filler.0) || !(self.filler.0..=1.0).contains(&self.filler.1)
        {
            return Err(Error::InvalidConfig(format!(
                "filler range {:?}",
                self.filler
            )));
        }
        let width = self.classes.saturating_sub(1).to_string().len();
        let mut seeds = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.classes)
            .map(|i| {
                let k = self.planted_sizes[i % self.planted_sizes.len()];
                let spec_seed = seeds.next_u64();
                let mut rng = ChaCha8Rng::seed_from_u64(spec_seed);
                rng.set_stream(1);
                let names: Vec<String> = (0..self.tags_per_class)
                    .map(|j| format!("tag{j:02}"))
                    .collect();
                let mut planted: Vec<String> = rand::seq::index::sample(&mut rng, names.len(), k)
                    .into_iter()
                    .map(|j| names[j].clone())
                    .collect();
                planted.sort();
                let m = self
                    .planted_marginal
                    .unwrap_or(if k == 1 { 0.3 } else { 0.35 });
                let tag_marginals = names
                    .iter()
                    .map(|t| {
                        let p = if planted.contains(t) {
                            m
                        } else {
                            rng.random_range(self.filler.0..=self.filler.1)
                        };
                        (t.clone(), p)
                    })
                    .collect();
                Ok(PlantSpec {
                    class_label: format!("class{i:0width$}"),
                    planted_tags: planted,
                    p_fail: self.p_fail,
                    p_base: self.p_base,
                    tag_marginals,
                    n_images: self.images_per_class,
                    n_holdout: self.holdout_per_class,
                    redundant: None,
                    seed: spec_seed,
                })
            })
            .collect()
    }
}

/// Tag-indicator embedding space over a fixed, sorted vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorSpace {
    pub vocabulary: Vec<String>,
    pub dimension: usize,
}

impl IndicatorSpace {
    pub fn new(vocabulary: impl IntoIterator<Item = String>, dimension: usize) -> Result<Self> {
        let vocabulary: Vec<String> = vocabulary
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if dimension < vocabulary.len() || dimension == 0 {
            return Err(Error::InvalidConfig(format!(
                "dimension {dimension} is smaller than the {} tag vocabulary",
                vocabulary.len()
            )));
        }
        Ok(Self {
            vocabulary,
            dimension,
        })
    }

    pub fn from_records(records: &[TagRecord], dimension: usize) -> Result<Self> {
        Self::new(
            records.iter().flat_map(|r| r.tags.iter().cloned()),
            dimension,
        )
    }

    fn indicator<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dimension];
        for t in tags {
            let pos = self
                .vocabulary
                .binary_search_by(|v| v.as_str().cmp(t.as_ref()))
                .map_err(|_| Error::UnknownTag(t.as_ref().to_string()))?;
            v[pos] = 1.0;
        }
        Ok(v)
    }

    /// Normalized `indicator + sigma * N(0, I)`.
    pub fn image_vector<S: AsRef<str>>(
        &self,
        key: &str,
        tags: &[S],
        sigma: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        let mut v = self.indicator(tags)?;
        if sigma > 0.0 {
            for x in &mut v {
                let z: f64 = StandardNormal.sample(rng);
                *x += sigma * z;
            }
        }
        normalized(key, v)
    }

    /// Normalized indicator of a tag set.
    pub fn description_vector<S: AsRef<str>>(&self, key: &str, tags: &[S]) -> Result<Vec<f64>> {
        normalized(key, self.indicator(tags)?)
    }
}

fn normalized(key: &str, mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm(key.to_string()));
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// `(key, vector)` rows ready for writing.
pub type VectorRows = Vec<(String, Vec<f64>)>;

/// One image vector per record, in record order. Images without tags need
/// `sigma > 0`, since their indicator is zero.
pub fn synth_embeddings(
    records: &[TagRecord],
    dimension: usize,
    sigma: f64,
    seed: u64,
) -> Result<(IndicatorSpace, VectorRows)> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise sigma {sigma}")));
    }
    let space = IndicatorSpace::from_records(records, dimension)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = records
        .iter()
        .map(|r| {
            let tags: Vec<&String> = r.tags.iter().collect();
            Ok((
                r.id.clone(),
                space.image_vector(&r.id, &tags, sigma, &mut rng)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok((space, rows))
}

/// Description vectors keyed by description string.
pub fn description_embeddings<'a>(
    space: &IndicatorSpace,
    modes: impl IntoIterator<Item = (&'a str, &'a [String])>,
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (key, tags) in modes {
        if seen.insert(key) {
            out.push((key.to_string(), space.description_vector(key, tags)?));
        }
    }
    Ok(out)
}

pub fn write_vectors(
    path: impl AsRef<Path>,
    dimension: usize,
    rows: &[(String, Vec<f64>)],
    format: EmbeddingFormat,
) -> Result<()> {
    ingest::write_embeddings(
        path,
        dimension,
        rows.iter().map(|(k, v)| (k.as_str(), v.as_slice())),
        format,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality::dot;
    use crate::rate::Rate;

    fn pair_spec(n: usize, p_fail: f64, p_base: f64, m: f64) -> PlantSpec {
        PlantSpec {
            class_label: "c".into(),
            planted_tags: vec!["a".into(), "b".into()],
            p_fail,
            p_base,
            tag_marginals: [("a", m), ("b", m), ("x", 0.2)]
                .into_iter()
                .map(|(t, p)| (t.to_string(), p))
                .collect(),
            n_images: n,
            n_holdout: 0,
            redundant: None,
            seed: 11,
        }
    }

    #[test]
    fn deterministic_correctness_extremes() {
        let spec = pair_spec(10_000, 0.0, 1.0, 0.5);
        let data = generate(&[spec], 0, 0).unwrap();
        let index = ClassIndex::build(&data.images(), 0).unwrap();
        let group = index
            .group_counts(&index.group_mask(&["a", "b"]).unwrap())
            .unwrap();
        assert_eq!(group.correct, 0);
        assert!(group.total > 2000);
        let complement = index
            .group_mask::<&str>(&[])
            .unwrap()
            .and_not(&index.group_mask(&["a", "b"]).unwrap());
        assert_eq!(index.group_counts(&complement).unwrap().value(), 1.0);
    }

    #[test]
    fn empirical_accuracies_within_three_standard_errors() {
        let spec = pair_spec(20_000, 0.3, 0.9, 0.5);
        let images = generate(std::slice::from_ref(&spec), 0, 0)
            .unwrap()
            .images();
        let index = ClassIndex::build(&images, 0).unwrap();
        let group = index
            .group_counts(&index.group_mask(&["a", "b"]).unwrap())
            .unwrap();
        let se = (0.3f64 * 0.7 / group.total as f64).sqrt();
        assert!((group.value() - 0.3).abs() < 3.0 * se);
        let e = spec.expected().unwrap();
        let se = (e.baseline_accuracy * (1.0 - e.baseline_accuracy) / 20_000.0).sqrt();
        assert!((index.baseline_accuracy() - e.baseline_accuracy).abs() < 3.0 * se);
    }

    #[test]
    fn validation_rejects_infeasible_specs() {
        let cfg = MinerConfig::default();
        assert!(matches!(
            pair_spec(100, 0.3, 0.9, 0.5).validate(&cfg, 0.05),
            Err(Error::InfeasibleSpec { .. })
        ));
        assert!(pair_spec(2000, 0.3, 0.9, 0.5).validate(&cfg, 0.05).is_ok());
        assert!(pair_spec(2000, 0.9, 0.3, 0.5).expected().is_err());
        let mut spec = pair_spec(2000, 0.3, 0.9, 0.5);
        spec.planted_tags.push("missing".into());
        assert!(spec.expected().is_err());
        // a drop that clears the floor only barely
        let cfg = MinerConfig {
            min_drop: Rate::new(45, 100),
            ..MinerConfig::default()
        };
        assert!(pair_spec(2000, 0.3, 0.9, 0.5).validate(&cfg, 0.05).is_err());
    }

    #[test]
    fn monte_carlo_pass_rate_is_high_for_valid_specs() {
        let cfg = MinerConfig::default();
        let spec = pair_spec(2000, 0.3, 0.9, 0.5);
        spec.validate(&cfg, 0.05).unwrap();
        assert!(spec.monte_carlo(&cfg, 50, 9).unwrap() >= 0.99);
    }

    #[test]
    fn same_seed_same_files() {
        let specs = SynthPlan {
            classes: 3,
            images_per_class: 300,
            holdout_per_class: 50,
            ..SynthPlan::default()
        }
        .specs()
        .unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&specs, 2, 5).unwrap().write(a.path()).unwrap();
        generate(&specs, 2, 5).unwrap().write(b.path()).unwrap();
        for f in ["tags.jsonl", "preds.jsonl", "truth.json"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let records = ingest::load_tags(a.path().join("tags.jsonl")).unwrap();
        assert_eq!(records.len(), 3 * 350);
        assert!(records
            .iter()
            .all(|r| r.tags.iter().filter(|t| t.starts_with("noise")).count() <= 2));
    }

    #[test]
    fn indicator_geometry() {
        let space = IndicatorSpace::new(["a", "b", "c", "d"].map(String::from), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = space.image_vector("i", &["a", "b"], 0.0, &mut rng).unwrap();
        let own = space.description_vector("ab", &["a", "b"]).unwrap();
        let part = space.description_vector("a", &["a"]).unwrap();
        let wide = space.description_vector("abc", &["a", "b", "c"]).unwrap();
        let disjoint = space.description_vector("cd", &["c", "d"]).unwrap();
        let s = dot(&img, &own);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(s > dot(&img, &part) && s > dot(&img, &wide));
        assert_eq!(dot(&img, &disjoint), 0.0);
        assert!(IndicatorSpace::new(["a", "b"].map(String::from), 1).is_err());
        assert!(
            matches!(space.image_vector::<&str>("z", &[], 0.0, &mut rng), Err(Error::ZeroNorm(k)) if k == "z")
        );
        assert!(matches!(
            space.description_vector("q", &["q"]),
            Err(Error::UnknownTag(_))
        ));
    }

    #[test]
    fn redundant_tag_follows_its_source() {
        let mut spec = pair_spec(5000, 0.3, 0.9, 0.5);
        spec.redundant = Some(RedundantTag {
            tag: "r".into(),
            follows: "a".into(),
            agreement: 0.9,
        });
        let rows = spec.sample().unwrap();
        let with_r = rows.iter().filter(|(r, _)| r.tags.contains("r")).count();
        assert!(rows
            .iter()
            .all(|(r, _)| !r.tags.contains("r") || r.tags.contains("a")));
        assert!(with_r > 2000);
    }
}
