//! Description quality in a shared image/text embedding space.
//!
//! For every mode, its description embedding is scored against the unit
//! image embeddings of its members (inside) and of a seeded sample of other
//! images from the same class (outside). Reported per mode: mean and
//! population standard deviation of the inside similarities, and the
//! inside-vs-outside AUROC.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EmbeddingTable;
use crate::miner::MineReport;
use crate::model::{FailureMode, TaggedDataset};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dot product of the unit image vector and the unit description vector.
pub fn similarity(
    image_key: &str,
    mode_key: &str,
    images: &EmbeddingTable,
    descriptions: &EmbeddingTable,
) -> Result<f64> {
    if images.dimension() != descriptions.dimension() {
        return Err(Error::DimensionMismatch {
            key: mode_key.to_string(),
            expected: images.dimension(),
            found: descriptions.dimension(),
        });
    }
    Ok(dot(images.unit(image_key)?, descriptions.unit(mode_key)?))
}

/// Probability that an inside score beats an outside score, ties counting
/// one half (the Mann-Whitney U statistic over `n_in * n_out`).
///
/// Counts are exact integers; only the final division is floating point.
pub fn auroc(inside: &[f64], outside: &[f64]) -> Result<f64> {
    if inside.is_empty() || outside.is_empty() {
        return Err(Error::EmptyScores);
    }
    if inside.iter().chain(outside).any(|x| x.is_nan()) {
        return Err(Error::InvalidConfig("NaN similarity score".into()));
    }
    let mut sorted = outside.to_vec();
    sorted.sort_by(f64::total_cmp);
    // twice the U statistic, so ties stay integral
    let mut doubled: u128 = 0;
    for &x in inside {
        let below = sorted.partition_point(|&o| o < x);
        let not_above = sorted.partition_point(|&o| o <= x);
        doubled += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = inside.len() as u128 * outside.len() as u128;
    Ok(doubled as f64 / (2 * pairs) as f64)
}

/// Two-pass population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Outside images per mode; `None` samples as many as the mode has members.
    pub n_outside_per_mode: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeQuality {
    #[serde(rename = "class")]
    pub class_label: String,
    pub tags: Vec<String>,
    pub description: String,
    pub n_inside: usize,
    pub n_outside: usize,
    pub mean_sim: f64,
    pub std_sim: f64,
    /// `None` when the class has no images outside the mode.
    pub auroc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub modes: Vec<ModeQuality>,
    /// Over every (member image, mode) pair.
    pub pooled_mean: Option<f64>,
    pub pooled_std: Option<f64>,
    /// Over modes with a defined AUROC.
    pub mean_auroc: Option<f64>,
    pub auroc_undefined: usize,
    pub std_convention: String,
    pub sampling: SamplingOptions,
}

pub fn score_modes(
    report: &MineReport,
    images: &EmbeddingTable,
    descriptions: &EmbeddingTable,
    dataset: &TaggedDataset,
    sampling: &SamplingOptions,
) -> Result<QualityReport> {
    if !descriptions.is_empty() && images.dimension() != descriptions.dimension() {
        return Err(Error::DimensionMismatch {
            key: "<descriptions>".into(),
            expected: images.dimension(),
            found: descriptions.dimension(),
        });
    }
    let scored: Vec<(ModeQuality, Vec<f64>)> = report
        .modes
        .par_iter()
        .enumerate()
        .map(|(i, m)| score_one(i as u64, m, images, descriptions, dataset, sampling))
        .collect::<Result<_>>()?;
    let pooled: Vec<f64> = scored.iter().flat_map(|(_, s)| s.iter().copied()).collect();
    let pooled_stats = mean_std(&pooled);
    let aurocs: Vec<f64> = scored.iter().filter_map(|(q, _)| q.auroc).collect();
    let modes: Vec<ModeQuality> = scored.into_iter().map(|(q, _)| q).collect();
    Ok(QualityReport {
        auroc_undefined: modes.len() - aurocs.len(),
        mean_auroc: mean_std(&aurocs).map(|(m, _)| m),
        modes,
        pooled_mean: pooled_stats.map(|(m, _)| m),
        pooled_std: pooled_stats.map(|(_, s)| s),
        std_convention: "population".into(),
        sampling: sampling.clone(),
    })
}

fn score_one(
    stream: u64,
    mode: &FailureMode,
    images: &EmbeddingTable,
    descriptions: &EmbeddingTable,
    dataset: &TaggedDataset,
    sampling: &SamplingOptions,
) -> Result<(ModeQuality, Vec<f64>)> {
    let index = dataset
        .class(&mode.class_label)
        .ok_or_else(|| Error::UnknownClass(mode.class_label.clone()))?;
    let text = descriptions.unit(&mode.description)?;
    let mask = index.group_mask(&mode.tags)?;
    let mut inside_ids: Vec<&str> = Vec::new();
    let mut outside_ids: Vec<&str> = Vec::new();
    for (bit, id) in index.image_ids.iter().enumerate() {
        if mask.contains(bit) {
            inside_ids.push(id);
        } else {
            outside_ids.push(id);
        }
    }
    if inside_ids.is_empty() {
        return Err(Error::EmptyGroup);
    }
    inside_ids.sort_unstable();
    outside_ids.sort_unstable();
    let want = sampling.n_outside_per_mode.unwrap_or(inside_ids.len());
    let take = want.min(outside_ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    rng.set_stream(stream);
    let mut picked = rand::seq::index::sample(&mut rng, outside_ids.len(), take).into_vec();
    picked.sort_unstable();

    let inside: Vec<f64> = inside_ids
        .iter()
        .map(|id| images.unit(id).map(|v| dot(v, text)))
        .collect::<Result<_>>()?;
    let outside: Vec<f64> = picked
        .iter()
        .map(|&i| images.unit(outside_ids[i]).map(|v| dot(v, text)))
        .collect::<Result<_>>()?;
    let (mean_sim, std_sim) = mean_std(&inside).expect("inside is nonempty");
    let auroc = if outside.is_empty() {
        None
    } else {
        Some(auroc(&inside, &outside)?)
    };
    Ok((
        ModeQuality {
            class_label: mode.class_label.clone(),
            tags: mode.tags.clone(),
            description: mode.description.clone(),
            n_inside: inside.len(),
            n_outside: outside.len(),
            mean_sim,
            std_sim,
            auroc,
        },
        inside,
    ))
}
