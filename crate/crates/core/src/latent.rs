//! How well does distance in an embedding space track shared tags?
//!
//! Two diagnostics over raw (unnormalized) image embeddings:
//!
//! * distance statistics for image pairs sharing at least `d` tags, and the
//!   chance that such a pair is farther apart than a random pair;
//! * for sampled anchors, how many tags recur among the anchor's `N` nearest
//!   neighbours, against the largest subset of the anchor's own tags that at
//!   least `N` other images also carry.

use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::error::{Error, Result};
use crate::ingest::EmbeddingTable;
use crate::model::TagRecord;

/// Rejection-sampling attempts per distance row before it is flagged.
pub const MAX_ATTEMPTS: u64 = 10_000_000;

/// Images with both tags and a raw embedding, ordered by id.
#[derive(Clone, Debug)]
pub struct LatentData {
    pub ids: Vec<String>,
    pub vocabulary: Vec<String>,
    dimension: usize,
    vectors: Vec<f64>,
    /// Per image, tag positions in `vocabulary`.
    tag_lists: Vec<Vec<usize>>,
    tag_sets: Vec<Bitset>,
    /// Per tag, the images carrying it.
    tag_images: Vec<Bitset>,
}

impl LatentData {
    pub fn new(embeddings: &EmbeddingTable, records: &[TagRecord]) -> Result<Self> {
        let mut recs: Vec<&TagRecord> = records.iter().collect();
        recs.sort_by(|a, b| a.id.cmp(&b.id));
        let vocab: BTreeMap<&str, usize> = {
            let mut all: Vec<&str> = recs
                .iter()
                .flat_map(|r| r.tags.iter().map(String::as_str))
                .collect();
            all.sort_unstable();
            all.dedup();
            all.into_iter().enumerate().map(|(i, t)| (t, i)).collect()
        };
        let dimension = embeddings.dimension();
        let n = recs.len();
        let mut vectors = Vec::with_capacity(n * dimension);
        let mut tag_lists = Vec::with_capacity(n);
        let mut tag_sets = Vec::with_capacity(n);
        let mut tag_images = vec![Bitset::zeros(n); vocab.len()];
        for (i, r) in recs.iter().enumerate() {
            vectors.extend_from_slice(embeddings.raw(&r.id)?);
            let list: Vec<usize> = r.tags.iter().map(|t| vocab[t.as_str()]).collect();
            let mut set = Bitset::zeros(vocab.len());
            for &t in &list {
                set.insert(t);
                tag_images[t].insert(i);
            }
            tag_lists.push(list);
            tag_sets.push(set);
        }
        Ok(Self {
            ids: recs.iter().map(|r| r.id.clone()).collect(),
            vocabulary: vocab.into_keys().map(str::to_string).collect(),
            dimension,
            vectors,
            tag_lists,
            tag_sets,
            tag_images,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.vector(i)
            .iter()
            .zip(self.vector(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn shared_tags(&self, i: usize, j: usize) -> usize {
        self.tag_sets[i].count_and(&self.tag_sets[j]) as usize
    }

    pub fn tag_count(&self, i: usize) -> usize {
        self.tag_lists[i].len()
    }

    /// The `k` images closest to `anchor` (excluding it), nearest first.
    /// Ties are broken by position.
    pub fn nearest(&self, anchor: usize, k: usize) -> Vec<usize> {
        #[derive(PartialEq)]
        struct Entry(f64, usize);
        impl Eq for Entry {}
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
            }
        }
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(k + 1);
        for j in (0..self.len()).filter(|&j| j != anchor) {
            let e = Entry(self.distance(anchor, j), j);
            if heap.len() < k {
                heap.push(e);
            } else if e < *heap.peek().expect("heap is full") {
                heap.pop();
                heap.push(e);
            }
        }
        heap.into_sorted_vec().into_iter().map(|e| e.1).collect()
    }

    /// Largest `k` such that some `k` of the anchor's tags all appear together
    /// in at least `n` other images.
    pub fn semantic_max(&self, anchor: usize, n: u64) -> usize {
        let mut others = Bitset::ones(self.len());
        others = others.and_not(&singleton(self.len(), anchor));
        let tags = &self.tag_lists[anchor];
        let mut best = 0;
        self.semantic_dfs(tags, 0, &others, 0, n, &mut best);
        best
    }

    fn semantic_dfs(
        &self,
        tags: &[usize],
        from: usize,
        mask: &Bitset,
        depth: usize,
        n: u64,
        best: &mut usize,
    ) {
        *best = (*best).max(depth);
        for (i, &t) in tags.iter().enumerate().skip(from) {
            // even taking every remaining tag cannot beat the current best
            if depth + (tags.len() - i) <= *best {
                return;
            }
            let next = mask.and(&self.tag_images[t]);
            if next.count() >= n {
                self.semantic_dfs(tags, i + 1, &next, depth + 1, n, best);
            }
        }
    }

    /// Anchor tags that individually appear in at least `n` other images.
    pub fn individually_shared(&self, anchor: usize, n: u64) -> usize {
        self.tag_lists[anchor]
            .iter()
            .filter(|&&t| self.tag_images[t].count() > n)
            .count()
    }
}

fn singleton(len: usize, i: usize) -> Bitset {
    let mut b = Bitset::zeros(len);
    b.insert(i);
    b
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// Fewer than two images carry `d` tags.
    InsufficientImages,
    /// Qualifying pairs too rare for rejection sampling.
    TooRare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub min_shared: usize,
    pub mean_distance: Option<f64>,
    pub std_distance: Option<f64>,
    pub prob_exceeds_random: Option<f64>,
    pub pairs: usize,
    pub attempts: u64,
    pub status: RowStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub rows: Vec<DistanceRow>,
    pub n_pairs: usize,
    pub seed: u64,
    pub max_attempts: u64,
}

fn random_pair(rng: &mut ChaCha8Rng, pool: &[usize]) -> (usize, usize) {
    let a = rng.random_range(0..pool.len());
    let mut b = rng.random_range(0..pool.len() - 1);
    if b >= a {
        b += 1;
    }
    (pool[a], pool[b])
}

/// Distance statistics for pairs sharing at least `d` tags, one row per `d`.
pub fn distance_stats(
    data: &LatentData,
    d_list: &[usize],
    n_pairs: usize,
    seed: u64,
) -> Result<DistanceStats> {
    distance_stats_capped(data, d_list, n_pairs, seed, MAX_ATTEMPTS)
}

pub fn distance_stats_capped(
    data: &LatentData,
    d_list: &[usize],
    n_pairs: usize,
    seed: u64,
    max_attempts: u64,
) -> Result<DistanceStats> {
    if n_pairs == 0 {
        return Err(Error::InvalidConfig("pair count must be positive".into()));
    }
    let everyone: Vec<usize> = (0..data.len()).collect();
    let rows = d_list
        .par_iter()
        .enumerate()
        .map(|(row, &d)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(row as u64);
            let eligible: Vec<usize> = everyone
                .iter()
                .copied()
                .filter(|&i| data.tag_count(i) >= d)
                .collect();
            let mut out = DistanceRow {
                min_shared: d,
                mean_distance: None,
                std_distance: None,
                prob_exceeds_random: None,
                pairs: 0,
                attempts: 0,
                status: RowStatus::Ok,
            };
            if eligible.len() < 2 {
                out.status = RowStatus::InsufficientImages;
                return out;
            }
            let mut conditioned = Vec::with_capacity(n_pairs);
            while conditioned.len() < n_pairs {
                if out.attempts >= max_attempts {
                    out.status = RowStatus::TooRare;
                    out.pairs = conditioned.len();
                    return out;
                }
                out.attempts += 1;
                let (i, j) = random_pair(&mut rng, &eligible);
                if data.shared_tags(i, j) >= d {
                    conditioned.push(data.distance(i, j));
                }
            }
            let farther = conditioned
                .iter()
                .filter(|&&c| {
                    let (i, j) = random_pair(&mut rng, &everyone);
                    c > data.distance(i, j)
                })
                .count();
            let (mean, std) = crate::quality::mean_std(&conditioned).expect("nonempty");
            out.mean_distance = Some(mean);
            out.std_distance = Some(std);
            out.prob_exceeds_random = Some(farther as f64 / conditioned.len() as f64);
            out.pairs = conditioned.len();
            out
        })
        .collect();
    Ok(DistanceStats {
        rows,
        n_pairs,
        seed,
        max_attempts,
    })
}

impl DistanceStats {
    /// Aligned text table, one line per `d`.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} | {:>8} | {:>18} | {:>11}",
            "# of shared tags >= d", "mean", "standard deviation", "Probability"
        );
        let _ = writeln!(out, "{}", "-".repeat(24 + 8 + 18 + 11 + 9));
        for r in &self.rows {
            let label = match r.status {
                RowStatus::Ok => format!("d = {}", r.min_shared),
                RowStatus::InsufficientImages => format!("d = {} (too few images)", r.min_shared),
                RowStatus::TooRare => format!("d = {} (too rare)", r.min_shared),
            };
            let _ = writeln!(
                out,
                "{:<24} | {:>8} | {:>18} | {:>11}",
                label,
                fmt(r.mean_distance),
                fmt(r.std_distance),
                fmt(r.prob_exceeds_random)
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodRow {
    pub neighbors: usize,
    pub alpha: f64,
    pub mean_shared_tags_repr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticRow {
    pub neighbors: usize,
    pub mean_max_shared_tags_semantic: f64,
    /// Mean count of anchor tags that each appear in at least `N` other images.
    pub mean_individually_shared: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodStats {
    pub rows: Vec<NeighborhoodRow>,
    pub semantic_rows: Vec<SemanticRow>,
    pub anchors_used: usize,
    pub anchors_skipped_empty: usize,
    pub seed: u64,
}

/// Repr-space counts per `(N, alpha)`, then `(semantic max, individually
/// shared)` per `N`.
type AnchorCounts = (Vec<usize>, Vec<(usize, usize)>);

/// Neighbourhood shared-tag counts in embedding space versus tag space.
pub fn neighborhood_stats(
    data: &LatentData,
    n_list: &[usize],
    alpha_list: &[f64],
    n_anchors: usize,
    seed: u64,
) -> Result<NeighborhoodStats> {
    let max_n = n_list.iter().copied().max().unwrap_or(0);
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::InvalidConfig(
            "neighbourhood sizes must be at least 1".into(),
        ));
    }
    if let Some(a) = alpha_list.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(Error::InvalidConfig(format!("alpha {a} outside (0, 1]")));
    }
    if data.len() <= max_n {
        return Err(Error::InvalidConfig(format!(
            "{} images is not more than the largest neighbourhood {max_n}",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors =
        rand::seq::index::sample(&mut rng, data.len(), n_anchors.min(data.len())).into_vec();
    anchors.sort_unstable();
    let (used, skipped): (Vec<usize>, Vec<usize>) =
        anchors.into_iter().partition(|&a| data.tag_count(a) > 0);

    let per_anchor: Vec<AnchorCounts> = used
        .par_iter()
        .map(|&a| {
            let near = data.nearest(a, max_n);
            let mut repr = Vec::with_capacity(n_list.len() * alpha_list.len());
            let mut counts = vec![0u64; data.vocabulary.len()];
            let mut filled = 0;
            let mut sorted_ns: Vec<(usize, usize)> = n_list.iter().copied().enumerate().collect();
            sorted_ns.sort_by_key(|&(_, n)| n);
            let mut by_n: Vec<Vec<u64>> = vec![Vec::new(); n_list.len()];
            for (slot, n) in sorted_ns {
                for &j in &near[filled..n] {
                    for &t in &data.tag_lists[j] {
                        counts[t] += 1;
                    }
                }
                filled = n;
                by_n[slot] = counts.clone();
            }
            for (slot, &n) in n_list.iter().enumerate() {
                for &alpha in alpha_list {
                    let need = alpha_threshold(alpha, n);
                    repr.push(by_n[slot].iter().filter(|&&c| c >= need).count());
                }
            }
            let semantic = n_list
                .iter()
                .map(|&n| {
                    (
                        data.semantic_max(a, n as u64),
                        data.individually_shared(a, n as u64),
                    )
                })
                .collect();
            (repr, semantic)
        })
        .collect();

    let denom = per_anchor.len().max(1) as f64;
    let mut rows = Vec::new();
    for (slot, &n) in n_list.iter().enumerate() {
        for (k, &alpha) in alpha_list.iter().enumerate() {
            let idx = slot * alpha_list.len() + k;
            let sum: usize = per_anchor.iter().map(|(r, _)| r[idx]).sum();
            rows.push(NeighborhoodRow {
                neighbors: n,
                alpha,
                mean_shared_tags_repr: sum as f64 / denom,
            });
        }
    }
    let semantic_rows = n_list
        .iter()
        .enumerate()
        .map(|(slot, &n)| SemanticRow {
            neighbors: n,
            mean_max_shared_tags_semantic: per_anchor.iter().map(|(_, s)| s[slot].0).sum::<usize>()
                as f64
                / denom,
            mean_individually_shared: per_anchor.iter().map(|(_, s)| s[slot].1).sum::<usize>()
                as f64
                / denom,
        })
        .collect();
    Ok(NeighborhoodStats {
        rows,
        semantic_rows,
        anchors_used: used.len(),
        anchors_skipped_empty: skipped.len(),
        seed,
    })
}

/// Smallest count that is at least `alpha * n`.
fn alpha_threshold(alpha: f64, n: usize) -> u64 {
    let raw = alpha * n as f64;
    let rounded = raw.round();
    // absorb representation error such as 0.6 * 50 = 30.000000000000004
    if (raw - rounded).abs() < 1e-9 {
        rounded as u64
    } else {
        raw.ceil() as u64
    }
}

impl NeighborhoodStats {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6} | {:>6} | {:>22} | {:>22}",
            "N", "alpha", "shared (repr. space)", "shared (semantic)"
        );
        let _ = writeln!(out, "{}", "-".repeat(6 + 6 + 22 + 22 + 9));
        for r in &self.rows {
            let semantic = self
                .semantic_rows
                .iter()
                .find(|s| s.neighbors == r.neighbors)
                .map(|s| s.mean_max_shared_tags_semantic);
            let _ = writeln!(
                out,
                "{:>6} | {:>6.2} | {:>22.2} | {:>22.2}",
                r.neighbors,
                r.alpha,
                r.mean_shared_tags_repr,
                semantic.unwrap_or(f64::NAN)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{normalize_tags, Split};

    fn record(id: &str, tags: &[&str]) -> TagRecord {
        TagRecord {
            id: id.into(),
            class_label: "c".into(),
            split: Split::Train,
            tags: normalize_tags(tags),
        }
    }

    #[test]
    fn alpha_threshold_handles_float_error() {
        assert_eq!(alpha_threshold(0.6, 50), 30);
        assert_eq!(alpha_threshold(0.6, 100), 60);
        assert_eq!(alpha_threshold(0.55, 10), 6);
        assert_eq!(alpha_threshold(1.0, 7), 7);
    }

    #[test]
    fn identical_tag_sets_degenerate_case() {
        let m = ["a", "b", "c"];
        let recs: Vec<_> = (0..30).map(|i| record(&format!("i{i:02}"), &m)).collect();
        let emb = EmbeddingTable::from_rows(
            2,
            (0..30).map(|i| (format!("i{i:02}"), vec![i as f64, (i * i % 7) as f64 + 1.0])),
        )
        .unwrap();
        let data = LatentData::new(&emb, &recs).unwrap();
        let stats = neighborhood_stats(&data, &[5, 10], &[0.3, 0.6, 1.0], 10, 1).unwrap();
        assert!(stats.rows.iter().all(|r| r.mean_shared_tags_repr == 3.0));
        assert!(stats
            .semantic_rows
            .iter()
            .all(|r| r.mean_max_shared_tags_semantic == 3.0));
        assert!(stats
            .semantic_rows
            .iter()
            .all(|r| r.mean_individually_shared == 3.0));
    }

    #[test]
    fn skips_empty_anchors_and_validates() {
        let recs: Vec<_> = (0..10)
            .map(|i| record(&format!("i{i}"), if i < 5 { &[] } else { &["a"] }))
            .collect();
        let emb =
            EmbeddingTable::from_rows(1, (0..10).map(|i| (format!("i{i}"), vec![i as f64 + 1.0])))
                .unwrap();
        let data = LatentData::new(&emb, &recs).unwrap();
        let stats = neighborhood_stats(&data, &[2], &[0.5], 10, 0).unwrap();
        assert_eq!(stats.anchors_used, 5);
        assert_eq!(stats.anchors_skipped_empty, 5);
        assert!(neighborhood_stats(&data, &[10], &[0.5], 10, 0).is_err());
        assert!(neighborhood_stats(&data, &[2], &[0.0], 10, 0).is_err());
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let recs = vec![record("x", &["a"])];
        let emb = EmbeddingTable::from_rows(1, [("y", vec![1.0])]).unwrap();
        assert!(
            matches!(LatentData::new(&emb, &recs), Err(Error::MissingEmbedding(k)) if k == "x")
        );
    }

    #[test]
    fn distance_rows_flag_rare_and_thin() {
        let recs: Vec<_> = (0..20)
            .map(|i| record(&format!("i{i}"), if i == 0 { &["a", "b"] } else { &["a"] }))
            .collect();
        let emb =
            EmbeddingTable::from_rows(1, (0..20).map(|i| (format!("i{i}"), vec![i as f64 + 1.0])))
                .unwrap();
        let data = LatentData::new(&emb, &recs).unwrap();
        let stats = distance_stats_capped(&data, &[0, 1, 2], 50, 3, 10_000).unwrap();
        assert_eq!(stats.rows[0].status, RowStatus::Ok);
        assert_eq!(stats.rows[1].status, RowStatus::Ok);
        assert_eq!(stats.rows[2].status, RowStatus::InsufficientImages);

        let recs: Vec<_> = (0..20)
            .map(|i| record(&format!("i{i}"), &[["a", "b"][i % 2]]))
            .collect();
        let data = LatentData::new(&emb, &recs).unwrap();
        // every image has one tag, and pairs sharing it exist, but sharing 1 among
        // 1-tag images is common; ask for a pair count the cap cannot reach
        let stats = distance_stats_capped(&data, &[1], 1000, 3, 100).unwrap();
        assert_eq!(stats.rows[0].status, RowStatus::TooRare);
        assert!(stats.to_table().contains("too rare"));
    }
}
