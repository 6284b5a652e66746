//! Readers and writers for the three input files (tags, predictions,
//! embeddings) and the join that turns them into a [`TaggedDataset`].
//!
//! Tags and predictions are JSON lines. Embeddings are JSON lines
//! (`{"key": str, "vec": [f, ...]}`) or a compact little-endian block:
//!
//! ```text
//! magic  b"TSEB"
//! u32    dimension
//! u64    count
//! count × (u32 key length, key bytes as UTF-8)
//! count × dimension × f32
//! ```
//!
//! Unknown JSON fields are ignored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize_tags, ClassIndex, ImageRecord, Split, TagRecord, TaggedDataset};

pub const BINARY_MAGIC: &[u8; 4] = b"TSEB";

/// How many missing ids an error message lists.
const MISSING_ID_PREVIEW: usize = 10;

fn for_each_line(path: &Path, mut f: impl FnMut(usize, &str) -> Result<()>) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line)?;
    }
    Ok(())
}

fn parse_line<T: serde::de::DeserializeOwned>(
    path: &Path,
    line_no: usize,
    line: &str,
) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })
}

#[derive(Deserialize)]
struct TagLine {
    id: String,
    class: String,
    split: Split,
    tags: Vec<String>,
}

/// Reads a tags file, normalizing and deduplicating each image's tags.
pub fn load_tags(path: impl AsRef<Path>) -> Result<Vec<TagRecord>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for_each_line(path, |line_no, line| {
        let raw: TagLine = parse_line(path, line_no, line)?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id: raw.id,
            });
        }
        out.push(TagRecord {
            id: raw.id,
            class_label: raw.class,
            split: raw.split,
            tags: normalize_tags(&raw.tags),
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_tags(path: impl AsRef<Path>, records: &[TagRecord]) -> Result<()> {
    write_lines(path.as_ref(), records.iter())
}

fn write_lines<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// What a predictions file says about one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Prediction {
    Correct(bool),
    /// Predicted class, compared with the true label at join time.
    Predicted(String),
}

impl Prediction {
    pub fn is_correct_for(&self, class_label: &str) -> bool {
        match self {
            Prediction::Correct(c) => *c,
            Prediction::Predicted(p) => p == class_label,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicted: Option<String>,
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<HashMap<String, Prediction>> {
    let path = path.as_ref();
    let mut out: HashMap<String, Prediction> = HashMap::new();
    for_each_line(path, |line_no, line| {
        let raw: PredictionLine = parse_line(path, line_no, line)?;
        let pred = match (raw.correct, raw.predicted) {
            (Some(c), _) => Prediction::Correct(c),
            (None, Some(p)) => Prediction::Predicted(p),
            (None, None) => {
                return Err(Error::MissingPredictionField {
                    path: path.to_path_buf(),
                    line: line_no,
                    id: raw.id,
                })
            }
        };
        match out.get(&raw.id) {
            Some(prev) if *prev != pred => Err(Error::ConflictingPrediction {
                path: path.to_path_buf(),
                line: line_no,
                id: raw.id,
            }),
            Some(_) => Ok(()),
            None => {
                out.insert(raw.id, pred);
                Ok(())
            }
        }
    })?;
    Ok(out)
}

/// Writes `(id, prediction)` rows in the given order.
pub fn write_predictions<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (&'a str, &'a Prediction)>,
) -> Result<()> {
    write_lines(
        path.as_ref(),
        rows.into_iter().map(|(id, p)| match p {
            Prediction::Correct(c) => PredictionLine {
                id: id.to_string(),
                correct: Some(*c),
                predicted: None,
            },
            Prediction::Predicted(s) => PredictionLine {
                id: id.to_string(),
                correct: None,
                predicted: Some(s.clone()),
            },
        }),
    )
}

/// Attaches correctness to tag records, failing if any image lacks a prediction.
pub fn join(
    records: &[TagRecord],
    predictions: &HashMap<String, Prediction>,
) -> Result<Vec<ImageRecord>> {
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        match predictions.get(&r.id) {
            Some(p) => out.push(ImageRecord::from_tagged(
                r,
                p.is_correct_for(&r.class_label),
            )),
            None => missing.push(r.id.clone()),
        }
    }
    if !missing.is_empty() {
        let count = missing.len();
        missing.truncate(MISSING_ID_PREVIEW);
        return Err(Error::MissingPredictions {
            count,
            ids: missing,
        });
    }
    Ok(out)
}

/// Builds the dataset for one split: the records of that split are joined
/// with their predictions and indexed per class.
pub fn assemble(
    records: &[TagRecord],
    predictions: &HashMap<String, Prediction>,
    freq_threshold: u64,
    split: Split,
) -> Result<TaggedDataset> {
    let selected: Vec<TagRecord> = records
        .iter()
        .filter(|r| r.split == split)
        .cloned()
        .collect();
    let images = join(&selected, predictions)?;
    from_images(&images, freq_threshold, split)
}

/// Indexes the already-joined images of one split. Image order within a
/// class is preserved.
pub fn from_images(
    images: &[ImageRecord],
    freq_threshold: u64,
    split: Split,
) -> Result<TaggedDataset> {
    let mut seen = HashSet::new();
    let mut by_class: BTreeMap<&str, Vec<ImageRecord>> = BTreeMap::new();
    for img in images {
        if !seen.insert(img.id.as_str()) {
            return Err(Error::DuplicateId {
                path: "<records>".into(),
                line: 0,
                id: img.id.clone(),
            });
        }
        if img.split != split {
            continue;
        }
        by_class
            .entry(img.class_label.as_str())
            .or_default()
            .push(img.clone());
    }
    let built: Vec<ClassIndex> = by_class
        .into_par_iter()
        .map(|(_, recs)| ClassIndex::build(&recs, freq_threshold))
        .collect::<Result<_>>()?;
    Ok(TaggedDataset {
        split,
        classes: built
            .into_iter()
            .map(|c| (c.class_label.clone(), c))
            .collect(),
    })
}

/// Convenience: load both files and assemble one split.
pub fn load_dataset(
    tags_path: impl AsRef<Path>,
    preds_path: impl AsRef<Path>,
    freq_threshold: u64,
    split: Split,
) -> Result<TaggedDataset> {
    let tags = load_tags(tags_path)?;
    let preds = load_predictions(preds_path)?;
    assemble(&tags, &preds, freq_threshold, split)
}

/// Fixed-dimension vectors keyed by image id or mode description.
///
/// Both the vectors as loaded and their unit-normalized copies are kept:
/// similarity uses the unit vectors, latent-space distances use the raw ones.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dimension: usize,
    keys: Vec<String>,
    index: HashMap<String, usize>,
    raw: Vec<f64>,
    unit: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            keys: Vec::new(),
            index: HashMap::new(),
            raw: Vec::new(),
            unit: Vec::new(),
        }
    }

    pub fn from_rows<K, I>(dimension: usize, rows: I) -> Result<Self>
    where
        K: Into<String>,
        I: IntoIterator<Item = (K, Vec<f64>)>,
    {
        let mut table = Self::new(dimension);
        for (k, v) in rows {
            table.insert(k.into(), &v)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, key: String, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dimension || self.dimension == 0 {
            return Err(Error::DimensionMismatch {
                key,
                expected: self.dimension,
                found: vector.len(),
            });
        }
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::ZeroNorm(key));
        }
        if self.index.contains_key(&key) {
            return Err(Error::DuplicateId {
                path: "<embeddings>".into(),
                line: self.keys.len() + 1,
                id: key,
            });
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.raw.extend_from_slice(vector);
        self.unit.extend(vector.iter().map(|x| x / norm));
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    fn slot(&self, key: &str) -> Result<usize> {
        self.index
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingEmbedding(key.to_string()))
    }

    /// Unit-normalized vector.
    pub fn unit(&self, key: &str) -> Result<&[f64]> {
        let i = self.slot(key)?;
        Ok(&self.unit[i * self.dimension..(i + 1) * self.dimension])
    }

    /// Vector as loaded.
    pub fn raw(&self, key: &str) -> Result<&[f64]> {
        let i = self.slot(key)?;
        Ok(&self.raw[i * self.dimension..(i + 1) * self.dimension])
    }

    pub fn raw_rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.keys
            .iter()
            .zip(self.raw.chunks_exact(self.dimension.max(1)))
            .map(|(k, v)| (k.as_str(), v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Jsonl,
    Binary,
    /// Binary when the file starts with the magic bytes, JSON lines otherwise.
    Auto,
}

impl std::str::FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "bin" | "binary" => Ok(Self::Binary),
            "auto" => Ok(Self::Auto),
            other => Err(Error::InvalidConfig(format!(
                "unknown embedding format {other:?}"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    key: String,
    vec: Vec<f64>,
}

pub fn load_embeddings(path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let format = match format {
        EmbeddingFormat::Auto => {
            let mut head = [0u8; 4];
            let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let n = std::io::Read::read(&mut f, &mut head).map_err(|e| Error::io(path, e))?;
            if n == 4 && &head == BINARY_MAGIC {
                EmbeddingFormat::Binary
            } else {
                EmbeddingFormat::Jsonl
            }
        }
        f => f,
    };
    match format {
        EmbeddingFormat::Binary => load_binary(path),
        _ => load_jsonl(path),
    }
}

fn load_jsonl(path: &Path) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for_each_line(path, |line_no, line| {
        let raw: EmbeddingLine = parse_line(path, line_no, line)?;
        let t = table.get_or_insert_with(|| EmbeddingTable::new(raw.vec.len()));
        t.insert(raw.key, &raw.vec).map_err(|e| match e {
            Error::DuplicateId { id, .. } => Error::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id,
            },
            other => other,
        })
    })?;
    Ok(table.unwrap_or_else(|| EmbeddingTable::new(0)))
}

fn load_binary(path: &Path) -> Result<EmbeddingTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |message: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.to_string(),
    };
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = cursor.checked_add(n).filter(|&e| e <= bytes.len());
        match end {
            Some(end) => {
                let s = &bytes[cursor..end];
                cursor = end;
                Ok(s)
            }
            None => Err(corrupt("truncated embedding file")),
        }
    };
    if take(4)? != BINARY_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let dimension = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut keys = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let key = std::str::from_utf8(take(len)?)
            .map_err(|_| corrupt("key is not UTF-8"))?
            .to_string();
        keys.push(key);
    }
    let mut table = EmbeddingTable::new(dimension);
    let mut v = vec![0f64; dimension];
    for key in keys {
        let block = take(dimension * 4)?;
        for (dst, chunk) in v.iter_mut().zip(block.chunks_exact(4)) {
            *dst = f64::from(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        table.insert(key, &v)?;
    }
    if cursor != bytes.len() {
        return Err(corrupt("trailing bytes after embedding block"));
    }
    Ok(table)
}

/// Writes the raw vectors of `rows` in the chosen format (`Auto` means JSON lines).
pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    dimension: usize,
    rows: impl IntoIterator<Item = (&'a str, &'a [f64])>,
    format: EmbeddingFormat,
) -> Result<()> {
    let path = path.as_ref();
    match format {
        EmbeddingFormat::Binary => {
            let rows: Vec<_> = rows.into_iter().collect();
            let mut buf = Vec::new();
            buf.extend_from_slice(BINARY_MAGIC);
            buf.extend_from_slice(&(dimension as u32).to_le_bytes());
            buf.extend_from_slice(&(rows.len() as u64).to_le_bytes());
            for (k, _) in &rows {
                buf.extend_from_slice(&(k.len() as u32).to_le_bytes());
                buf.extend_from_slice(k.as_bytes());
            }
            for (k, v) in &rows {
                if v.len() != dimension {
                    return Err(Error::DimensionMismatch {
                        key: k.to_string(),
                        expected: dimension,
                        found: v.len(),
                    });
                }
                for x in v.iter() {
                    buf.extend_from_slice(&(*x as f32).to_le_bytes());
                }
            }
            fs::write(path, buf).map_err(|e| Error::io(path, e))
        }
        _ => write_lines(
            path,
            rows.into_iter().map(|(k, v)| EmbeddingLine {
                key: k.to_string(),
                vec: v.to_vec(),
            }),
        ),
    }
}
