//! Mining and evaluating tag-described failure modes of image classifiers.
//!
//! Images of each class carry human-readable tags and a correctness bit. The
//! [`miner`] finds minimal tag combinations whose images the classifier gets
//! markedly wrong; [`evaluate`], [`quality`], and [`latent`] measure how well
//! those descriptions generalize and how they relate to an embedding space.
//! [`synth`] plants known failure modes for testing.

pub mod bitset;
pub mod error;
pub mod evaluate;
pub mod ingest;
pub mod latent;
pub mod miner;
pub mod model;
pub mod quality;
pub mod rate;
pub mod synth;

pub use bitset::Bitset;
pub use error::{Error, Result};
pub use ingest::{EmbeddingFormat, EmbeddingTable, Prediction};
pub use miner::{mine, mine_exhaustive, mine_greedy, MineReport};
pub use model::{
    describe, ClassIndex, FailureMode, ImageRecord, MinerConfig, Split, Strategy, TagRecord,
    TaggedDataset,
};
pub use rate::{Accuracy, Rate};
