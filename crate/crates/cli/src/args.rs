use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tagslice::{EmbeddingFormat, Rate, Split, Strategy};

#[derive(Parser, Debug)]
#[command(
    name = "tagslice",
    version,
    about = "Mine and evaluate tag-defined failure modes of a classifier"
)]
pub struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, env = "PRIME_THREADS", default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Search for minimal tag sets with a large accuracy drop.
    Mine(MineArgs),
    /// Re-measure mined modes on another split and ablate their tag subsets.
    Eval(EvalArgs),
    /// Score mode descriptions against image embeddings.
    Quality(QualityArgs),
    /// Compare embedding distances with shared tags.
    Latent(LatentArgs),
    /// Generate a synthetic dataset with planted modes.
    Synth(SynthArgs),
    /// Build tag-indicator embeddings for images and mode descriptions.
    SynthEmbed(SynthEmbedArgs),
}

fn comma_list<T: std::str::FromStr>(raw: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

pub fn rate_list(raw: &str) -> Result<Vec<Rate>, String> {
    comma_list(raw)
}

pub fn usize_list(raw: &str) -> Result<Vec<usize>, String> {
    comma_list(raw)
}

pub fn f64_list(raw: &str) -> Result<Vec<f64>, String> {
    comma_list(raw)
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Tags file (JSON lines: id, class, split, tags).
    #[arg(long)]
    pub tags: PathBuf,
    /// Predictions file (JSON lines: id and either correct or predicted).
    #[arg(long)]
    pub preds: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    /// Minimum group size.
    #[arg(long = "s", default_value_t = 30)]
    pub min_support: u64,
    /// Minimum accuracy drop, as a fraction (0.30) or percent (30%).
    #[arg(long = "a", default_value = "0.30")]
    pub min_drop: Rate,
    /// Minimality margins b2,b3,...; later sizes keep halving.
    #[arg(long = "b", default_value = "0.10,0.05,0.025", value_parser = rate_list)]
    pub b_schedule: std::vec::Vec<Rate>,
    #[arg(long, default_value_t = 4)]
    pub max_tags: usize,
    /// Tags seen in fewer class images are left out of the vocabulary.
    #[arg(long, default_value_t = 50)]
    pub freq_threshold: u64,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = Split::Train)]
    pub split: Split,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value = "exhaustive")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// modes.json written by `mine`.
    #[arg(long)]
    pub modes: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = Split::Holdout)]
    pub split: Split,
    #[arg(long, default_value_t = 1)]
    pub freq_threshold: u64,
    /// Modes with fewer matching images on this split are flagged, not scored.
    #[arg(long, default_value_t = 10)]
    pub min_holdout_support: u64,
    #[arg(long, default_value = "0.20,0.25", value_parser = rate_list)]
    pub drop_thresholds: std::vec::Vec<Rate>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct QualityArgs {
    #[arg(long)]
    pub modes: PathBuf,
    #[arg(long)]
    pub tags: PathBuf,
    /// Optional; group membership depends on tags alone.
    #[arg(long)]
    pub preds: Option<PathBuf>,
    #[arg(long, default_value_t = Split::Train)]
    pub split: Split,
    /// Defaults to the threshold recorded in the modes report.
    #[arg(long)]
    pub freq_threshold: Option<u64>,
    #[arg(long)]
    pub image_emb: PathBuf,
    /// Description embeddings keyed by "<class>: <tag1> + <tag2> + ...".
    #[arg(long)]
    pub desc_emb: PathBuf,
    #[arg(long, default_value = "auto")]
    pub emb_format: EmbeddingFormat,
    /// Outside images sampled per mode; defaults to the mode's size.
    #[arg(long)]
    pub n_outside: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LatentArgs {
    #[arg(long)]
    pub tags: PathBuf,
    /// Image embeddings; distances use the vectors as stored.
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long, default_value = "auto")]
    pub emb_format: EmbeddingFormat,
    /// Restrict to one split; all images by default.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long, default_value = "0,1,3,5,7", value_parser = usize_list)]
    pub d: std::vec::Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    #[arg(long, default_value = "50,100", value_parser = usize_list)]
    pub neighbors: std::vec::Vec<usize>,
    #[arg(long, default_value = "0.6,0.7,0.8", value_parser = f64_list)]
    pub alpha: std::vec::Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub anchors: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 2000)]
    pub images: usize,
    /// Holdout images per class.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long, default_value_t = 20)]
    pub tags_per_class: usize,
    /// Planted tag counts, cycled over classes.
    #[arg(long, default_value = "1,2,3", value_parser = usize_list)]
    pub planted_sizes: std::vec::Vec<usize>,
    /// Planted tag marginal; 0.3 for single tags and 0.35 otherwise by default.
    #[arg(long)]
    pub planted_marginal: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub filler_min: f64,
    #[arg(long, default_value_t = 0.15)]
    pub filler_max: f64,
    #[arg(long, default_value_t = 0.02)]
    pub p_fail: f64,
    #[arg(long, default_value_t = 0.95)]
    pub p_base: f64,
    /// Extra low-frequency tags shared by every class.
    #[arg(long, default_value_t = 0)]
    pub noise_tags: usize,
    /// Specs are checked against these search settings.
    #[command(flatten)]
    pub search: SearchArgs,
    /// Slack required beyond each threshold in the expected values.
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    /// Monte-Carlo draws per spec; 0 skips the check.
    #[arg(long, default_value_t = 100)]
    pub verify_trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthEmbedArgs {
    #[arg(long)]
    pub tags: PathBuf,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Also embed the descriptions of this modes report.
    #[arg(long)]
    pub modes: Option<PathBuf>,
    #[arg(long, default_value = "jsonl")]
    pub format: EmbeddingFormat,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
