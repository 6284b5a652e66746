use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use tagslice::evaluate::{
    ablation_summary, generalize, subset_ablation, AblationTable, GeneralizeOptions,
};
use tagslice::ingest::{self, load_embeddings, load_predictions, load_tags};
use tagslice::latent::{distance_stats, neighborhood_stats, LatentData};
use tagslice::miner::audit;
use tagslice::quality::{score_modes, SamplingOptions};
use tagslice::synth::{self, generate, SynthPlan};
use tagslice::{mine, EmbeddingFormat, Error, MineReport, MinerConfig, Prediction};

use crate::args::{
    EvalArgs, LatentArgs, MineArgs, QualityArgs, SearchArgs, SynthArgs, SynthEmbedArgs,
};
use crate::manifest::Run;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Input(Error),
    Invariant(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidRate(_) | Error::InfeasibleSpec { .. } => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Input(other),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Input(_) => 3,
            Failure::Invariant(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Input(e) => write!(f, "{e}"),
            Failure::Invariant(problems) => {
                writeln!(f, "report failed its own audit:")?;
                for p in problems {
                    writeln!(f, "  {p}")?;
                }
                Ok(())
            }
        }
    }
}

type Outcome = Result<(), Failure>;

fn miner_config(search: &SearchArgs) -> MinerConfig {
    MinerConfig {
        min_support: search.min_support,
        min_drop: search.min_drop,
        b_schedule: search.b_schedule.clone(),
        max_tags: search.max_tags,
        freq_threshold: search.freq_threshold,
        ..MinerConfig::default()
    }
}

fn read_report(path: &Path) -> Result<MineReport, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

/// One block per class, one line per mode: `floor + hide (38.71%)`.
pub fn modes_text(report: &MineReport) -> String {
    let mut out = String::new();
    for class in &report.classes {
        let _ = writeln!(
            out,
            "{}  ({} images, baseline {}, {} modes)",
            class.class_label,
            class.image_count,
            pct(class.baseline_accuracy),
            class.modes
        );
        for m in report.modes_of(&class.class_label) {
            let _ = writeln!(
                out,
                "  {} ({})  support {}  drop {}",
                m.tags.join(" + "),
                pct(m.group_accuracy),
                m.support,
                pct(m.drop)
            );
        }
    }
    out
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Failure::Input(Error::InvalidConfig(e.to_string())))?;
    }
    w.into_inner()
        .map_err(|e| Failure::Input(Error::InvalidConfig(e.to_string())))
}

pub fn cmd_mine(args: MineArgs) -> Outcome {
    let config = MinerConfig {
        strategy: args.strategy,
        beam_width: args.beam,
        seed: args.seed,
        ..miner_config(&args.search)
    };
    config.validate()?;
    let mut run = Run::start(
        "mine",
        &args.out,
        Some(args.seed),
        serde_json::json!({
            "miner": &config,
            "split": args.split,
        }),
    )?;
    run.input(&args.data.tags)?;
    run.input(&args.data.preds)?;
    let dataset = ingest::load_dataset(
        &args.data.tags,
        &args.data.preds,
        config.freq_threshold,
        args.split,
    )?;
    let report = mine(&dataset, &config)?;
    let problems = audit(&report, &dataset);
    run.write_json("modes.json", &report)?;
    run.write_bytes("modes.txt", modes_text(&report).as_bytes())?;
    run.finish()?;
    eprintln!(
        "{} modes across {} classes ({} candidates evaluated, {:.2?})",
        report.modes.len(),
        report.classes.len(),
        report.stats.candidates_evaluated,
        report.stats.wall_time
    );
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(problems))
    }
}

#[derive(Serialize)]
struct GeneralizationRow<'a> {
    class: &'a str,
    tags: String,
    status: tagslice::evaluate::HoldoutStatus,
    train_support: u64,
    train_accuracy: f64,
    train_drop: f64,
    holdout_support: u64,
    holdout_accuracy: Option<f64>,
    holdout_drop: Option<f64>,
}

#[derive(Serialize)]
struct SkippedAblation {
    class: String,
    tags: Vec<String>,
    reason: String,
}

#[derive(Serialize)]
struct AblationReport {
    tables: Vec<AblationTable>,
    aggregate: Vec<tagslice::evaluate::AblationAggregate>,
    skipped: Vec<SkippedAblation>,
}

pub fn cmd_eval(args: EvalArgs) -> Outcome {
    let opts = GeneralizeOptions {
        min_holdout_support: args.min_holdout_support,
        drop_thresholds: args.drop_thresholds.clone(),
    };
    let mut run = Run::start(
        "eval",
        &args.out,
        None,
        serde_json::json!({
            "split": args.split,
            "freq_threshold": args.freq_threshold,
            "min_holdout_support": args.min_holdout_support,
            "drop_thresholds": &args.drop_thresholds,
        }),
    )?;
    run.input(&args.modes)?;
    run.input(&args.data.tags)?;
    run.input(&args.data.preds)?;
    let report = read_report(&args.modes)?;
    let dataset = ingest::load_dataset(
        &args.data.tags,
        &args.data.preds,
        args.freq_threshold,
        args.split,
    )?;
    let g = generalize(&report, &dataset, &opts);

    let rows = g.records.iter().map(|r| GeneralizationRow {
        class: &r.class_label,
        tags: r.tags.join(" + "),
        status: r.status,
        train_support: r.train_support,
        train_accuracy: r.train_accuracy,
        train_drop: r.train_drop,
        holdout_support: r.holdout_support,
        holdout_accuracy: r.holdout_accuracy,
        holdout_drop: r.holdout_drop,
    });
    let csv = csv_bytes(rows)?;
    run.write_bytes("generalization.csv", &csv)?;
    run.write_json("summary.json", &g.summary)?;

    let mut tables = Vec::new();
    let mut skipped = Vec::new();
    for m in &report.modes {
        match subset_ablation(m, &dataset) {
            Ok(t) => tables.push(t),
            Err(e) => skipped.push(SkippedAblation {
                class: m.class_label.clone(),
                tags: m.tags.clone(),
                reason: e.to_string(),
            }),
        }
    }
    let aggregate = ablation_summary(&tables);
    run.write_json(
        "ablation.json",
        &AblationReport {
            tables,
            aggregate,
            skipped,
        },
    )?;
    run.finish()?;
    eprintln!(
        "{} of {} modes evaluated; mean |train drop - holdout drop| {}",
        g.summary.evaluated,
        g.summary.modes,
        g.summary
            .mean_abs_drop_gap
            .map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
    );
    Ok(())
}

#[derive(Serialize)]
struct QualityRow<'a> {
    class: &'a str,
    tags: String,
    n_inside: usize,
    n_outside: usize,
    mean_sim: f64,
    std_sim: f64,
    auroc: Option<f64>,
}

pub fn cmd_quality(args: QualityArgs) -> Outcome {
    let sampling = SamplingOptions {
        n_outside_per_mode: args.n_outside,
        seed: args.seed,
    };
    let report = read_report(&args.modes)?;
    let freq = args.freq_threshold.unwrap_or(report.config.freq_threshold);
    let mut run = Run::start(
        "quality",
        &args.out,
        Some(args.seed),
        serde_json::json!({
            "split": args.split,
            "freq_threshold": freq,
            "sampling": &sampling,
        }),
    )?;
    for p in [&args.modes, &args.tags, &args.image_emb, &args.desc_emb] {
        run.input(p)?;
    }
    let records = load_tags(&args.tags)?;
    let preds: HashMap<String, Prediction> = match &args.preds {
        Some(p) => {
            run.input(p)?;
            load_predictions(p)?
        }
        None => records
            .iter()
            .map(|r| (r.id.clone(), Prediction::Correct(true)))
            .collect(),
    };
    let dataset = ingest::assemble(&records, &preds, freq, args.split)?;
    let images = load_embeddings(&args.image_emb, args.emb_format)?;
    let descriptions = load_embeddings(&args.desc_emb, args.emb_format)?;
    let q = score_modes(&report, &images, &descriptions, &dataset, &sampling)?;
    run.write_json("quality.json", &q)?;
    let csv = csv_bytes(q.modes.iter().map(|m| QualityRow {
        class: &m.class_label,
        tags: m.tags.join(" + "),
        n_inside: m.n_inside,
        n_outside: m.n_outside,
        mean_sim: m.mean_sim,
        std_sim: m.std_sim,
        auroc: m.auroc,
    }))?;
    run.write_bytes("quality.csv", &csv)?;
    run.finish()?;
    eprintln!(
        "{} modes scored; mean AUROC {}",
        q.modes.len(),
        q.mean_auroc
            .map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
    );
    Ok(())
}

#[derive(Serialize)]
struct LatentReport {
    images: usize,
    distance: tagslice::latent::DistanceStats,
    neighborhood: Option<tagslice::latent::NeighborhoodStats>,
}

pub fn cmd_latent(args: LatentArgs) -> Outcome {
    let mut run = Run::start(
        "latent",
        &args.out,
        Some(args.seed),
        serde_json::json!({
            "split": args.split,
            "d": &args.d,
            "pairs": args.pairs,
            "neighbors": &args.neighbors,
            "alpha": &args.alpha,
            "anchors": args.anchors,
        }),
    )?;
    run.input(&args.tags)?;
    run.input(&args.emb)?;
    let mut records = load_tags(&args.tags)?;
    if let Some(split) = args.split {
        records.retain(|r| r.split == split);
    }
    let table = load_embeddings(&args.emb, args.emb_format)?;
    let data = LatentData::new(&table, &records)?;
    let distance = distance_stats(&data, &args.d, args.pairs, args.seed)?;
    let neighborhood = if args.neighbors.is_empty() {
        None
    } else {
        Some(neighborhood_stats(
            &data,
            &args.neighbors,
            &args.alpha,
            args.anchors,
            args.seed,
        )?)
    };
    let mut tables = distance.to_table();
    if let Some(n) = &neighborhood {
        tables.push('\n');
        tables.push_str(&n.to_table());
    }
    run.write_json(
        "latent.json",
        &LatentReport {
            images: data.len(),
            distance,
            neighborhood,
        },
    )?;
    run.write_bytes("tables.txt", tables.as_bytes())?;
    run.finish()?;
    print!("{tables}");
    Ok(())
}

#[derive(Serialize)]
struct SpecEntry {
    spec: synth::PlantSpec,
    expected: synth::Expected,
    monte_carlo_pass_rate: Option<f64>,
}

/// Planted modes must clear every predicate in at least this share of draws.
const MIN_PASS_RATE: f64 = 0.99;

pub fn cmd_synth(args: SynthArgs) -> Outcome {
    let plan = SynthPlan {
        classes: args.classes,
        images_per_class: args.images,
        holdout_per_class: args.holdout,
        tags_per_class: args.tags_per_class,
        planted_sizes: args.planted_sizes.clone(),
        planted_marginal: args.planted_marginal,
        filler: (args.filler_min, args.filler_max),
        p_fail: args.p_fail,
        p_base: args.p_base,
        seed: args.seed,
    };
    let config = miner_config(&args.search);
    config.validate()?;
    let mut run = Run::start(
        "synth",
        &args.out,
        Some(args.seed),
        serde_json::json!({
            "plan": &plan,
            "noise_tags": args.noise_tags,
            "checked_against": &config,
            "margin": args.margin,
            "verify_trials": args.verify_trials,
        }),
    )?;
    let specs = plan.specs()?;
    let mut entries = Vec::with_capacity(specs.len());
    for spec in &specs {
        let expected = spec.validate(&config, args.margin)?;
        let rate = if args.verify_trials > 0 {
            let r = spec.monte_carlo(&config, args.verify_trials, args.seed)?;
            if r < MIN_PASS_RATE {
                return Err(Failure::Usage(format!(
                    "planted mode of {} meets the predicates in only {:.1}% of draws",
                    spec.class_label,
                    100.0 * r
                )));
            }
            Some(r)
        } else {
            None
        };
        entries.push(SpecEntry {
            spec: spec.clone(),
            expected,
            monte_carlo_pass_rate: rate,
        });
    }
    let data = generate(&specs, args.noise_tags, args.seed)?;
    data.write(&args.out)?;
    for f in ["tags.jsonl", "preds.jsonl", "truth.json"] {
        run.record(f)?;
    }
    run.write_json("specs.json", &entries)?;
    run.finish()?;
    eprintln!("{} images over {} classes", data.records.len(), specs.len());
    Ok(())
}

#[derive(Serialize)]
struct SpaceInfo<'a> {
    dimension: usize,
    vocabulary: &'a [String],
}

pub fn cmd_synth_embed(args: SynthEmbedArgs) -> Outcome {
    let format = match args.format {
        EmbeddingFormat::Auto => EmbeddingFormat::Jsonl,
        f => f,
    };
    let ext = if format == EmbeddingFormat::Binary {
        "bin"
    } else {
        "jsonl"
    };
    let mut run = Run::start(
        "synth-embed",
        &args.out,
        Some(args.seed),
        serde_json::json!({
            "dim": args.dim,
            "sigma": args.sigma,
            "format": ext,
        }),
    )?;
    run.input(&args.tags)?;
    let records = load_tags(&args.tags)?;
    let (space, rows) = synth::synth_embeddings(&records, args.dim, args.sigma, args.seed)?;
    let images = format!("images.{ext}");
    synth::write_vectors(run.path(&images), args.dim, &rows, format)?;
    run.record(&images)?;
    if let Some(modes) = &args.modes {
        run.input(modes)?;
        let report = read_report(modes)?;
        let descs = synth::description_embeddings(
            &space,
            report
                .modes
                .iter()
                .map(|m| (m.description.as_str(), m.tags.as_slice())),
        )?;
        let file = format!("descriptions.{ext}");
        synth::write_vectors(run.path(&file), args.dim, &descs, format)?;
        run.record(&file)?;
    }
    run.write_json(
        "space.json",
        &SpaceInfo {
            dimension: space.dimension,
            vocabulary: &space.vocabulary,
        },
    )?;
    run.finish()?;
    Ok(())
}
