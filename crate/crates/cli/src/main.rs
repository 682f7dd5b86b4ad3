//! `salpn` — scale-adaptive partition learning pipeline driver.
//!
//! Subcommands: `plan` (inspect partition geometry for a drone height),
//! `synth` (generate a synthetic cross-view dataset), `augment` (height
//! simulation of a test split), `train`, `eval`, `pipeline` (train plus
//! evaluate plus degradation curve) and `sweep-alpha`.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use salpn_core::model::checkpoint;
use salpn_core::pipeline::{self, PipelineOptions};
use salpn_core::retrieval;
use salpn_core::synth::dataset::{make_dataset, read_manifest, DatasetParams};
use salpn_core::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "salpn", version, about = "Scale-adaptive partition learning for cross-view retrieval")]
struct Cli {
    /// JSON run configuration; defaults are the published settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override (highest precedence, above SALPN_SEED and the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the drone and satellite partition plans for a drone height.
    Plan {
        /// Drone shooting height in meters.
        #[arg(long)]
        h_drone: f64,
    },
    /// Generate a synthetic cross-view dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        classes: usize,
        /// Drone heights in meters.
        #[arg(long, value_delimiter = ',', default_values_t = vec![123.5, 189.75, 256.0])]
        heights: Vec<f64>,
        #[arg(long)]
        sat_height: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
    },
    /// Write a height-simulated copy of a test split.
    Augment {
        /// Dataset directory containing the manifest.
        #[arg(long)]
        dataset: PathBuf,
        /// Manifest file name inside the dataset directory.
        #[arg(long, default_value = "test.jsonl")]
        manifest: String,
        /// Simulation offset in pixels (positive pads, negative crops).
        #[arg(long, allow_hyphen_values = true)]
        delta_p: i32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier bank and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test split (or on imported embeddings).
    Eval(EvalArgs),
    /// Train, evaluate, and trace the degradation curve in one run.
    Pipeline(PipelineArgs),
    /// Mean R@1 over an (alpha, delta_p) grid, written as CSV.
    SweepAlpha(SweepArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Force theta to zero everywhere (uniform-partition ablation).
    #[arg(long)]
    no_haas: bool,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    no_haas: bool,
    /// Recall cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 5, 10])]
    k: Vec<usize>,
    /// Metrics report output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Query embeddings: JSON-lines sidecar manifest of FMAP1 vectors.
    #[arg(long)]
    query_embeddings: Option<PathBuf>,
    /// Gallery embeddings manifest.
    #[arg(long)]
    gallery_embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    no_haas: bool,
    /// Height-simulation offsets for the degradation curve.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta_ps: Vec<i32>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 5])]
    k: Vec<usize>,
    /// Report output path (defaults to stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional SVG plot of R@1 against delta_p.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta_ps: Vec<i32>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    config.apply_env_seed()?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Plan { h_drone } => {
            let config = load_config(&cli)?;
            let report = pipeline::plan_views(&config, *h_drone)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Synth { out, classes, heights, sat_height, resolution, train_fraction } => {
            let config = load_config(&cli)?;
            let params = DatasetParams {
                seed: config.seed,
                num_classes: *classes,
                drone_heights: heights.clone(),
                sat_height: sat_height.unwrap_or(config.h_sat),
                resolution: resolution.unwrap_or(config.image_size),
                train_fraction: *train_fraction,
            };
            let manifest = make_dataset(out, &params)?;
            println!(
                "wrote {} train and {} test views under {}",
                manifest.train.len(),
                manifest.test.len(),
                out.display()
            );
        }
        Command::Augment { dataset, manifest, delta_p, out } => {
            let config = load_config(&cli)?;
            let records = read_manifest(&dataset.join(manifest))?;
            let result = pipeline::augment_dataset(dataset, &records, *delta_p, config.lambda_aug, out)?;
            println!(
                "wrote {} views at delta_p {} under {}",
                result.images.len(),
                result.delta_p,
                out.display()
            );
        }
        Command::Train(args) => {
            let config = load_config(&cli)?;
            let records = read_manifest(&args.dataset.join("train.jsonl"))?;
            let (bank, meta) = pipeline::train_bank(&config, &args.dataset, &records, !args.no_haas)?;
            checkpoint::save(&bank, &meta, &args.out)?;
            println!("trained {} heads on {} views -> {}", bank.heads.len(), records.len(), args.out.display());
        }
        Command::Eval(args) => {
            let config = load_config(&cli)?;
            let report = match (&args.query_embeddings, &args.gallery_embeddings) {
                (Some(queries), Some(gallery)) => {
                    let queries = retrieval::load_embeddings(queries)
                        .map_err(|e| anyhow::anyhow!("loading query embeddings: {e}"))?;
                    let gallery = retrieval::load_embeddings(gallery)
                        .map_err(|e| anyhow::anyhow!("loading gallery embeddings: {e}"))?;
                    retrieval::evaluate(&queries, &gallery, &args.k)?
                }
                (None, None) => {
                    let dataset = args.dataset.as_ref().context("--dataset is required without embeddings")?;
                    let ckpt = args.checkpoint.as_ref().context("--checkpoint is required without embeddings")?;
                    let (bank, _meta) = checkpoint::load(ckpt)?;
                    let records = read_manifest(&dataset.join("test.jsonl"))?;
                    pipeline::evaluate_records(&config, dataset, &records, &bank, !args.no_haas, &args.k)?
                }
                _ => bail!("--query-embeddings and --gallery-embeddings must be given together"),
            };
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(out) = &args.out {
                std::fs::write(out, format!("{text}\n"))?;
            }
            println!("{text}");
        }
        Command::Pipeline(args) => {
            let config = load_config(&cli)?;
            let options = PipelineOptions {
                use_haas: !args.no_haas,
                delta_ps: args.delta_ps.clone(),
                k_list: args.k.clone(),
            };
            let report = pipeline::run_pipeline(&config, &args.dataset, &options)?;
            if let Some(out) = &args.out {
                pipeline::write_report(&report, out)?;
            }
            if let Some(plot) = &args.plot {
                let points: Vec<(i32, f64)> =
                    report.per_delta_p.iter().map(|d| (d.delta_p, d.recall_at_1)).collect();
                pipeline::write_degradation_svg(plot, &points)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::SweepAlpha(args) => {
            let config = load_config(&cli)?;
            let table = pipeline::sweep_alpha(&config, &args.dataset, &args.alphas, &args.delta_ps)?;
            let csv = table.to_csv();
            if let Some(out) = &args.out {
                std::fs::write(out, &csv)?;
            }
            print!("{csv}");
        }
    }
    Ok(())
}
