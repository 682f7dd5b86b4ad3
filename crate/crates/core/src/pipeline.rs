//! End-to-end wiring: dataset manifest in, metrics report out.
//!
//! The stages follow the framework's three phases. Feature extraction maps
//! each view to a feature grid (handcrafted statistics, or an ingested
//! `FMAP1` map) and upsamples it by 4. Partition learning plans the
//! concentric squares, with the drone-side plan adjusted by the per-image
//! scale factor derived from the recorded height, and refines every part
//! into global/salient/background descriptors. Classification supervision
//! trains one head per (part, stream); at test time the concatenated
//! post-BN descriptors are ranked by Euclidean distance.

use crate::augment;
use crate::config::{ConfigError, RunConfig};
use crate::fmap::{self, FmapError};
use crate::geometry::{self, GeometryError, PartitionPlan};
use crate::model::checkpoint::CheckpointMeta;
use crate::model::{HeadBank, ModelError, TrainSample, Trainer};
use crate::refinement::{refine_partition, RefinementError, SgrsOutput};
use crate::retrieval::{self, EmbeddingRecord, MetricsReport, RetrievalError};
use crate::synth::dataset::{read_manifest, ManifestRecord, ViewRole};
use crate::synth::SynthError;
use crate::tensor::{Image, ImageIoError, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::Path;

/// Errors surfaced by pipeline commands.
#[derive(Debug)]
pub enum PipelineError {
    Config(ConfigError),
    Io(std::io::Error),
    Image(ImageIoError),
    Fmap(FmapError),
    Geometry(GeometryError),
    Refinement(RefinementError),
    Model(ModelError),
    Synth(SynthError),
    Retrieval(RetrievalError),
    Augment(augment::AugmentError),
    Invalid(String),
}

macro_rules! wrap_error {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for PipelineError {
            fn from(e: $ty) -> Self {
                PipelineError::$variant(e)
            }
        }
    };
}

wrap_error!(Config, ConfigError);
wrap_error!(Io, std::io::Error);
wrap_error!(Image, ImageIoError);
wrap_error!(Fmap, FmapError);
wrap_error!(Geometry, GeometryError);
wrap_error!(Refinement, RefinementError);
wrap_error!(Model, ModelError);
wrap_error!(Synth, SynthError);
wrap_error!(Retrieval, RetrievalError);
wrap_error!(Augment, augment::AugmentError);

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelineError::Config(e) => write!(f, "{e}"),
            PipelineError::Io(e) => write!(f, "io error: {e}"),
            PipelineError::Image(e) => write!(f, "{e}"),
            PipelineError::Fmap(e) => write!(f, "{e}"),
            PipelineError::Geometry(e) => write!(f, "{e}"),
            PipelineError::Refinement(e) => write!(f, "{e}"),
            PipelineError::Model(e) => write!(f, "{e}"),
            PipelineError::Synth(e) => write!(f, "{e}"),
            PipelineError::Retrieval(e) => write!(f, "{e}"),
            PipelineError::Augment(e) => write!(f, "{e}"),
            PipelineError::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for PipelineError {}

/// Scale factor for one view. Satellite views and disabled height awareness
/// both pin theta to zero.
pub fn theta_for(config: &RunConfig, role: ViewRole, height_m: f64, use_haas: bool) -> Result<i32, GeometryError> {
    if !use_haas || role == ViewRole::Satellite {
        return Ok(0);
    }
    geometry::scale_factor(height_m, config.h_sat, config.alpha)
}

/// Load or compute the feature grid of one record: PNGs go through the
/// handcrafted extractor, `.fmap` files are ingested directly (externally
/// computed feature maps) and must match the configured grid and channels.
pub fn extract_features(config: &RunConfig, root: &Path, record: &ManifestRecord) -> Result<Tensor3, PipelineError> {
    let path = root.join(&record.path);
    if record.path.ends_with(".fmap") {
        let tensor = fmap::load(&path)?;
        if tensor.channels() != config.channels
            || tensor.height() != config.grid()
            || tensor.width() != config.grid()
        {
            return Err(PipelineError::Invalid(format!(
                "feature map {} has shape {}x{}x{}, expected {}x{}x{}",
                record.path,
                tensor.channels(),
                tensor.height(),
                tensor.width(),
                config.channels,
                config.grid(),
                config.grid()
            )));
        }
        return Ok(tensor);
    }
    let img = Image::load_png(&path)?;
    features_of_image(config, &img)
}

/// Handcrafted features of an in-memory image at the configured grid.
pub fn features_of_image(config: &RunConfig, img: &Image) -> Result<Tensor3, PipelineError> {
    Ok(crate::synth::handcrafted_features(img, config.grid(), config.channels)?)
}

/// Upsample a feature grid, slice it by the height-adjusted plan and refine
/// every part into its three descriptors.
pub fn refine_feature_map(config: &RunConfig, features: &Tensor3, theta: i32) -> Result<Vec<SgrsOutput>, PipelineError> {
    let map = features.upsample4();
    let plan = geometry::plan_haas(config.map_size, config.n_parts, theta)?;
    let parts = geometry::extract_partitions(&map, &plan)?;
    parts
        .iter()
        .map(|p| Ok(refine_partition(p, config.cm_metric, config.delta, config.use_cm)?))
        .collect()
}

fn record_parts(
    config: &RunConfig,
    root: &Path,
    record: &ManifestRecord,
    use_haas: bool,
) -> Result<Vec<SgrsOutput>, PipelineError> {
    let features = extract_features(config, root, record)?;
    let theta = theta_for(config, record.role, record.height_m, use_haas)?;
    refine_feature_map(config, &features, theta)
}

/// Map dataset class ids to contiguous 1-based training labels.
fn class_label_map(records: &[ManifestRecord]) -> Vec<usize> {
    let classes: BTreeSet<usize> = records.iter().map(|r| r.class_id).collect();
    classes.into_iter().collect()
}

/// Train a head bank on the manifest records. Flip augmentation precomputes
/// the refined outputs of the mirrored views once and picks a variant per
/// epoch with probability one half.
pub fn train_bank(
    config: &RunConfig,
    root: &Path,
    records: &[ManifestRecord],
    use_haas: bool,
) -> Result<(HeadBank, CheckpointMeta), PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::Invalid("training manifest is empty".into()));
    }
    let class_ids = class_label_map(records);
    if class_ids.len() < 2 {
        return Err(PipelineError::Invalid("training needs at least two classes".into()));
    }
    let label_of = |class_id: usize| class_ids.iter().position(|&c| c == class_id).unwrap() + 1;

    let mut base = Vec::with_capacity(records.len());
    let mut flipped = Vec::with_capacity(records.len());
    for record in records {
        let theta = theta_for(config, record.role, record.height_m, use_haas)?;
        let features = extract_features(config, root, record)?;
        base.push(TrainSample {
            parts: refine_feature_map(config, &features, theta)?,
            label: label_of(record.class_id),
        });
        if config.train.horizontal_flip {
            let mirrored = if record.path.ends_with(".fmap") {
                features.flip_horizontal()
            } else {
                let img = Image::load_png(&root.join(&record.path))?;
                features_of_image(config, &img.flip_horizontal())?
            };
            flipped.push(TrainSample {
                parts: refine_feature_map(config, &mirrored, theta)?,
                label: label_of(record.class_id),
            });
        }
    }

    let mut bank = HeadBank::init(
        config.n_parts,
        config.channels,
        config.d_mid,
        class_ids.len(),
        config.dropout,
        config.seed,
    )?;
    let mut trainer = Trainer::new(&bank, config.train.clone(), config.seed);
    let mut flip_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xF11F_F11F);
    for _epoch in 0..config.train.epochs {
        let samples: Vec<TrainSample> = if config.train.horizontal_flip {
            base.iter()
                .zip(&flipped)
                .map(|(b, f)| if flip_rng.gen::<bool>() { f.clone() } else { b.clone() })
                .collect()
        } else {
            base.clone()
        };
        trainer.run_epoch(&mut bank, &samples)?;
    }

    let meta = CheckpointMeta {
        n_parts: config.n_parts,
        d_in: config.channels,
        d_mid: config.d_mid,
        n_classes: class_ids.len(),
        dropout_rate: config.dropout,
        class_ids,
        train_config: config.train.clone(),
    };
    Ok((bank, meta))
}

/// Descriptor embeddings of the given records.
pub fn embed_records(
    config: &RunConfig,
    root: &Path,
    records: &[ManifestRecord],
    bank: &HeadBank,
    use_haas: bool,
) -> Result<Vec<EmbeddingRecord>, PipelineError> {
    records
        .iter()
        .map(|record| {
            let parts = record_parts(config, root, record, use_haas)?;
            let vector = bank.assemble_descriptor(&parts)?;
            Ok(EmbeddingRecord::new(record.path.clone(), record.class_id, vector)?)
        })
        .collect()
}

/// Retrieval evaluation of a test split: drone views query the satellite
/// gallery.
pub fn evaluate_records(
    config: &RunConfig,
    root: &Path,
    records: &[ManifestRecord],
    bank: &HeadBank,
    use_haas: bool,
    k_list: &[usize],
) -> Result<MetricsReport, PipelineError> {
    let (drones, satellites): (Vec<ManifestRecord>, Vec<ManifestRecord>) =
        records.iter().cloned().partition(|r| r.role == ViewRole::Drone);
    let queries = embed_records(config, root, &drones, bank, use_haas)?;
    let gallery = embed_records(config, root, &satellites, bank, use_haas)?;
    Ok(retrieval::evaluate(&queries, &gallery, k_list)?)
}

/// Evaluate the test split with every drone view pushed through the height
/// simulation at `delta_p`; the recorded heights are relabeled accordingly
/// and drive the per-image scale factor.
pub fn evaluate_records_at_delta_p(
    config: &RunConfig,
    root: &Path,
    records: &[ManifestRecord],
    bank: &HeadBank,
    use_haas: bool,
    delta_p: i32,
    k_list: &[usize],
) -> Result<MetricsReport, PipelineError> {
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for record in records {
        match record.role {
            ViewRole::Satellite => {
                let parts = record_parts(config, root, record, use_haas)?;
                gallery.push(EmbeddingRecord::new(record.path.clone(), record.class_id, bank.assemble_descriptor(&parts)?)?);
            }
            ViewRole::Drone => {
                if record.path.ends_with(".fmap") {
                    return Err(PipelineError::Invalid(
                        "height simulation needs image inputs, not ingested feature maps".into(),
                    ));
                }
                let img = Image::load_png(&root.join(&record.path))?;
                let simulated = augment::simulate_height(&img, delta_p)?;
                let height = augment::adjusted_height(record.height_m, delta_p, config.lambda_aug)?;
                let theta = theta_for(config, record.role, height, use_haas)?;
                let features = features_of_image(config, &simulated)?;
                let parts = refine_feature_map(config, &features, theta)?;
                queries.push(EmbeddingRecord::new(record.path.clone(), record.class_id, bank.assemble_descriptor(&parts)?)?);
            }
        }
    }
    Ok(retrieval::evaluate(&queries, &gallery, k_list)?)
}

/// One point of the degradation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPointMetrics {
    pub delta_p: i32,
    pub recall_at_1: f64,
    pub map: f64,
}

/// Pipeline options beyond the run configuration.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Disabling height awareness forces theta to zero everywhere (the
    /// uniform-partition ablation).
    pub use_haas: bool,
    /// Height-simulation offsets for the degradation curve; empty skips it.
    pub delta_ps: Vec<i32>,
    pub k_list: Vec<usize>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { use_haas: true, delta_ps: Vec::new(), k_list: vec![1, 5] }
    }
}

/// Full pipeline report; serializes deterministically for a fixed seed and
/// input set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: RunConfig,
    pub seed: u64,
    /// Content hash of the manifests and every referenced file.
    pub input_hash: String,
    pub use_haas: bool,
    pub metrics: MetricsReport,
    pub per_delta_p: Vec<DeltaPointMetrics>,
}

/// Train on `train.jsonl`, evaluate on `test.jsonl`, and optionally trace
/// the accuracy degradation across height simulations.
pub fn run_pipeline(config: &RunConfig, dataset_dir: &Path, options: &PipelineOptions) -> Result<PipelineReport, PipelineError> {
    config.validate()?;
    let train_records = read_manifest(&dataset_dir.join("train.jsonl"))?;
    let test_records = read_manifest(&dataset_dir.join("test.jsonl"))?;
    let input_hash = input_digest(dataset_dir, train_records.iter().chain(&test_records))?;

    let (bank, _meta) = train_bank(config, dataset_dir, &train_records, options.use_haas)?;
    let metrics = evaluate_records(config, dataset_dir, &test_records, &bank, options.use_haas, &options.k_list)?;

    let mut per_delta_p = Vec::with_capacity(options.delta_ps.len());
    for &dp in &options.delta_ps {
        let m = evaluate_records_at_delta_p(
            config,
            dataset_dir,
            &test_records,
            &bank,
            options.use_haas,
            dp,
            &options.k_list,
        )?;
        per_delta_p.push(DeltaPointMetrics {
            delta_p: dp,
            recall_at_1: m.recalls.get(&1).copied().unwrap_or(0.0),
            map: m.map,
        });
    }

    Ok(PipelineReport {
        config: config.clone(),
        seed: config.seed,
        input_hash,
        use_haas: options.use_haas,
        metrics,
        per_delta_p,
    })
}

/// Mean R@1 over the (alpha, delta_p) grid, each cell a trained pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub alphas: Vec<f64>,
    pub delta_ps: Vec<i32>,
    /// `recall_at_1[i][j]` is the cell for `alphas[i]`, `delta_ps[j]`.
    pub recall_at_1: Vec<Vec<f64>>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha");
        for dp in &self.delta_ps {
            out.push_str(&format!(",dp_{dp}"));
        }
        out.push('\n');
        for (alpha, row) in self.alphas.iter().zip(&self.recall_at_1) {
            out.push_str(&format!("{alpha}"));
            for cell in row {
                out.push_str(&format!(",{cell}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Sweep the partition adjustment factor against height simulations;
/// every alpha must be admissible for the configured height range.
pub fn sweep_alpha(
    config: &RunConfig,
    dataset_dir: &Path,
    alphas: &[f64],
    delta_ps: &[i32],
) -> Result<SweepTable, PipelineError> {
    if alphas.is_empty() || delta_ps.is_empty() {
        return Err(PipelineError::Invalid("sweep needs at least one alpha and one delta_p".into()));
    }
    let mut table = SweepTable {
        alphas: alphas.to_vec(),
        delta_ps: delta_ps.to_vec(),
        recall_at_1: Vec::with_capacity(alphas.len()),
    };
    for &alpha in alphas {
        let swept = RunConfig { alpha, ..config.clone() };
        swept.validate()?;
        let options = PipelineOptions { use_haas: true, delta_ps: delta_ps.to_vec(), k_list: vec![1] };
        let report = run_pipeline(&swept, dataset_dir, &options)?;
        table.recall_at_1.push(report.per_delta_p.iter().map(|d| d.recall_at_1).collect());
    }
    Ok(table)
}

/// Partition plans of both views for one drone height, with the clamp flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub h_drone: f64,
    pub h_sat: f64,
    pub theta: i32,
    pub drone: PartitionPlan,
    pub satellite: PartitionPlan,
    pub drone_shrink_warning: bool,
}

/// Plans for a drone/satellite pair under the configured geometry.
pub fn plan_views(config: &RunConfig, h_drone: f64) -> Result<PlanReport, PipelineError> {
    config.validate()?;
    let theta = geometry::scale_factor(h_drone, config.h_sat, config.alpha)?;
    let drone = geometry::plan_haas(config.map_size, config.n_parts, theta)?;
    let satellite = geometry::plan_sps(config.map_size, config.n_parts)?;
    let drone_shrink_warning = drone.shrink_warning();
    Ok(PlanReport { h_drone, h_sat: config.h_sat, theta, drone, satellite, drone_shrink_warning })
}

/// Augmented copy of a test split: drone images go through the height
/// simulation and get relabeled heights; satellite views are copied
/// unchanged. Writes the mirrored tree, a `test.jsonl` with adjusted
/// heights, and `augment_manifest.json` recording `delta_p` and the new
/// height per image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub delta_p: i32,
    pub lambda_aug: f64,
    pub images: Vec<AugmentEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentEntry {
    pub path: String,
    pub class_id: usize,
    pub role: ViewRole,
    pub delta_p: i32,
    pub height_m: f64,
}

pub fn augment_dataset(
    root: &Path,
    records: &[ManifestRecord],
    delta_p: i32,
    lambda_aug: f64,
    out_dir: &Path,
) -> Result<AugmentManifest, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let mut out_records = Vec::with_capacity(records.len());
    let mut entries = Vec::with_capacity(records.len());
    for record in records {
        let src = root.join(&record.path);
        let dst = out_dir.join(&record.path);
        std::fs::create_dir_all(dst.parent().unwrap())?;
        let (applied_dp, height) = match record.role {
            ViewRole::Satellite => {
                std::fs::copy(&src, &dst)?;
                (0, record.height_m)
            }
            ViewRole::Drone => {
                let img = Image::load_png(&src)?;
                augment::simulate_height(&img, delta_p)?.save_png(&dst)?;
                (delta_p, augment::adjusted_height(record.height_m, delta_p, lambda_aug)?)
            }
        };
        out_records.push(ManifestRecord { height_m: height, ..record.clone() });
        entries.push(AugmentEntry {
            path: record.path.clone(),
            class_id: record.class_id,
            role: record.role,
            delta_p: applied_dp,
            height_m: height,
        });
    }
    let manifest = AugmentManifest { delta_p, lambda_aug, images: entries };
    let mut lines = String::new();
    for record in &out_records {
        lines.push_str(&serde_json::to_string(record).map_err(|e| PipelineError::Invalid(e.to_string()))?);
        lines.push('\n');
    }
    std::fs::write(out_dir.join("test.jsonl"), lines)?;
    std::fs::write(
        out_dir.join("augment_manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::Invalid(e.to_string()))?,
    )?;
    Ok(manifest)
}

/// Content hash of the manifests plus every referenced file, hex encoded.
pub fn input_digest<'a>(
    root: &Path,
    records: impl Iterator<Item = &'a ManifestRecord>,
) -> Result<String, PipelineError> {
    let mut hasher = Sha256::new();
    for name in ["train.jsonl", "test.jsonl"] {
        let path = root.join(name);
        if path.exists() {
            hasher.update(std::fs::read(&path)?);
        }
    }
    for record in records {
        hasher.update(record.path.as_bytes());
        hasher.update(std::fs::read(root.join(&record.path))?);
    }
    Ok(hex_digest(&hasher.finalize()))
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Minimal SVG polyline of R@1 against the simulation offset.
pub fn write_degradation_svg(path: &Path, points: &[(i32, f64)]) -> Result<(), std::io::Error> {
    let (w, h, margin) = (480.0f64, 320.0f64, 40.0f64);
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|&(dp, _)| dp);
    let (x_min, x_max) = match (sorted.first(), sorted.last()) {
        (Some(&(a, _)), Some(&(b, _))) if a != b => (a as f64, b as f64),
        (Some(&(a, _)), _) => (a as f64 - 1.0, a as f64 + 1.0),
        _ => (0.0, 1.0),
    };
    let sx = |dp: f64| margin + (dp - x_min) / (x_max - x_min) * (w - 2.0 * margin);
    let sy = |r: f64| h - margin - r * (h - 2.0 * margin);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{y}\" x2=\"{x}\" y2=\"{y}\" stroke=\"black\"/>\n",
        m = margin,
        y = h - margin,
        x = w - margin
    ));
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{y}\" stroke=\"black\"/>\n",
        m = margin,
        y = h - margin
    ));
    let poly: Vec<String> = sorted.iter().map(|&(dp, r)| format!("{:.2},{:.2}", sx(dp as f64), sy(r))).collect();
    svg.push_str(&format!(
        "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
        poly.join(" ")
    ));
    for &(dp, r) in &sorted {
        svg.push_str(&format!(
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n",
            sx(dp as f64),
            sy(r)
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{dp}</text>\n",
            sx(dp as f64),
            h - margin + 14.0
        ));
    }
    svg.push_str("  <text x=\"12\" y=\"20\" font-size=\"12\">R@1 vs delta_p</text>\n</svg>\n");
    std::fs::write(path, svg)
}

/// Serialize a report with a trailing newline; byte-identical for identical
/// runs.
pub fn write_report(report: &PipelineReport, path: &Path) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
