//! Dataset generation: render one satellite view plus one drone view per
//! listed height for every class, write PNGs and 16-bit label maps, and
//! record everything in JSON-lines manifests with disjoint train/test class
//! splits.

use super::{render_view, RenderedView, SynthError, WorldScene, CAMERA_CONSTANT};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Which platform a view simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewRole {
    Drone,
    Satellite,
}

/// One manifest line: `{path, class_id, role, height_m}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub class_id: usize,
    pub role: ViewRole,
    pub height_m: f64,
}

/// In-memory view of the generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub train: Vec<ManifestRecord>,
    pub test: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn all_records(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.train.iter().chain(self.test.iter())
    }
}

/// Generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub seed: u64,
    pub num_classes: usize,
    pub drone_heights: Vec<f64>,
    pub sat_height: f64,
    pub resolution: usize,
    /// Fraction of classes assigned to the training split.
    pub train_fraction: f64,
}

impl DatasetParams {
    pub fn new(seed: u64, num_classes: usize, drone_heights: Vec<f64>, sat_height: f64, resolution: usize) -> Self {
        Self { seed, num_classes, drone_heights, sat_height, resolution, train_fraction: 0.5 }
    }
}

/// Label-map path for an image record: `images/` replaced by `labels/`.
pub fn label_path_for(record: &ManifestRecord) -> String {
    record.path.replacen("images/", "labels/", 1)
}

fn dataset_error(e: impl std::fmt::Display) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::Other, e.to_string())
}

/// Generate the dataset under `out_dir` and write `train.jsonl` /
/// `test.jsonl`. Regeneration with the same parameters produces identical
/// bytes.
pub fn make_dataset(out_dir: &Path, params: &DatasetParams) -> Result<DatasetManifest, std::io::Error> {
    if params.num_classes < 2 {
        return Err(dataset_error("num_classes must be at least 2"));
    }
    if params.sat_height <= 0.0 || params.drone_heights.iter().any(|&h| h <= 0.0) {
        return Err(dataset_error("heights must be strictly positive"));
    }
    let max_height = params
        .drone_heights
        .iter()
        .copied()
        .fold(params.sat_height, f64::max);
    let extent = CAMERA_CONSTANT * max_height;

    std::fs::create_dir_all(out_dir)?;
    let train_classes = ((params.num_classes as f64 * params.train_fraction).round() as usize)
        .clamp(1, params.num_classes - 1);

    let mut train = Vec::new();
    let mut test = Vec::new();
    for class_id in 1..=params.num_classes {
        let scene = WorldScene::generate(params.seed, class_id, extent).map_err(dataset_error)?;
        let split = if class_id <= train_classes { &mut train } else { &mut test };
        let mut views: Vec<(ViewRole, f64)> = vec![(ViewRole::Satellite, params.sat_height)];
        views.extend(params.drone_heights.iter().map(|&h| (ViewRole::Drone, h)));
        for (role, height) in views {
            let view = render_view(&scene, height, params.resolution).map_err(dataset_error)?;
            let stem = match role {
                ViewRole::Satellite => "satellite".to_string(),
                ViewRole::Drone => format!("drone_{height}"),
            };
            let rel_img = format!("images/class_{class_id:04}/{stem}.png");
            let rel_lab = format!("labels/class_{class_id:04}/{stem}.png");
            write_view(out_dir, &rel_img, &rel_lab, &view)?;
            split.push(ManifestRecord { path: rel_img, class_id, role, height_m: height });
        }
    }

    write_manifest(&out_dir.join("train.jsonl"), &train)?;
    write_manifest(&out_dir.join("test.jsonl"), &test)?;
    Ok(DatasetManifest { root: out_dir.to_path_buf(), train, test })
}

fn write_view(root: &Path, rel_img: &str, rel_lab: &str, view: &RenderedView) -> Result<(), std::io::Error> {
    let img_path = root.join(rel_img);
    let lab_path = root.join(rel_lab);
    std::fs::create_dir_all(img_path.parent().unwrap())?;
    std::fs::create_dir_all(lab_path.parent().unwrap())?;
    view.image.save_png(&img_path).map_err(dataset_error)?;
    save_label_map(&view.label_map, view.resolution(), &lab_path)
}

/// Label maps are 16-bit grayscale PNGs.
pub fn save_label_map(labels: &[u16], resolution: usize, path: &Path) -> Result<(), std::io::Error> {
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        resolution as u32,
        resolution as u32,
        labels.to_vec(),
    )
    .ok_or_else(|| dataset_error("label buffer does not match resolution"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(dataset_error)
}

/// Read a 16-bit grayscale label map back.
pub fn load_label_map(path: &Path) -> Result<(Vec<u16>, usize), std::io::Error> {
    let img = image::open(path).map_err(dataset_error)?.to_luma16();
    let (w, h) = img.dimensions();
    if w != h {
        return Err(dataset_error(SynthError::BadLabelMap { height: h as usize, width: w as usize }));
    }
    Ok((img.into_raw(), w as usize))
}

fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), std::io::Error> {
    let mut text = String::new();
    for record in records {
        text.push_str(&serde_json::to_string(record)?);
        text.push('\n');
    }
    std::fs::write(path, text)
}

/// Parse a JSON-lines manifest.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, std::io::Error> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| dataset_error(e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DatasetParams {
        DatasetParams::new(1, 6, vec![123.5, 189.75, 256.0], 189.75, 32)
    }

    #[test]
    fn view_counts_match_heights_times_classes() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = make_dataset(dir.path(), &params()).unwrap();
        let all: Vec<&ManifestRecord> = manifest.all_records().collect();
        let sats = all.iter().filter(|r| r.role == ViewRole::Satellite).count();
        let drones = all.iter().filter(|r| r.role == ViewRole::Drone).count();
        assert_eq!(sats, 6);
        assert_eq!(drones, 18);
        for record in &all {
            assert!(dir.path().join(&record.path).exists());
            assert!(dir.path().join(label_path_for(record)).exists());
        }
    }

    #[test]
    fn splits_are_disjoint_by_class() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = make_dataset(dir.path(), &params()).unwrap();
        let train: std::collections::HashSet<usize> =
            manifest.train.iter().map(|r| r.class_id).collect();
        let test: std::collections::HashSet<usize> =
            manifest.test.iter().map(|r| r.class_id).collect();
        assert!(train.is_disjoint(&test));
        assert!(!train.is_empty() && !test.is_empty());
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        make_dataset(dir_a.path(), &params()).unwrap();
        make_dataset(dir_b.path(), &params()).unwrap();
        for name in ["train.jsonl", "test.jsonl"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b);
        }
        // Spot-check one image byte-for-byte.
        let rel = "images/class_0001/satellite.png";
        assert_eq!(
            std::fs::read(dir_a.path().join(rel)).unwrap(),
            std::fs::read(dir_b.path().join(rel)).unwrap()
        );
    }

    #[test]
    fn label_maps_round_trip_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = make_dataset(dir.path(), &params()).unwrap();
        let record = &manifest.train[0];
        let (labels, res) = load_label_map(&dir.path().join(label_path_for(record))).unwrap();
        assert_eq!(res, 32);
        assert_eq!(labels.len(), 32 * 32);
        assert!(labels.iter().any(|&id| id == 1), "target visible in satellite view");
    }

    #[test]
    fn manifest_records_serialize_with_documented_fields() {
        let record = ManifestRecord {
            path: "images/class_0001/satellite.png".into(),
            class_id: 1,
            role: ViewRole::Satellite,
            height_m: 189.75,
        };
        let value = serde_json::to_value(&record).unwrap();
        assert_eq!(value["role"], "satellite");
        assert_eq!(value["height_m"], 189.75);
        let keys: Vec<&str> = value.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys.len(), 4);
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = params();
        p.num_classes = 1;
        assert!(make_dataset(dir.path(), &p).is_err());
        let mut p = params();
        p.sat_height = 0.0;
        assert!(make_dataset(dir.path(), &p).is_err());
    }
}
