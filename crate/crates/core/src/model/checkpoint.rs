//! Versioned binary checkpoint: JSON metadata followed by named parameter
//! tensors stored as embedded `FMAP1` blocks.
//!
//! Layout: magic `SLPC`, u32 version, u32 metadata length, metadata JSON,
//! u32 tensor count, then per tensor a u16 name length, the name, a u64
//! block length and the `FMAP1` bytes. Parameters are stored as f32, so a
//! save/load round trip preserves values to f32 precision.

use super::{ClassifierHead, HeadBank, TrainConfig};
use crate::fmap;
use crate::tensor::Tensor3;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"SLPC";
const VERSION: u32 = 1;

/// Errors reading or writing checkpoints.
#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    BadMagic([u8; 4]),
    UnsupportedVersion(u32),
    Corrupt(String),
}

impl std::fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint io error: {e}"),
            CheckpointError::BadMagic(m) => write!(f, "bad checkpoint magic {m:?}"),
            CheckpointError::UnsupportedVersion(v) => write!(f, "unsupported checkpoint version {v}"),
            CheckpointError::Corrupt(msg) => write!(f, "corrupt checkpoint: {msg}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

/// Metadata stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub n_parts: usize,
    pub d_in: usize,
    pub d_mid: usize,
    pub n_classes: usize,
    pub dropout_rate: f64,
    /// Original dataset class id for each contiguous training label.
    pub class_ids: Vec<usize>,
    pub train_config: TrainConfig,
}

const BLOCK_NAMES: [&str; 8] = [
    "fc_w",
    "fc_b",
    "bn_gamma",
    "bn_beta",
    "bn_running_mean",
    "bn_running_var",
    "cls_w",
    "cls_b",
];

fn head_blocks(head: &ClassifierHead) -> [(&'static str, Tensor3); 8] {
    let vec_tensor = |v: &[f64]| {
        Tensor3::new(1, 1, v.len(), v.iter().map(|&x| x as f32).collect()).expect("finite params")
    };
    let mat_tensor = |v: &[f64], rows: usize, cols: usize| {
        Tensor3::new(1, rows, cols, v.iter().map(|&x| x as f32).collect()).expect("finite params")
    };
    [
        ("fc_w", mat_tensor(&head.fc_w, head.d_in, head.d_mid)),
        ("fc_b", vec_tensor(&head.fc_b)),
        ("bn_gamma", vec_tensor(&head.bn_gamma)),
        ("bn_beta", vec_tensor(&head.bn_beta)),
        ("bn_running_mean", vec_tensor(&head.bn_running_mean)),
        ("bn_running_var", vec_tensor(&head.bn_running_var)),
        ("cls_w", mat_tensor(&head.cls_w, head.d_mid, head.n_classes)),
        ("cls_b", vec_tensor(&head.cls_b)),
    ]
}

/// Serialize the bank and its metadata.
pub fn save(bank: &HeadBank, meta: &CheckpointMeta, path: &Path) -> Result<(), CheckpointError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let json = serde_json::to_vec(meta).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let n_tensors = bank.heads.len() * BLOCK_NAMES.len();
    out.write_all(&(n_tensors as u32).to_le_bytes())?;
    for (idx, head) in bank.heads.iter().enumerate() {
        for (block, tensor) in head_blocks(head) {
            let name = format!("head{idx}.{block}");
            let mut bytes = Vec::new();
            fmap::write(&tensor, &mut bytes).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            out.write_all(&(name.len() as u16).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(bytes.len() as u64).to_le_bytes())?;
            out.write_all(&bytes)?;
        }
    }
    Ok(())
}

/// Deserialize a bank and its metadata.
pub fn load(path: &Path) -> Result<(HeadBank, CheckpointMeta), CheckpointError> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let json_len = read_u32(&mut input)? as usize;
    let mut json = vec![0u8; json_len];
    input.read_exact(&mut json)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&json).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let n_tensors = read_u32(&mut input)? as usize;
    let expected = 3 * meta.n_parts * BLOCK_NAMES.len();
    if n_tensors != expected {
        return Err(CheckpointError::Corrupt(format!(
            "expected {expected} tensors for {} parts, found {n_tensors}",
            meta.n_parts
        )));
    }

    let mut heads = Vec::with_capacity(3 * meta.n_parts);
    for idx in 0..3 * meta.n_parts {
        let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(BLOCK_NAMES.len());
        for block in BLOCK_NAMES {
            let mut name_len = [0u8; 2];
            input.read_exact(&mut name_len)?;
            let mut name = vec![0u8; u16::from_le_bytes(name_len) as usize];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            let want = format!("head{idx}.{block}");
            if name != want {
                return Err(CheckpointError::Corrupt(format!("expected tensor {want}, found {name}")));
            }
            let mut len = [0u8; 8];
            input.read_exact(&mut len)?;
            let mut bytes = vec![0u8; u64::from_le_bytes(len) as usize];
            input.read_exact(&mut bytes)?;
            let tensor = fmap::read(bytes.as_slice()).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            blocks.push(tensor.data().iter().map(|&v| v as f64).collect());
        }
        let mut it = blocks.into_iter();
        let head = ClassifierHead {
            d_in: meta.d_in,
            d_mid: meta.d_mid,
            n_classes: meta.n_classes,
            fc_w: it.next().unwrap(),
            fc_b: it.next().unwrap(),
            bn_gamma: it.next().unwrap(),
            bn_beta: it.next().unwrap(),
            bn_running_mean: it.next().unwrap(),
            bn_running_var: it.next().unwrap(),
            cls_w: it.next().unwrap(),
            cls_b: it.next().unwrap(),
            dropout_rate: meta.dropout_rate,
        };
        if head.fc_w.len() != meta.d_in * meta.d_mid || head.cls_w.len() != meta.d_mid * meta.n_classes {
            return Err(CheckpointError::Corrupt("tensor shapes disagree with metadata".into()));
        }
        heads.push(head);
    }
    Ok((HeadBank { n_parts: meta.n_parts, heads }, meta))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refinement::SgrsOutput;

    fn meta(bank: &HeadBank) -> CheckpointMeta {
        CheckpointMeta {
            n_parts: bank.n_parts,
            d_in: bank.d_in(),
            d_mid: bank.d_mid(),
            n_classes: bank.n_classes(),
            dropout_rate: 0.0,
            class_ids: (1..=bank.n_classes()).collect(),
            train_config: TrainConfig::default(),
        }
    }

    #[test]
    fn round_trip_preserves_descriptors_to_f32_precision() {
        let bank = HeadBank::init(2, 5, 4, 3, 0.0, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.slpc");
        save(&bank, &meta(&bank), &path).unwrap();
        let (loaded, meta_back) = load(&path).unwrap();
        assert_eq!(meta_back.class_ids, vec![1, 2, 3]);
        let parts: Vec<SgrsOutput> = (0..2)
            .map(|i| SgrsOutput {
                global_vec: vec![0.1 * i as f32, 0.2, -0.3, 0.4, 0.5],
                salient_vec: vec![0.5, 0.1, 0.0, -0.2, 0.3],
                background_vec: vec![-0.1, 0.0, 0.2, 0.6, -0.5],
                empty_salient: false,
                empty_background: false,
            })
            .collect();
        let a = bank.assemble_descriptor(&parts).unwrap();
        let b = loaded.assemble_descriptor(&parts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let bank = HeadBank::init(1, 3, 2, 2, 0.0, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.slpc");
        save(&bank, &meta(&bank), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::BadMagic(_))));

        save(&bank, &meta(&bank), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::UnsupportedVersion(_))));
    }
}
