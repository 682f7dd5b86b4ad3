//! Classifier modules and the desk-scale trainer.
//!
//! Each partition contributes three streams (global, salient, background),
//! and every (part, stream) pair owns an independent head: a fully connected
//! layer, batch normalization, dropout and a classification layer. Training
//! minimizes the summed cross-entropy over all heads with SGD; gradients are
//! hand-derived for this fixed architecture (see [`train`]). At test time the
//! post-BN descriptors of all heads concatenate into the image representation.
//!
//! Everything here runs in f64: the gradient checks compare analytic
//! gradients against central finite differences at 1e-4 relative tolerance,
//! which f32 arithmetic cannot support.

pub mod checkpoint;
pub mod train;

pub use train::{batch_loss, HeadGradients, TrainSample, Trainer};

use crate::refinement::SgrsOutput;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Batch-normalization epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update momentum.
pub const BN_MOMENTUM: f64 = 0.1;

/// Errors raised by the model layer.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    DimensionMismatch { expected: usize, actual: usize },
    /// Labels are 1-based class indices in `[1, n_classes]`.
    InvalidLabel { label: usize, n_classes: usize },
    EmptyBatch,
    /// The bank expects one `SgrsOutput` per part.
    PartCountMismatch { expected: usize, actual: usize },
    InvalidDropout { rate: f64 },
}

impl std::fmt::Display for ModelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelError::DimensionMismatch { expected, actual } => {
                write!(f, "input dimension mismatch: expected {expected}, got {actual}")
            }
            ModelError::InvalidLabel { label, n_classes } => {
                write!(f, "label {label} outside [1, {n_classes}]")
            }
            ModelError::EmptyBatch => write!(f, "batch must be non-empty"),
            ModelError::PartCountMismatch { expected, actual } => {
                write!(f, "expected outputs for {expected} parts, got {actual}")
            }
            ModelError::InvalidDropout { rate } => write!(f, "dropout rate {rate} outside [0, 1)"),
        }
    }
}

impl std::error::Error for ModelError {}

/// The three descriptor streams produced per partition, in head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stream {
    Global,
    Salient,
    Background,
}

/// All streams in bank order.
pub const STREAMS: [Stream; 3] = [Stream::Global, Stream::Salient, Stream::Background];

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Global => "global",
            Stream::Salient => "salient",
            Stream::Background => "background",
        }
    }

    /// Pull this stream's vector out of a refinement output, widened to f64.
    pub fn vector(self, out: &SgrsOutput) -> Vec<f64> {
        let v = match self {
            Stream::Global => &out.global_vec,
            Stream::Salient => &out.salient_vec,
            Stream::Background => &out.background_vec,
        };
        v.iter().map(|&x| x as f64).collect()
    }
}

/// One classifier module: FC -> BN -> Dropout -> Cls.
///
/// `fc_w` is `d_in x d_mid` row-major, `cls_w` is `d_mid x n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub d_in: usize,
    pub d_mid: usize,
    pub n_classes: usize,
    pub fc_w: Vec<f64>,
    pub fc_b: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
    pub bn_running_mean: Vec<f64>,
    pub bn_running_var: Vec<f64>,
    pub cls_w: Vec<f64>,
    pub cls_b: Vec<f64>,
    pub dropout_rate: f64,
}

impl ClassifierHead {
    /// Randomly initialized head; weights uniform in the usual
    /// `sqrt(6 / (fan_in + fan_out))` range, biases zero, BN at identity.
    pub fn init(d_in: usize, d_mid: usize, n_classes: usize, dropout_rate: f64, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(ModelError::InvalidDropout { rate: dropout_rate });
        }
        let fc_a = (6.0 / (d_in + d_mid) as f64).sqrt();
        let cls_a = (6.0 / (d_mid + n_classes) as f64).sqrt();
        Ok(Self {
            d_in,
            d_mid,
            n_classes,
            fc_w: (0..d_in * d_mid).map(|_| rng.gen_range(-fc_a..fc_a)).collect(),
            fc_b: vec![0.0; d_mid],
            bn_gamma: vec![1.0; d_mid],
            bn_beta: vec![0.0; d_mid],
            bn_running_mean: vec![0.0; d_mid],
            bn_running_var: vec![1.0; d_mid],
            cls_w: (0..d_mid * n_classes).map(|_| rng.gen_range(-cls_a..cls_a)).collect(),
            cls_b: vec![0.0; n_classes],
            dropout_rate,
        })
    }

    pub(crate) fn fc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.fc_b.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.fc_w[i * self.d_mid..(i + 1) * self.d_mid];
            for (yj, &w) in y.iter_mut().zip(row) {
                *yj += xi * w;
            }
        }
        y
    }

    pub(crate) fn cls(&self, d: &[f64]) -> Vec<f64> {
        let mut logits = self.cls_b.clone();
        for (j, &dj) in d.iter().enumerate() {
            let row = &self.cls_w[j * self.n_classes..(j + 1) * self.n_classes];
            for (lk, &w) in logits.iter_mut().zip(row) {
                *lk += dj * w;
            }
        }
        logits
    }

    /// Inference forward: BN uses running statistics, dropout is identity.
    /// Returns the post-BN descriptor and the logits.
    pub fn forward_infer(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        if x.len() != self.d_in {
            return Err(ModelError::DimensionMismatch { expected: self.d_in, actual: x.len() });
        }
        let y = self.fc(x);
        let descriptor: Vec<f64> = (0..self.d_mid)
            .map(|j| {
                let norm = (y[j] - self.bn_running_mean[j]) / (self.bn_running_var[j] + BN_EPS).sqrt();
                self.bn_gamma[j] * norm + self.bn_beta[j]
            })
            .collect();
        let logits = self.cls(&descriptor);
        Ok((descriptor, logits))
    }
}

/// Forward pass of one head on a single input.
///
/// With `training = false` this is the deterministic inference path. With
/// `training = true` batch normalization uses the statistics of the
/// (single-sample) batch, which zeroes the normalized activation; seeded
/// dropout masks are owned by the training step, so this path leaves dropout
/// out.
pub fn head_forward(head: &ClassifierHead, x: &[f64], training: bool) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    if !training {
        return head.forward_infer(x);
    }
    if x.len() != head.d_in {
        return Err(ModelError::DimensionMismatch { expected: head.d_in, actual: x.len() });
    }
    let y = head.fc(x);
    let descriptor: Vec<f64> = (0..head.d_mid)
        .map(|j| {
            // Batch of one: mean = y, variance = 0.
            let norm = (y[j] - y[j]) / BN_EPS.sqrt();
            head.bn_gamma[j] * norm + head.bn_beta[j]
        })
        .collect();
    let logits = head.cls(&descriptor);
    Ok((descriptor, logits))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// The bank of `3 * n_parts` independent heads, indexed by (part, stream).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadBank {
    pub n_parts: usize,
    pub heads: Vec<ClassifierHead>,
}

impl HeadBank {
    pub fn init(
        n_parts: usize,
        d_in: usize,
        d_mid: usize,
        n_classes: usize,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = (0..3 * n_parts)
            .map(|_| ClassifierHead::init(d_in, d_mid, n_classes, dropout_rate, &mut rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { n_parts, heads })
    }

    pub fn head(&self, part: usize, stream: Stream) -> &ClassifierHead {
        &self.heads[Self::index(part, stream)]
    }

    pub fn index(part: usize, stream: Stream) -> usize {
        part * 3
            + match stream {
                Stream::Global => 0,
                Stream::Salient => 1,
                Stream::Background => 2,
            }
    }

    pub fn d_in(&self) -> usize {
        self.heads[0].d_in
    }

    pub fn d_mid(&self) -> usize {
        self.heads[0].d_mid
    }

    pub fn n_classes(&self) -> usize {
        self.heads[0].n_classes
    }

    fn check_parts(&self, parts: &[SgrsOutput]) -> Result<(), ModelError> {
        if parts.len() != self.n_parts {
            return Err(ModelError::PartCountMismatch { expected: self.n_parts, actual: parts.len() });
        }
        Ok(())
    }

    /// Summed cross-entropy of all heads on one sample at inference, with the
    /// per-head breakdown in bank order. `label` is 1-based.
    pub fn total_ce_loss(&self, parts: &[SgrsOutput], label: usize) -> Result<LossBreakdown, ModelError> {
        self.check_parts(parts)?;
        if label < 1 || label > self.n_classes() {
            return Err(ModelError::InvalidLabel { label, n_classes: self.n_classes() });
        }
        let mut per_head = Vec::with_capacity(self.heads.len());
        let mut total = 0.0;
        for (part, out) in parts.iter().enumerate() {
            for stream in STREAMS {
                let head = self.head(part, stream);
                let (_, logits) = head.forward_infer(&stream.vector(out))?;
                let probs = softmax(&logits);
                let loss = -(probs[label - 1].max(f64::MIN_POSITIVE)).ln();
                per_head.push(loss);
                total += loss;
            }
        }
        Ok(LossBreakdown { total, per_head })
    }

    /// Class prediction from the sum of all head logits; returns a 1-based
    /// label.
    pub fn predict(&self, parts: &[SgrsOutput]) -> Result<usize, ModelError> {
        self.check_parts(parts)?;
        let mut summed = vec![0.0f64; self.n_classes()];
        for (part, out) in parts.iter().enumerate() {
            for stream in STREAMS {
                let head = self.head(part, stream);
                let (_, logits) = head.forward_infer(&stream.vector(out))?;
                for (s, l) in summed.iter_mut().zip(&logits) {
                    *s += l;
                }
            }
        }
        let best = summed
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i + 1)
            .expect("n_classes >= 1");
        Ok(best)
    }

    /// Test-time image representation: the post-BN descriptors of all heads
    /// concatenated in (part, stream) order, `3 * n_parts * d_mid` long.
    /// No normalization is applied; distances are taken downstream.
    pub fn assemble_descriptor(&self, parts: &[SgrsOutput]) -> Result<Vec<f64>, ModelError> {
        self.check_parts(parts)?;
        let mut descriptor = Vec::with_capacity(3 * self.n_parts * self.d_mid());
        for (part, out) in parts.iter().enumerate() {
            for stream in STREAMS {
                let head = self.head(part, stream);
                let (desc, _) = head.forward_infer(&stream.vector(out))?;
                descriptor.extend(desc);
            }
        }
        Ok(descriptor)
    }
}

/// Total loss plus the per-head breakdown in bank order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_head: Vec<f64>,
}

/// Optimizer and schedule settings; defaults follow the published recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate reserved for a trainable feature extractor; the
    /// handcrafted extractor has no parameters but the knob stays for
    /// pluggable backbones.
    pub lr_backbone: f64,
    pub lr_heads: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch after which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub horizontal_flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_backbone: 1e-4,
            lr_heads: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 4,
            epochs: 120,
            lr_decay_epoch: 80,
            lr_decay_factor: 0.1,
            horizontal_flip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.lr_heads <= 0.0 || self.lr_backbone <= 0.0 {
            return Err("learning rates must be positive".into());
        }
        if self.batch_size == 0 {
            return Err("batch size must be positive".into());
        }
        if self.epochs > 0 && self.lr_decay_epoch >= self.epochs {
            return Err(format!(
                "lr decay epoch {} must precede total epochs {}",
                self.lr_decay_epoch, self.epochs
            ));
        }
        Ok(())
    }
}
