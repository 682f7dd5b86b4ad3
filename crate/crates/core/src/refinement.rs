//! Saliency-guided refinement: a center-peaked coordinate prior, activation
//! heatmaps, threshold masks, and the global/salient/background split of each
//! partition.
//!
//! The refinement is training-free. Each partition's channel-mean activation
//! is min-max normalized, averaged with the coordinate prior, thresholded
//! into a binary mask, and the mask splits the partition into a salient and a
//! background descriptor next to the plain global average.

use crate::tensor::Tensor3;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Distance metric used to build the coordinate prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmMetric {
    Chebyshev,
    Euclidean,
    Manhattan,
}

impl CmMetric {
    fn distance(self, du: f64, dv: f64) -> f64 {
        match self {
            CmMetric::Chebyshev => du.abs().max(dv.abs()),
            CmMetric::Euclidean => (du * du + dv * dv).sqrt(),
            CmMetric::Manhattan => du.abs() + dv.abs(),
        }
    }
}

impl std::str::FromStr for CmMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "chebyshev" => Ok(CmMetric::Chebyshev),
            "euclidean" => Ok(CmMetric::Euclidean),
            "manhattan" => Ok(CmMetric::Manhattan),
            other => Err(format!("unknown coordinate-map metric '{other}'")),
        }
    }
}

impl std::fmt::Display for CmMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            CmMetric::Chebyshev => "chebyshev",
            CmMetric::Euclidean => "euclidean",
            CmMetric::Manhattan => "manhattan",
        };
        f.write_str(name)
    }
}

/// Errors raised by refinement operations.
#[derive(Debug, Clone, PartialEq)]
pub enum RefinementError {
    ShapeMismatch { expected: (usize, usize), actual: (usize, usize) },
    /// Threshold must lie in `[0, 1]`.
    InvalidDelta { delta: f32 },
    /// Mask buffers must contain only 0 and 1.
    NonBinaryValue { value: u8 },
    LengthMismatch { expected: usize, actual: usize },
    EmptyDimension,
}

impl std::fmt::Display for RefinementError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RefinementError::ShapeMismatch { expected, actual } => write!(
                f,
                "spatial shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, actual.0, actual.1
            ),
            RefinementError::InvalidDelta { delta } => {
                write!(f, "threshold delta {delta} outside [0, 1]")
            }
            RefinementError::NonBinaryValue { value } => {
                write!(f, "mask value {value} is not binary")
            }
            RefinementError::LengthMismatch { expected, actual } => {
                write!(f, "buffer length {actual} does not match shape ({expected} expected)")
            }
            RefinementError::EmptyDimension => write!(f, "dimensions must be positive"),
        }
    }
}

impl std::error::Error for RefinementError {}

/// Center-peaked prior in `[0, 1]`: 1 at the map center, 0 at the farthest
/// border pixel, non-increasing along every ray from the center.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    metric: CmMetric,
}

impl CoordinateMap {
    /// Build the prior for an `h x w` map under the chosen metric.
    ///
    /// The center sits at pixel coordinates `((h-1)/2, (w-1)/2)` so the peak
    /// lands on an actual pixel for odd sizes and the map stays symmetric
    /// under horizontal and vertical flips.
    pub fn new(h: usize, w: usize, metric: CmMetric) -> Result<Self, RefinementError> {
        if h == 0 || w == 0 {
            return Err(RefinementError::EmptyDimension);
        }
        let cu = (h as f64 - 1.0) / 2.0;
        let cv = (w as f64 - 1.0) / 2.0;
        // The distance maximum over the grid is attained at a corner.
        let d_max = [(0.0, 0.0), (0.0, w as f64 - 1.0), (h as f64 - 1.0, 0.0), (h as f64 - 1.0, w as f64 - 1.0)]
            .into_iter()
            .map(|(u, v)| metric.distance(u - cu, v - cv))
            .fold(0.0f64, f64::max);
        let values = if d_max == 0.0 {
            vec![1.0]
        } else {
            let mut vals = Vec::with_capacity(h * w);
            for u in 0..h {
                for v in 0..w {
                    let d = metric.distance(u as f64 - cu, v as f64 - cv);
                    vals.push(((d_max - d) / d_max) as f32);
                }
            }
            vals
        };
        Ok(Self { height: h, width: w, values, metric })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn metric(&self) -> CmMetric {
        self.metric
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.values[u * self.width + v]
    }
}

/// Saliency heatmap with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Heatmap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f32 {
        self.values[u * self.width + v]
    }

    /// Export as an 8-bit grayscale PNG for inspection.
    pub fn save_png(&self, path: &Path) -> Result<(), crate::tensor::ImageIoError> {
        save_gray_png(self.width, self.height, &self.values, path)
    }
}

/// Binary mask over a spatial extent; values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self, RefinementError> {
        if height == 0 || width == 0 {
            return Err(RefinementError::EmptyDimension);
        }
        if values.len() != height * width {
            return Err(RefinementError::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some(&bad) = values.iter().find(|&&v| v > 1) {
            return Err(RefinementError::NonBinaryValue { value: bad });
        }
        Ok(Self { height, width, values })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![1; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Pointwise complement; partitions the extent together with `self`.
    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Export as an 8-bit grayscale PNG (1 maps to 255).
    pub fn save_png(&self, path: &Path) -> Result<(), crate::tensor::ImageIoError> {
        let floats: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        save_gray_png(self.width, self.height, &floats, path)
    }
}

fn save_gray_png(
    width: usize,
    height: usize,
    values: &[f32],
    path: &Path,
) -> Result<(), crate::tensor::ImageIoError> {
    let bytes: Vec<u8> = values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| crate::tensor::ImageIoError::Codec(e.to_string()))
}

/// The three per-partition descriptors plus the empty-region fallback flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SgrsOutput {
    pub global_vec: Vec<f32>,
    pub salient_vec: Vec<f32>,
    pub background_vec: Vec<f32>,
    pub empty_salient: bool,
    pub empty_background: bool,
}

/// Channel-mean activation, min-max normalized, averaged with the coordinate
/// prior when one is supplied. A constant activation map normalizes to a
/// neutral 0.5. Passing `None` for the prior is the coordinate-map-free
/// variant (heat equals the normalized activation alone).
pub fn heatmap(part: &Tensor3, cm: Option<&CoordinateMap>) -> Result<Heatmap, RefinementError> {
    let (h, w) = (part.height(), part.width());
    if let Some(cm) = cm {
        if cm.height() != h || cm.width() != w {
            return Err(RefinementError::ShapeMismatch {
                expected: (h, w),
                actual: (cm.height(), cm.width()),
            });
        }
    }
    // Channel mean per pixel, accumulated in f64 for wide channel counts.
    let area = h * w;
    let mut activation = vec![0.0f64; area];
    for c in 0..part.channels() {
        for (acc, &v) in activation.iter_mut().zip(part.plane(c)) {
            *acc += v as f64;
        }
    }
    let channels = part.channels() as f64;
    for acc in &mut activation {
        *acc /= channels;
    }
    let lo = activation.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = activation.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let normalized: Vec<f32> = if hi > lo {
        activation.iter().map(|&a| ((a - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![0.5; area]
    };
    let values = match cm {
        Some(cm) => normalized
            .iter()
            .zip(cm.values())
            .map(|(&n, &c)| ((n + c) / 2.0).clamp(0.0, 1.0))
            .collect(),
        None => normalized,
    };
    Ok(Heatmap { height: h, width: w, values })
}

/// Threshold a heatmap into a binary mask: 1 where `heat >= delta`.
pub fn binarize(heat: &Heatmap, delta: f32) -> Result<BinaryMask, RefinementError> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(RefinementError::InvalidDelta { delta });
    }
    let values = heat.values().iter().map(|&v| u8::from(v >= delta)).collect();
    Ok(BinaryMask { height: heat.height(), width: heat.width(), values })
}

/// Split a partition into global, salient and background descriptors.
///
/// Salient averages the masked pixels, background the complement, global the
/// whole extent. An empty region falls back to the global vector and sets
/// the matching flag so callers can detect the event.
pub fn sgrs_split(part: &Tensor3, mask: &BinaryMask) -> Result<SgrsOutput, RefinementError> {
    if mask.height() != part.height() || mask.width() != part.width() {
        return Err(RefinementError::ShapeMismatch {
            expected: (part.height(), part.width()),
            actual: (mask.height(), mask.width()),
        });
    }
    let salient = part.masked_average(mask).expect("shape checked");
    let background = part.masked_average(&mask.complement()).expect("shape checked");
    let global_vec = part.mean_per_channel();
    Ok(SgrsOutput {
        salient_vec: if salient.empty_mask { global_vec.clone() } else { salient.values },
        background_vec: if background.empty_mask { global_vec.clone() } else { background.values },
        global_vec,
        empty_salient: salient.empty_mask,
        empty_background: background.empty_mask,
    })
}

/// Full refinement of one partition: prior, heatmap, threshold mask, split.
pub fn refine_partition(
    part: &Tensor3,
    metric: CmMetric,
    delta: f32,
    use_cm: bool,
) -> Result<SgrsOutput, RefinementError> {
    let cm = if use_cm {
        Some(CoordinateMap::new(part.height(), part.width(), metric)?)
    } else {
        None
    };
    let heat = heatmap(part, cm.as_ref())?;
    let mask = binarize(&heat, delta)?;
    sgrs_split(part, &mask)
}
