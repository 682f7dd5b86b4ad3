//! Dense numeric substrate: images, feature maps, pooling and interpolation.
//!
//! [`Tensor3`] is a channel-major, row-major `f32` volume used for every
//! feature map in the pipeline; [`Image`] is an RGB raster with channels in
//! `[0, 1]`. Both are immutable after construction, so values can be shared
//! freely across threads.

use crate::refinement::BinaryMask;

/// Errors raised by tensor and image operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Constructor received a buffer whose length does not match the shape.
    LengthMismatch { expected: usize, actual: usize },
    /// A NaN or infinite value was found where finite data is required.
    NonFinite,
    /// An image channel value fell outside `[0, 1]`.
    OutOfRange { value: f32 },
    /// Spatial shapes of two operands disagree.
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    /// A dimension that must be positive was zero.
    EmptyDimension,
}

impl std::fmt::Display for TensorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TensorError::LengthMismatch { expected, actual } => {
                write!(f, "data length {actual} does not match shape ({expected} expected)")
            }
            TensorError::NonFinite => write!(f, "non-finite value in tensor data"),
            TensorError::OutOfRange { value } => {
                write!(f, "image channel value {value} outside [0, 1]")
            }
            TensorError::ShapeMismatch { expected, actual } => write!(
                f,
                "spatial shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, actual.0, actual.1
            ),
            TensorError::EmptyDimension => write!(f, "dimensions must be positive"),
        }
    }
}

impl std::error::Error for TensorError {}

/// Channel×height×width feature map, row-major within each channel plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    /// Build a tensor from a flat channel-major, row-major buffer.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(TensorError::EmptyDimension);
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch { expected, actual: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self { channels, height, width, data })
    }

    /// Tensor filled with a single value.
    pub fn constant(channels: usize, height: usize, width: usize, value: f32) -> Result<Self, TensorError> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Value at (channel, row, col).
    #[inline]
    pub fn at(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[(c * self.height + r) * self.width + col]
    }

    /// One channel plane as a row-major slice.
    pub fn plane(&self, c: usize) -> &[f32] {
        let start = c * self.height * self.width;
        &self.data[start..start + self.height * self.width]
    }

    /// Bilinear ×4 spatial upsampling with the pixel-center convention
    /// (corner-aligned sampling disabled).
    pub fn upsample4(&self) -> Tensor3 {
        let out_h = self.height * 4;
        let out_w = self.width * 4;
        let rows = axis_taps(self.height, out_h);
        let cols = axis_taps(self.width, out_w);
        let mut data = vec![0.0f32; self.channels * out_h * out_w];
        for c in 0..self.channels {
            let plane = self.plane(c);
            let base = c * out_h * out_w;
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                let r0 = y0 * self.width;
                let r1 = y1 * self.width;
                let out_row = base + oy * out_w;
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let top = plane[r0 + x0] * (1.0 - fx) + plane[r0 + x1] * fx;
                    let bot = plane[r1 + x0] * (1.0 - fx) + plane[r1 + x1] * fx;
                    data[out_row + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        Tensor3 { channels: self.channels, height: out_h, width: out_w, data }
    }

    /// Per-channel mean over all pixels. Sums are accumulated in f64 so wide
    /// channel counts stay stable.
    pub fn mean_per_channel(&self) -> Vec<f32> {
        let area = (self.height * self.width) as f64;
        (0..self.channels)
            .map(|c| {
                let sum: f64 = self.plane(c).iter().map(|&v| v as f64).sum();
                (sum / area) as f32
            })
            .collect()
    }

    /// Per-channel mean over pixels where `mask` is 1.
    ///
    /// An all-zero mask falls back to the unmasked per-channel mean; the
    /// `empty_mask` flag tells the caller the fallback fired.
    pub fn masked_average(&self, mask: &BinaryMask) -> Result<MaskedAverage, TensorError> {
        if mask.height() != self.height || mask.width() != self.width {
            return Err(TensorError::ShapeMismatch {
                expected: (self.height, self.width),
                actual: (mask.height(), mask.width()),
            });
        }
        let count = mask.count_ones();
        if count == 0 {
            return Ok(MaskedAverage { values: self.mean_per_channel(), empty_mask: true });
        }
        let values = (0..self.channels)
            .map(|c| {
                let plane = self.plane(c);
                let mut sum = 0.0f64;
                for (idx, &m) in mask.values().iter().enumerate() {
                    if m == 1 {
                        sum += plane[idx] as f64;
                    }
                }
                (sum / count as f64) as f32
            })
            .collect();
        Ok(MaskedAverage { values, empty_mask: false })
    }

    /// Spatial sub-tensor over `rows x cols` starting at (row, col); all
    /// channels preserved.
    pub(crate) fn crop(&self, row: usize, col: usize, rows: usize, cols: usize) -> Tensor3 {
        debug_assert!(row + rows <= self.height && col + cols <= self.width);
        let mut data = Vec::with_capacity(self.channels * rows * cols);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for r in 0..rows {
                let start = (row + r) * self.width + col;
                data.extend_from_slice(&plane[start..start + cols]);
            }
        }
        Tensor3 { channels: self.channels, height: rows, width: cols, data }
    }

    /// Mirror the tensor along the width axis.
    pub fn flip_horizontal(&self) -> Tensor3 {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            let plane = self.plane(c);
            for r in 0..self.height {
                let row = &plane[r * self.width..(r + 1) * self.width];
                data.extend(row.iter().rev().copied());
            }
        }
        Tensor3 { channels: self.channels, height: self.height, width: self.width, data }
    }
}

/// Result of [`Tensor3::masked_average`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedAverage {
    pub values: Vec<f32>,
    /// True when the mask selected zero pixels and the unmasked mean was
    /// returned instead.
    pub empty_mask: bool,
}

/// Precompute bilinear taps for one axis: (lo index, hi index, hi weight) per
/// output position, half-pixel centers, clamped at the borders.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    let scale = n_in as f32 / n_out as f32;
    (0..n_out)
        .map(|o| {
            let src = (o as f32 + 0.5) * scale - 0.5;
            let clamped = src.clamp(0.0, (n_in - 1) as f32);
            let lo = clamped.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, clamped - lo as f32)
        })
        .collect()
}

/// RGB image with row-major pixels and channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    /// Build from a flat RGBRGB... buffer of length `height * width * 3`.
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, TensorError> {
        if height == 0 || width == 0 {
            return Err(TensorError::EmptyDimension);
        }
        let expected = height * width * 3;
        if pixels.len() != expected {
            return Err(TensorError::LengthMismatch { expected, actual: pixels.len() });
        }
        for &v in &pixels {
            if !v.is_finite() {
                return Err(TensorError::NonFinite);
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(TensorError::OutOfRange { value: v });
            }
        }
        Ok(Self { height, width, pixels })
    }

    pub fn constant(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self, TensorError> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// RGB triple at (row, col).
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> [f32; 3] {
        let i = (r * self.width + c) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Bilinear resample to `out_h x out_w`; outputs stay inside `[0, 1]`.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Image, TensorError> {
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::EmptyDimension);
        }
        let rows = axis_taps(self.height, out_h);
        let cols = axis_taps(self.width, out_w);
        let mut pixels = vec![0.0f32; out_h * out_w * 3];
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let out = (oy * out_w + ox) * 3;
                for ch in 0..3 {
                    let p00 = self.pixels[(y0 * self.width + x0) * 3 + ch];
                    let p01 = self.pixels[(y0 * self.width + x1) * 3 + ch];
                    let p10 = self.pixels[(y1 * self.width + x0) * 3 + ch];
                    let p11 = self.pixels[(y1 * self.width + x1) * 3 + ch];
                    let top = p00 * (1.0 - fx) + p01 * fx;
                    let bot = p10 * (1.0 - fx) + p11 * fx;
                    pixels[out + ch] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
                }
            }
        }
        Ok(Image { height: out_h, width: out_w, pixels })
    }

    /// Mirror the image left-right.
    pub fn flip_horizontal(&self) -> Image {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for r in 0..self.height {
            for c in (0..self.width).rev() {
                let i = (r * self.width + c) * 3;
                pixels.extend_from_slice(&self.pixels[i..i + 3]);
            }
        }
        Image { height: self.height, width: self.width, pixels }
    }

    /// Encode as 8-bit RGB PNG.
    pub fn save_png(&self, path: &std::path::Path) -> Result<(), ImageIoError> {
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| (v * 255.0).round() as u8).collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| ImageIoError::Codec(e.to_string()))
    }

    /// Decode an 8-bit RGB PNG (other formats are converted to RGB8).
    pub fn load_png(path: &std::path::Path) -> Result<Image, ImageIoError> {
        let img = image::open(path).map_err(|e| ImageIoError::Codec(e.to_string()))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Image::new(h as usize, w as usize, pixels).map_err(ImageIoError::Invalid)
    }
}

/// Errors from PNG encode/decode.
#[derive(Debug)]
pub enum ImageIoError {
    Codec(String),
    Invalid(TensorError),
}

impl std::fmt::Display for ImageIoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ImageIoError::Codec(msg) => write!(f, "image codec error: {msg}"),
            ImageIoError::Invalid(e) => write!(f, "decoded image invalid: {e}"),
        }
    }
}

impl std::error::Error for ImageIoError {}
