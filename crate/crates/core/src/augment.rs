//! Height-simulation augmentation: mirror-pad a strip to make the shooting
//! height seem higher, or crop a ring to make it seem lower, then resize back
//! to the input resolution. The matching height relabel is
//! `h' = h + lambda_aug * delta_p`.

use crate::tensor::{Image, TensorError};

/// Meters of simulated height per padded/cropped pixel; empirical constant
/// calibrated against 512x512 inputs at the reference satellite height.
pub const DEFAULT_LAMBDA_AUG: f64 = 0.7;

/// Errors raised by the augmentation operations.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentError {
    /// A ring crop must leave a positive interior: `|delta_p| < side / 2`.
    CropTooWide { delta_p: i32, height: usize, width: usize },
    /// Reflection padding without edge repetition needs `delta_p <= side - 1`.
    PadTooWide { delta_p: i32, height: usize, width: usize },
    /// The relabeled height would be non-positive.
    NonPositiveHeight { h_drone: f64, delta_p: i32, lambda_aug: f64 },
    Tensor(TensorError),
}

impl std::fmt::Display for AugmentError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AugmentError::CropTooWide { delta_p, height, width } => write!(
                f,
                "crop width {} must be smaller than half the image side ({height}x{width})",
                delta_p.unsigned_abs()
            ),
            AugmentError::PadTooWide { delta_p, height, width } => write!(
                f,
                "pad width {delta_p} exceeds the reflectable extent of a {height}x{width} image"
            ),
            AugmentError::NonPositiveHeight { h_drone, delta_p, lambda_aug } => write!(
                f,
                "adjusted height {h_drone} + {lambda_aug} * {delta_p} is not positive"
            ),
            AugmentError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AugmentError {}

impl From<TensorError> for AugmentError {
    fn from(e: TensorError) -> Self {
        AugmentError::Tensor(e)
    }
}

/// Parameters of one height augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightAugmentation {
    pub delta_p: i32,
    pub lambda_aug: f64,
}

impl HeightAugmentation {
    pub fn new(delta_p: i32) -> Self {
        Self { delta_p, lambda_aug: DEFAULT_LAMBDA_AUG }
    }

    pub fn with_lambda(delta_p: i32, lambda_aug: f64) -> Self {
        Self { delta_p, lambda_aug }
    }

    pub fn apply(&self, img: &Image) -> Result<Image, AugmentError> {
        simulate_height(img, self.delta_p)
    }

    pub fn relabel(&self, h_drone: f64) -> Result<f64, AugmentError> {
        adjusted_height(h_drone, self.delta_p, self.lambda_aug)
    }
}

/// Mirror a strip `pad` pixels wide around the image, reflecting without
/// repeating the edge rows. This is the pre-resize canvas of the
/// higher-altitude simulation: the central region of the output equals the
/// input exactly.
pub fn pad_reflect(img: &Image, pad: usize) -> Result<Image, AugmentError> {
    let (h, w) = (img.height(), img.width());
    if pad >= h || pad >= w {
        return Err(AugmentError::PadTooWide { delta_p: pad as i32, height: h, width: w });
    }
    if pad == 0 {
        return Ok(img.clone());
    }
    let reflect = |x: i64, n: usize| -> usize {
        if x < 0 {
            (-x) as usize
        } else if x >= n as i64 {
            2 * (n - 1) - x as usize
        } else {
            x as usize
        }
    };
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut pixels = Vec::with_capacity(oh * ow * 3);
    for r in 0..oh {
        let sr = reflect(r as i64 - pad as i64, h);
        for c in 0..ow {
            let sc = reflect(c as i64 - pad as i64, w);
            pixels.extend_from_slice(&img.at(sr, sc));
        }
    }
    Ok(Image::new(oh, ow, pixels)?)
}

/// Remove a square ring `crop` pixels wide from the border; the pre-resize
/// interior of the lower-altitude simulation.
pub fn crop_ring(img: &Image, crop: usize) -> Result<Image, AugmentError> {
    let (h, w) = (img.height(), img.width());
    if 2 * crop >= h || 2 * crop >= w {
        return Err(AugmentError::CropTooWide { delta_p: -(crop as i32), height: h, width: w });
    }
    if crop == 0 {
        return Ok(img.clone());
    }
    let (oh, ow) = (h - 2 * crop, w - 2 * crop);
    let mut pixels = Vec::with_capacity(oh * ow * 3);
    for r in 0..oh {
        for c in 0..ow {
            pixels.extend_from_slice(&img.at(r + crop, c + crop));
        }
    }
    Ok(Image::new(oh, ow, pixels)?)
}

/// Simulate a different shooting height: positive `delta_p` mirror-pads and
/// resizes back (seems higher), negative crops a ring and resizes back
/// (seems lower), zero is the identity. Output resolution always equals the
/// input resolution.
pub fn simulate_height(img: &Image, delta_p: i32) -> Result<Image, AugmentError> {
    match delta_p.cmp(&0) {
        std::cmp::Ordering::Equal => Ok(img.clone()),
        std::cmp::Ordering::Greater => {
            let canvas = pad_reflect(img, delta_p as usize)?;
            Ok(canvas.resize(img.height(), img.width())?)
        }
        std::cmp::Ordering::Less => {
            let interior = crop_ring(img, delta_p.unsigned_abs() as usize)?;
            Ok(interior.resize(img.height(), img.width())?)
        }
    }
}

/// Relabeled height of a simulated image: `h_drone + lambda_aug * delta_p`.
pub fn adjusted_height(h_drone: f64, delta_p: i32, lambda_aug: f64) -> Result<f64, AugmentError> {
    let adjusted = h_drone + lambda_aug * delta_p as f64;
    if adjusted <= 0.0 {
        return Err(AugmentError::NonPositiveHeight { h_drone, delta_p, lambda_aug });
    }
    Ok(adjusted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pixels: Vec<f32> = (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        Image::new(h, w, pixels).unwrap()
    }

    /// Smooth low-frequency image for round-trip content checks.
    fn smooth_image(side: usize) -> Image {
        let mut pixels = Vec::with_capacity(side * side * 3);
        for r in 0..side {
            for c in 0..side {
                let x = c as f32 / side as f32;
                let y = r as f32 / side as f32;
                pixels.push(0.5 + 0.4 * (2.0 * std::f32::consts::PI * x).sin() * 0.5);
                pixels.push(0.5 + 0.4 * (2.0 * std::f32::consts::PI * y).cos() * 0.5);
                pixels.push(0.25 + 0.5 * x * y);
            }
        }
        Image::new(side, side, pixels).unwrap()
    }

    #[test]
    fn zero_delta_is_identity() {
        let img = noise_image(16, 16, 1);
        assert_eq!(simulate_height(&img, 0).unwrap(), img);
    }

    #[test]
    fn positive_delta_builds_reflected_canvas() {
        let img = noise_image(512, 512, 2);
        let canvas = pad_reflect(&img, 100).unwrap();
        assert_eq!((canvas.height(), canvas.width()), (712, 712));
        // Central 512x512 of the canvas is the original, pixel for pixel.
        for r in 0..512 {
            for c in 0..512 {
                assert_eq!(canvas.at(r + 100, c + 100), img.at(r, c));
            }
        }
        let out = simulate_height(&img, 100).unwrap();
        assert_eq!((out.height(), out.width()), (512, 512));
    }

    #[test]
    fn reflection_does_not_repeat_edge_rows() {
        // 4x4 rows labeled by value; pad 2 must mirror as [2,1,0,1,2,3,2,1].
        let mut pixels = Vec::new();
        for r in 0..4 {
            for _ in 0..4 {
                let v = r as f32 / 10.0;
                pixels.extend_from_slice(&[v, v, v]);
            }
        }
        let img = Image::new(4, 4, pixels).unwrap();
        let canvas = pad_reflect(&img, 2).unwrap();
        let got: Vec<f32> = (0..8).map(|r| canvas.at(r, 4)[0]).collect();
        let want: Vec<f32> = [2, 1, 0, 1, 2, 3, 2, 1].iter().map(|&r| r as f32 / 10.0).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn negative_delta_crops_the_ring() {
        let img = noise_image(512, 512, 3);
        let interior = crop_ring(&img, 100).unwrap();
        assert_eq!((interior.height(), interior.width()), (312, 312));
        for r in 0..312 {
            for c in 0..312 {
                assert_eq!(interior.at(r, c), img.at(r + 100, c + 100));
            }
        }
        let out = simulate_height(&img, -100).unwrap();
        assert_eq!((out.height(), out.width()), (512, 512));
    }

    #[test]
    fn crop_wider_than_half_side_is_rejected() {
        let img = noise_image(64, 64, 4);
        assert!(matches!(simulate_height(&img, -32), Err(AugmentError::CropTooWide { .. })));
        assert!(simulate_height(&img, -31).is_ok());
        assert!(matches!(simulate_height(&img, 64), Err(AugmentError::PadTooWide { .. })));
    }

    #[test]
    fn smooth_round_trip_recovers_original_content() {
        let side = 64;
        let pad = 16;
        let img = smooth_image(side);
        let padded = simulate_height(&img, pad as i32).unwrap();
        // The original occupies the central side/(side+2p) fraction of the
        // padded output; reading it back and rescaling should reproduce the
        // input for low-frequency content.
        let inner = (side * side) / (side + 2 * pad);
        let offset = (side - inner) / 2;
        let mut pixels = Vec::new();
        for r in 0..inner {
            for c in 0..inner {
                pixels.extend_from_slice(&padded.at(r + offset, c + offset));
            }
        }
        let crop = Image::new(inner, inner, pixels).unwrap();
        let restored = crop.resize(side, side).unwrap();
        let mae: f32 = restored
            .pixels()
            .iter()
            .zip(img.pixels())
            .map(|(a, b)| (a - b).abs())
            .sum::<f32>()
            / img.pixels().len() as f32;
        assert!(mae <= 2.0 / 255.0, "mean abs error {mae}");
    }

    #[test]
    fn adjusted_height_reference_values() {
        assert_eq!(adjusted_height(256.0, 150, 0.7).unwrap(), 361.0);
        assert_eq!(adjusted_height(123.5, -150, 0.7).unwrap(), 18.5);
        assert_eq!(adjusted_height(200.0, 0, 0.7).unwrap(), 200.0);
    }

    #[test]
    fn adjusted_height_is_affine_and_guards_positivity() {
        for dp in [-50, -10, 0, 10, 50] {
            assert_eq!(adjusted_height(100.0, dp, 0.0).unwrap(), 100.0);
            let a = adjusted_height(100.0, dp, 0.5).unwrap();
            assert_eq!(a, 100.0 + 0.5 * dp as f64);
        }
        assert!(matches!(
            adjusted_height(50.0, -100, 0.7),
            Err(AugmentError::NonPositiveHeight { .. })
        ));
    }

    #[test]
    fn output_resolution_always_matches_input() {
        let img = noise_image(40, 40, 9);
        for dp in [-15, -3, 0, 7, 30] {
            let out = simulate_height(&img, dp).unwrap();
            assert_eq!((out.height(), out.width()), (40, 40));
        }
    }
}
