//! Handcrafted feature extractor: the deterministic stand-in for a pretrained
//! backbone. Each grid cell is summarized by fixed statistics, and a fixed
//! seeded random projection lifts the statistics to the requested channel
//! count.

use super::SynthError;
use crate::tensor::{Image, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of base statistics computed per cell.
pub const BASE_STATS: usize = 10;

/// Seed of the fixed random projection; a constant so the extractor is the
/// same function in every process.
const PROJECTION_SEED: u64 = 0x5A1F_F00D;

/// Per-cell statistics over a `grid x grid` layout, projected to `channels`
/// output channels. The first [`BASE_STATS`] channels are the raw statistics
/// (mean RGB, std RGB, mean horizontal/vertical gradient magnitude of the
/// gray image, 2-bin hue histogram); any further channels are fixed random
/// linear combinations of them.
pub fn handcrafted_features(img: &Image, grid: usize, channels: usize) -> Result<Tensor3, SynthError> {
    if grid == 0 || channels == 0 {
        return Err(SynthError::NonPositive { name: "grid/channels", value: 0.0 });
    }
    if img.height() % grid != 0 || img.width() % grid != 0 {
        return Err(SynthError::NonDivisibleGrid { grid, height: img.height(), width: img.width() });
    }
    let cell_h = img.height() / grid;
    let cell_w = img.width() / grid;

    let mut stats = vec![0.0f64; grid * grid * BASE_STATS];
    for gr in 0..grid {
        for gc in 0..grid {
            let cell = cell_stats(img, gr * cell_h, gc * cell_w, cell_h, cell_w);
            let base = (gr * grid + gc) * BASE_STATS;
            stats[base..base + BASE_STATS].copy_from_slice(&cell);
        }
    }

    let projection = projection_weights(channels);
    let mut data = vec![0.0f32; channels * grid * grid];
    for cell in 0..grid * grid {
        let s = &stats[cell * BASE_STATS..(cell + 1) * BASE_STATS];
        for (ch, weights) in projection.iter().enumerate() {
            let v: f64 = match weights {
                Projection::Identity(k) => s[*k],
                Projection::Mix(w) => w.iter().zip(s).map(|(a, b)| a * b).sum(),
            };
            data[ch * grid * grid + cell] = v as f32;
        }
    }
    Ok(Tensor3::new(channels, grid, grid, data).expect("finite statistics"))
}

enum Projection {
    Identity(usize),
    Mix(Vec<f64>),
}

fn projection_weights(channels: usize) -> Vec<Projection> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    (0..channels)
        .map(|ch| {
            if ch < BASE_STATS {
                Projection::Identity(ch)
            } else {
                Projection::Mix((0..BASE_STATS).map(|_| rng.gen_range(-1.0..1.0)).collect())
            }
        })
        .collect()
}

fn cell_stats(img: &Image, r0: usize, c0: usize, rows: usize, cols: usize) -> [f64; BASE_STATS] {
    let area = (rows * cols) as f64;
    let mut sum = [0.0f64; 3];
    let mut sum_sq = [0.0f64; 3];
    let mut hue_bins = [0.0f64; 2];
    for r in r0..r0 + rows {
        for c in c0..c0 + cols {
            let px = img.at(r, c);
            for ch in 0..3 {
                let v = px[ch] as f64;
                sum[ch] += v;
                sum_sq[ch] += v * v;
            }
            hue_bins[if hue(px) < 0.5 { 0 } else { 1 }] += 1.0;
        }
    }
    // Gradient magnitudes of the gray image, forward differences inside the
    // cell only so mirrored cells produce mirrored statistics.
    let gray = |r: usize, c: usize| -> f64 {
        let px = img.at(r, c);
        (px[0] as f64 + px[1] as f64 + px[2] as f64) / 3.0
    };
    let mut dx_sum = 0.0f64;
    let mut dy_sum = 0.0f64;
    for r in r0..r0 + rows {
        for c in c0..c0 + cols - 1 {
            dx_sum += (gray(r, c + 1) - gray(r, c)).abs();
        }
    }
    for r in r0..r0 + rows - 1 {
        for c in c0..c0 + cols {
            dy_sum += (gray(r + 1, c) - gray(r, c)).abs();
        }
    }
    let dx_count = (rows * (cols - 1)).max(1) as f64;
    let dy_count = ((rows - 1) * cols).max(1) as f64;

    let mut out = [0.0f64; BASE_STATS];
    for ch in 0..3 {
        let mean = sum[ch] / area;
        out[ch] = mean;
        out[3 + ch] = (sum_sq[ch] / area - mean * mean).max(0.0).sqrt();
    }
    out[6] = dx_sum / dx_count;
    out[7] = dy_sum / dy_count;
    out[8] = hue_bins[0] / area;
    out[9] = hue_bins[1] / area;
    out
}

/// Hue in `[0, 1)`; gray pixels map to 0.
fn hue(px: [f32; 3]) -> f64 {
    let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= f64::EPSILON {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    h / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gray_image_has_zero_gradient_channels() {
        let img = Image::constant(32, 32, [0.5, 0.5, 0.5]).unwrap();
        let feats = handcrafted_features(&img, 4, 16).unwrap();
        assert_eq!((feats.channels(), feats.height(), feats.width()), (16, 4, 4));
        for cell in feats.plane(6).iter().chain(feats.plane(7)) {
            assert_eq!(*cell, 0.0);
        }
        // Std channels are zero too.
        for ch in 3..6 {
            assert!(feats.plane(ch).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mean_channels_of_flip_are_mirror_images() {
        let scene = super::super::WorldScene::generate(11, 2, 300.0).unwrap();
        let view = super::super::render_view(&scene, 180.0, 64).unwrap();
        let feats = handcrafted_features(&view.image, 8, 12).unwrap();
        let flipped = handcrafted_features(&view.image.flip_horizontal(), 8, 12).unwrap();
        for ch in 0..3 {
            for r in 0..8 {
                for c in 0..8 {
                    let a = feats.at(ch, r, c);
                    let b = flipped.at(ch, r, 7 - c);
                    assert!((a - b).abs() < 1e-6, "ch={ch} ({r},{c}): {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let scene = super::super::WorldScene::generate(5, 9, 300.0).unwrap();
        let view = super::super::render_view(&scene, 150.0, 64).unwrap();
        let a = handcrafted_features(&view.image, 16, 32).unwrap();
        let b = handcrafted_features(&view.image, 16, 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_divisible_grid_is_rejected() {
        let img = Image::constant(30, 30, [0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(
            handcrafted_features(&img, 7, 8),
            Err(SynthError::NonDivisibleGrid { .. })
        ));
    }

    #[test]
    fn projected_channels_are_linear_in_base_stats() {
        // Channel 10 of a constant image: every cell has identical stats, so
        // every projected cell value must be identical as well.
        let img = Image::constant(16, 16, [0.3, 0.6, 0.9]).unwrap();
        let feats = handcrafted_features(&img, 4, 12).unwrap();
        let plane = feats.plane(10);
        for &v in plane {
            assert_eq!(v, plane[0]);
        }
    }
}
