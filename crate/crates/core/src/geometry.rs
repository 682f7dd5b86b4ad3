//! Partition planning: concentric square partitions, the height-driven scale
//! factor that adapts drone-side partition sizes, admissibility bounds for the
//! adjustment factor, and the square-ring baseline.
//!
//! The central quantity is the scale factor `theta`: a signed pixel offset
//! derived from the relative height of the drone view against the fixed
//! satellite reference height. Positive `theta` shrinks every drone partition
//! by `2*theta` pixels (the drone flew higher, so content appears smaller);
//! negative `theta` expands them. Satellite-side plans always use `theta = 0`.

use crate::refinement::BinaryMask;
use crate::tensor::Tensor3;
use serde::{Deserialize, Serialize};

/// Minimum partition side after clamping a positive-theta overshoot.
/// A 1-pixel partition would make pooling degenerate, so 2 is the floor.
const MIN_SIDE: usize = 2;

/// Errors raised by partition planning.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    /// Satellite height must be strictly positive.
    NonPositiveSatHeight { h_sat: f64 },
    /// Part count must satisfy `1 <= n_parts <= map_size / 2`.
    InvalidPartCount { n_parts: usize, map_size: usize },
    /// The configured drone height range does not bracket the satellite height.
    InvalidHeightRange { h_drone_min: f64, h_sat: f64, h_drone_max: f64 },
    /// The drone height lies outside the configured range.
    HeightOutOfRange { h_drone: f64, h_drone_min: f64, h_drone_max: f64 },
    /// The adjustment factor exceeds the admissible bounds.
    AlphaOutOfBounds { alpha: f64, shrink_bound: f64, expand_bound: f64 },
    /// A tensor's spatial size does not match the plan's map size.
    MapSizeMismatch { map_size: usize, height: usize, width: usize },
    /// A quantity that must be strictly positive was not.
    NonPositive { name: &'static str, value: f64 },
}

impl std::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GeometryError::NonPositiveSatHeight { h_sat } => {
                write!(f, "satellite height must be positive, got {h_sat}")
            }
            GeometryError::InvalidPartCount { n_parts, map_size } => write!(
                f,
                "part count {n_parts} out of range for map size {map_size} (need 1..={})",
                map_size / 2
            ),
            GeometryError::InvalidHeightRange { h_drone_min, h_sat, h_drone_max } => write!(
                f,
                "height range [{h_drone_min}, {h_drone_max}] must bracket the satellite height {h_sat}"
            ),
            GeometryError::HeightOutOfRange { h_drone, h_drone_min, h_drone_max } => write!(
                f,
                "drone height {h_drone} outside configured range [{h_drone_min}, {h_drone_max}]"
            ),
            GeometryError::AlphaOutOfBounds { alpha, shrink_bound, expand_bound } => write!(
                f,
                "alpha {alpha} exceeds admissible bounds (shrink bound {shrink_bound:.2}, expand bound {expand_bound:.2}); alpha must not exceed the smaller of the two"
            ),
            GeometryError::MapSizeMismatch { map_size, height, width } => write!(
                f,
                "tensor spatial size {height}x{width} does not match square plan map size {map_size}"
            ),
            GeometryError::NonPositive { name, value } => {
                write!(f, "{name} must be strictly positive, got {value}")
            }
        }
    }
}

impl std::error::Error for GeometryError {}

/// One concentric square region of a partition plan, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquareRegion {
    pub row: usize,
    pub col: usize,
    pub side: usize,
}

impl SquareRegion {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.side && c >= self.col && c < self.col + self.side
    }

    pub fn area(&self) -> usize {
        self.side * self.side
    }
}

/// Ordered list of concentric square partitions over a square map.
///
/// Serializes to `{map_size, theta, parts: [{row, col, side}...], clamped}`.
/// `clamped` records whether any side was clamped at either boundary; the
/// separate shrink warning (a side would have fallen below the 2-pixel floor)
/// is an in-memory signal for bound checking and is not persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub map_size: usize,
    pub theta: i32,
    pub parts: Vec<SquareRegion>,
    pub clamped: bool,
    #[serde(skip)]
    shrink_warning: bool,
}

impl PartitionPlan {
    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    /// True when a partition side hit the minimum-side floor, meaning the
    /// requested theta violated the shrink bound.
    pub fn shrink_warning(&self) -> bool {
        self.shrink_warning
    }

    /// Sides of all parts, innermost first.
    pub fn sides(&self) -> Vec<usize> {
        self.parts.iter().map(|p| p.side).collect()
    }
}

/// Height configuration for one drone/satellite pairing, validated against
/// the admissibility bounds at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightModel {
    pub h_drone: f64,
    pub h_sat: f64,
    pub alpha: f64,
    pub h_drone_min: f64,
    pub h_drone_max: f64,
}

impl HeightModel {
    /// Validate heights and alpha for a given partition configuration.
    pub fn new(
        h_drone: f64,
        h_sat: f64,
        alpha: f64,
        h_drone_min: f64,
        h_drone_max: f64,
        n_parts: usize,
        map_size: usize,
    ) -> Result<Self, GeometryError> {
        if !(h_drone_min..=h_drone_max).contains(&h_drone) {
            return Err(GeometryError::HeightOutOfRange { h_drone, h_drone_min, h_drone_max });
        }
        if alpha < 0.0 {
            return Err(GeometryError::NonPositive { name: "alpha", value: alpha });
        }
        let bounds = alpha_bounds(h_sat, h_drone_max, h_drone_min, n_parts, map_size)?;
        if !bounds.admits(alpha) {
            return Err(GeometryError::AlphaOutOfBounds {
                alpha,
                shrink_bound: bounds.shrink,
                expand_bound: bounds.expand,
            });
        }
        Ok(Self { h_drone, h_sat, alpha, h_drone_min, h_drone_max })
    }

    /// Scale factor for this model's drone height.
    pub fn theta(&self) -> i32 {
        scale_factor(self.h_drone, self.h_sat, self.alpha).expect("h_sat validated positive")
    }
}

/// Signed partition adjustment in pixels from the relative height ratio:
/// `round(((h_drone - h_sat) / h_sat) * alpha)`, ties away from zero.
pub fn scale_factor(h_drone: f64, h_sat: f64, alpha: f64) -> Result<i32, GeometryError> {
    if h_sat <= 0.0 {
        return Err(GeometryError::NonPositiveSatHeight { h_sat });
    }
    let raw = (h_drone - h_sat) / h_sat * alpha;
    Ok(raw.round() as i32)
}

/// Admissible range of the partition adjustment factor for a height range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaBounds {
    /// Upper bound keeping the smallest shrunk partition positive
    /// (binds when the drone flies above the satellite reference).
    pub shrink: f64,
    /// Upper bound keeping the smallest expanded partition within the map
    /// (binds when the drone flies below the satellite reference).
    pub expand: f64,
}

impl AlphaBounds {
    /// An alpha is admissible iff it does not exceed the smaller bound.
    pub fn admits(&self, alpha: f64) -> bool {
        alpha >= 0.0 && alpha <= self.shrink.min(self.expand)
    }
}

/// Compute both alpha bounds for a map of `map_size` pixels split into
/// `n_parts` parts over drone heights `[h_drone_min, h_drone_max]`.
///
/// A degenerate side of the range (`h_drone_max == h_sat` or
/// `h_drone_min == h_sat`) leaves the corresponding bound unbounded
/// (reported as infinity).
pub fn alpha_bounds(
    h_sat: f64,
    h_drone_max: f64,
    h_drone_min: f64,
    n_parts: usize,
    map_size: usize,
) -> Result<AlphaBounds, GeometryError> {
    if h_sat <= 0.0 {
        return Err(GeometryError::NonPositiveSatHeight { h_sat });
    }
    if n_parts == 0 || n_parts > map_size / 2 {
        return Err(GeometryError::InvalidPartCount { n_parts, map_size });
    }
    if h_drone_max < h_sat || h_drone_min > h_sat {
        return Err(GeometryError::InvalidHeightRange { h_drone_min, h_sat, h_drone_max });
    }
    let half = map_size as f64 / 2.0;
    let n = n_parts as f64;
    let shrink = if h_drone_max > h_sat {
        (half - n) / n * h_sat / (h_drone_max - h_sat)
    } else {
        f64::INFINITY
    };
    let expand = if h_drone_min < h_sat {
        half * (n - 1.0) / n * h_sat / (h_sat - h_drone_min)
    } else {
        f64::INFINITY
    };
    Ok(AlphaBounds { shrink, expand })
}

/// Uniform square partition plan: `n_parts` concentric squares with sides
/// `round(map_size * n / n_parts)`, centered.
pub fn plan_sps(map_size: usize, n_parts: usize) -> Result<PartitionPlan, GeometryError> {
    plan_haas(map_size, n_parts, 0)
}

/// Height-adjusted square partition plan: uniform sides shifted by
/// `-2 * theta`, clamped to `[2, map_size]`.
///
/// Clamping at `map_size` is the intended behavior for strong expansion
/// (every partition saturates to the global view). Clamping at the 2-pixel
/// floor means theta violated the shrink bound; the plan carries a warning.
pub fn plan_haas(map_size: usize, n_parts: usize, theta: i32) -> Result<PartitionPlan, GeometryError> {
    if n_parts == 0 || n_parts > map_size / 2 {
        return Err(GeometryError::InvalidPartCount { n_parts, map_size });
    }
    let mut parts = Vec::with_capacity(n_parts);
    let mut clamped = false;
    let mut shrink_warning = false;
    for n in 1..=n_parts {
        let uniform = (map_size as f64 * n as f64 / n_parts as f64).round() as i64;
        let raw = uniform - 2 * theta as i64;
        let side = if raw < MIN_SIDE as i64 {
            clamped = true;
            shrink_warning = true;
            MIN_SIDE
        } else if raw > map_size as i64 {
            clamped = true;
            map_size
        } else {
            raw as usize
        };
        let offset = (map_size - side) / 2;
        parts.push(SquareRegion { row: offset, col: offset, side });
    }
    Ok(PartitionPlan { map_size, theta, parts, clamped, shrink_warning })
}

/// One square ring of the baseline plan: the outer square minus the previous
/// (inner) square; the innermost ring has no hole.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingRegion {
    pub outer: SquareRegion,
    pub inner: Option<SquareRegion>,
}

impl RingRegion {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.outer.contains(r, c) && !self.inner.map_or(false, |i| i.contains(r, c))
    }

    pub fn pixel_count(&self) -> usize {
        self.outer.area() - self.inner.map_or(0, |i| i.area())
    }

    /// Rasterize the ring as a binary mask over the full map.
    pub fn to_mask(&self, map_size: usize) -> BinaryMask {
        let mut bits = vec![0u8; map_size * map_size];
        for r in 0..map_size {
            for c in 0..map_size {
                if self.contains(r, c) {
                    bits[r * map_size + c] = 1;
                }
            }
        }
        BinaryMask::new(map_size, map_size, bits).expect("bits sized to map")
    }
}

/// Non-overlapping square-ring partition baseline: ring `n` is the uniform
/// square `n` minus square `n-1`; the rings tile the map exactly.
pub fn plan_square_ring(map_size: usize, n_parts: usize) -> Result<Vec<RingRegion>, GeometryError> {
    let sps = plan_sps(map_size, n_parts)?;
    let mut rings = Vec::with_capacity(n_parts);
    let mut prev: Option<SquareRegion> = None;
    for &outer in &sps.parts {
        rings.push(RingRegion { outer, inner: prev });
        prev = Some(outer);
    }
    Ok(rings)
}

/// Slice a feature map into the plan's part-level sub-tensors, innermost
/// part first.
pub fn extract_partitions(t: &Tensor3, plan: &PartitionPlan) -> Result<Vec<Tensor3>, GeometryError> {
    if t.height() != plan.map_size || t.width() != plan.map_size {
        return Err(GeometryError::MapSizeMismatch {
            map_size: plan.map_size,
            height: t.height(),
            width: t.width(),
        });
    }
    Ok(plan.parts.iter().map(|p| t.crop(p.row, p.col, p.side, p.side)).collect())
}

/// Estimate the satellite reference height from ground sampling distances:
/// `h_ref * (meters_per_pixel_sat / meters_per_pixel_ref)`, the linear
/// pinhole model used throughout this crate.
pub fn estimate_satellite_height(
    h_ref: f64,
    meters_per_pixel_sat: f64,
    meters_per_pixel_ref: f64,
) -> Result<f64, GeometryError> {
    for (name, value) in [
        ("h_ref", h_ref),
        ("meters_per_pixel_sat", meters_per_pixel_sat),
        ("meters_per_pixel_ref", meters_per_pixel_ref),
    ] {
        if value <= 0.0 {
            return Err(GeometryError::NonPositive { name, value });
        }
    }
    Ok(h_ref * meters_per_pixel_sat / meters_per_pixel_ref)
}

#[cfg(test)]
mod tests {
    use super::*;

    const H_SAT: f64 = 189.75;

    #[test]
    fn scale_factor_zero_when_heights_equal() {
        assert_eq!(scale_factor(H_SAT, H_SAT, 14.0).unwrap(), 0);
    }

    #[test]
    fn scale_factor_matches_hand_arithmetic() {
        assert_eq!(scale_factor(256.0, H_SAT, 14.0).unwrap(), 5);
        assert_eq!(scale_factor(123.5, H_SAT, 14.0).unwrap(), -5);
    }

    #[test]
    fn scale_factor_rounds_ties_away_from_zero() {
        // (150 - 100) / 100 * 1 = 0.5 exactly; -0.5 on the descent side.
        assert_eq!(scale_factor(150.0, 100.0, 1.0).unwrap(), 1);
        assert_eq!(scale_factor(50.0, 100.0, 1.0).unwrap(), -1);
    }

    #[test]
    fn scale_factor_rejects_non_positive_sat_height() {
        assert!(scale_factor(100.0, 0.0, 14.0).is_err());
        assert!(scale_factor(100.0, -5.0, 14.0).is_err());
    }

    #[test]
    fn scale_factor_monotone_in_drone_height() {
        let mut prev = i32::MIN;
        for step in 0..400 {
            let h = 10.0 + step as f64;
            let theta = scale_factor(h, H_SAT, 14.0).unwrap();
            assert!(theta >= prev);
            prev = theta;
        }
    }

    #[test]
    fn scale_factor_invariant_under_common_height_scaling() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let h_sat = rng.gen_range(50.0..500.0);
            let h_drone = rng.gen_range(10.0..900.0);
            let alpha = rng.gen_range(0.0..20.0);
            let c = rng.gen_range(0.1..10.0);
            let a = scale_factor(h_drone, h_sat, alpha).unwrap();
            let b = scale_factor(c * h_drone, c * h_sat, alpha).unwrap();
            assert_eq!(a, b, "h_drone={h_drone} h_sat={h_sat} alpha={alpha} c={c}");
        }
    }

    #[test]
    fn alpha_bounds_match_hand_arithmetic() {
        let b = alpha_bounds(H_SAT, 361.0, 18.5, 4, 128).unwrap();
        assert!((b.shrink - 15.0 * H_SAT / 171.25).abs() < 1e-9);
        assert!((b.expand - 48.0 * H_SAT / 171.25).abs() < 1e-9);
        assert!((b.shrink - 16.62).abs() < 0.01);
        assert!((b.expand - 53.19).abs() < 0.01);

        let b = alpha_bounds(H_SAT, 256.0, 123.5, 4, 128).unwrap();
        assert!((b.shrink - 42.96).abs() < 0.01);
        assert!((b.expand - 137.48).abs() < 0.01);
    }

    #[test]
    fn alpha_bounds_single_part_never_expands() {
        let b = alpha_bounds(H_SAT, 361.0, 18.5, 1, 128).unwrap();
        assert_eq!(b.expand, 0.0);
    }

    #[test]
    fn alpha_bounds_degenerate_range_is_unbounded() {
        let b = alpha_bounds(H_SAT, H_SAT, 18.5, 4, 128).unwrap();
        assert!(b.shrink.is_infinite());
        assert!(b.expand.is_finite());
        let b = alpha_bounds(H_SAT, 361.0, H_SAT, 4, 128).unwrap();
        assert!(b.expand.is_infinite());
    }

    #[test]
    fn alpha_bounds_rejects_inverted_range() {
        assert!(alpha_bounds(H_SAT, 150.0, 18.5, 4, 128).is_err());
        assert!(alpha_bounds(H_SAT, 361.0, 200.0, 4, 128).is_err());
    }

    #[test]
    fn plan_sps_reference_sides() {
        assert_eq!(plan_sps(128, 4).unwrap().sides(), vec![32, 64, 96, 128]);
        assert_eq!(plan_sps(128, 3).unwrap().sides(), vec![43, 85, 128]);
        let single = plan_sps(128, 1).unwrap();
        assert_eq!(single.parts, vec![SquareRegion { row: 0, col: 0, side: 128 }]);
    }

    #[test]
    fn plan_sps_rejects_out_of_range_part_count() {
        assert!(plan_sps(128, 0).is_err());
        assert!(plan_sps(128, 65).is_err());
        assert!(plan_sps(128, 64).is_ok());
    }

    #[test]
    fn plan_haas_shifts_sides_by_two_theta() {
        let plan = plan_haas(128, 4, 5).unwrap();
        assert_eq!(plan.sides(), vec![22, 54, 86, 118]);
        assert!(!plan.clamped);
        assert!(!plan.shrink_warning());
    }

    #[test]
    fn plan_haas_clamps_expansion_at_map_size() {
        let plan = plan_haas(128, 4, -5).unwrap();
        assert_eq!(plan.sides(), vec![42, 74, 106, 128]);
        assert!(plan.clamped);
        assert!(!plan.shrink_warning());
    }

    #[test]
    fn plan_haas_warns_when_shrink_bound_violated() {
        let plan = plan_haas(128, 4, 20).unwrap();
        assert_eq!(plan.sides(), vec![2, 24, 56, 88]);
        assert!(plan.clamped);
        assert!(plan.shrink_warning());
    }

    #[test]
    fn plan_haas_zero_theta_reduces_to_sps() {
        for &map_size in &[64usize, 128, 256] {
            for n in 1..=8 {
                assert_eq!(plan_haas(map_size, n, 0).unwrap(), plan_sps(map_size, n).unwrap());
            }
        }
    }

    #[test]
    fn plans_are_concentric_and_nested() {
        for &(s, n, theta) in &[(128usize, 4usize, 5i32), (128, 4, -5), (64, 3, 2), (127, 5, -3)] {
            let plan = plan_haas(s, n, theta).unwrap();
            let map_center = (s as f64 - 1.0) / 2.0;
            for w in plan.parts.windows(2) {
                let (inner, outer) = (w[0], w[1]);
                assert!(outer.row <= inner.row && outer.col <= inner.col);
                assert!(outer.row + outer.side >= inner.row + inner.side);
            }
            for p in &plan.parts {
                let center = p.row as f64 + (p.side as f64 - 1.0) / 2.0;
                assert!((center - map_center).abs() <= 1.0, "plan ({s},{n},{theta})");
            }
        }
    }

    #[test]
    fn admissible_alpha_never_triggers_shrink_warning() {
        // Sparse grid here; the acceptance suite covers the full 1 m grid.
        let bounds = alpha_bounds(H_SAT, 361.0, 18.5, 4, 128).unwrap();
        let max_alpha = bounds.shrink.min(bounds.expand);
        for alpha_step in 0..=16 {
            let alpha = alpha_step as f64;
            if alpha > max_alpha {
                break;
            }
            for h_step in 0..=20 {
                let h = 18.5 + (361.0 - 18.5) * h_step as f64 / 20.0;
                let theta = scale_factor(h, H_SAT, alpha).unwrap();
                let plan = plan_haas(128, 4, theta).unwrap();
                assert!(!plan.shrink_warning(), "alpha={alpha} h={h} theta={theta}");
            }
        }
    }

    #[test]
    fn square_rings_tile_the_map() {
        let rings = plan_square_ring(128, 4).unwrap();
        let counts: Vec<usize> = rings.iter().map(|r| r.pixel_count()).collect();
        assert_eq!(counts, vec![1024, 3072, 5120, 7168]);
        assert_eq!(counts.iter().sum::<usize>(), 128 * 128);
        for r in 0..128 {
            for c in 0..128 {
                let members = rings.iter().filter(|ring| ring.contains(r, c)).count();
                assert_eq!(members, 1, "pixel ({r},{c}) covered {members} times");
            }
        }
        let single = plan_square_ring(128, 1).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].pixel_count(), 128 * 128);
    }

    #[test]
    fn extract_partitions_shapes_follow_plan() {
        let t = Tensor3::constant(3, 128, 128, 1.5).unwrap();
        let plan = plan_haas(128, 4, 5).unwrap();
        let parts = extract_partitions(&t, &plan).unwrap();
        let shapes: Vec<(usize, usize, usize)> =
            parts.iter().map(|p| (p.channels(), p.height(), p.width())).collect();
        assert_eq!(shapes, vec![(3, 22, 22), (3, 54, 54), (3, 86, 86), (3, 118, 118)]);
        for p in &parts {
            assert!(p.data().iter().all(|&v| v == 1.5));
        }
    }

    #[test]
    fn extract_full_map_partition_returns_input_values() {
        let data: Vec<f32> = (0..2 * 8 * 8).map(|i| i as f32).collect();
        let t = Tensor3::new(2, 8, 8, data).unwrap();
        let plan = plan_sps(8, 1).unwrap();
        let parts = extract_partitions(&t, &plan).unwrap();
        assert_eq!(parts[0], t);
    }

    #[test]
    fn extract_partitions_rejects_size_mismatch() {
        let t = Tensor3::constant(1, 64, 64, 0.0).unwrap();
        let plan = plan_sps(128, 4).unwrap();
        assert!(matches!(
            extract_partitions(&t, &plan),
            Err(GeometryError::MapSizeMismatch { .. })
        ));
    }

    #[test]
    fn plan_serializes_to_documented_schema() {
        let plan = plan_haas(128, 4, -5).unwrap();
        let value: serde_json::Value = serde_json::to_value(&plan).unwrap();
        let obj = value.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, vec!["clamped", "map_size", "parts", "theta"]);
        assert_eq!(obj["theta"], serde_json::json!(-5));
        assert_eq!(obj["clamped"], serde_json::json!(true));
        let part = &obj["parts"][0];
        assert_eq!(part["side"], serde_json::json!(42));
        assert!(part["row"].is_u64() && part["col"].is_u64());
        let back: PartitionPlan = serde_json::from_value(value).unwrap();
        assert_eq!(back.sides(), plan.sides());
    }

    #[test]
    fn height_model_validates_alpha_against_bounds() {
        assert!(HeightModel::new(256.0, H_SAT, 14.0, 18.5, 361.0, 4, 128).is_ok());
        let err = HeightModel::new(256.0, H_SAT, 17.0, 18.5, 361.0, 4, 128).unwrap_err();
        assert!(matches!(err, GeometryError::AlphaOutOfBounds { .. }));
        assert!(HeightModel::new(400.0, H_SAT, 14.0, 18.5, 361.0, 4, 128).is_err());
    }

    #[test]
    fn satellite_height_estimate_is_linear_in_gsd() {
        let h = estimate_satellite_height(200.0, 1.5, 1.0).unwrap();
        assert!((h - 300.0).abs() < 1e-12);
        assert!(estimate_satellite_height(200.0, 0.0, 1.0).is_err());
    }
}
