//! Partition alignment scoring: how semantically consistent the n-th drone
//! partition and the n-th satellite partition are, measured as the Jaccard
//! similarity of the object-id sets that cover a meaningful share of each
//! partition's area.

use super::{RenderedView, SynthError};
use crate::geometry::PartitionPlan;
use std::collections::BTreeSet;

/// Coverage threshold: an object id counts for a partition when it covers at
/// least this fraction of the partition's area. Filters rasterization slivers.
pub const COVERAGE_TAU: f64 = 0.01;

/// Per-part and mean alignment scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentScore {
    pub per_part: Vec<f64>,
    pub mean: f64,
}

/// Object ids covering at least `tau` of the plan region, after scaling the
/// region from plan coordinates to label-map coordinates.
fn covering_ids(view: &RenderedView, plan: &PartitionPlan, part: usize, tau: f64) -> BTreeSet<u16> {
    let res = view.resolution();
    let scale = res as f64 / plan.map_size as f64;
    let region = &plan.parts[part];
    let r0 = ((region.row as f64 * scale).round() as usize).min(res);
    let c0 = ((region.col as f64 * scale).round() as usize).min(res);
    let r1 = (((region.row + region.side) as f64 * scale).round() as usize).clamp(r0 + 1, res);
    let c1 = (((region.col + region.side) as f64 * scale).round() as usize).clamp(c0 + 1, res);
    let mut counts: std::collections::BTreeMap<u16, usize> = std::collections::BTreeMap::new();
    for r in r0..r1 {
        for c in c0..c1 {
            *counts.entry(view.label_at(r, c)).or_insert(0) += 1;
        }
    }
    let area = ((r1 - r0) * (c1 - c0)) as f64;
    counts
        .into_iter()
        .filter(|&(_, count)| count as f64 >= tau * area)
        .map(|(id, _)| id)
        .collect()
}

/// Score content alignment of every partition pair between a drone view and
/// a satellite view; both plans must have the same number of parts and each
/// view must be square.
pub fn partition_alignment_iou(
    plan_drone: &PartitionPlan,
    view_drone: &RenderedView,
    plan_sat: &PartitionPlan,
    view_sat: &RenderedView,
) -> Result<AlignmentScore, SynthError> {
    if plan_drone.n_parts() != plan_sat.n_parts() {
        return Err(SynthError::PartCountMismatch {
            drone: plan_drone.n_parts(),
            satellite: plan_sat.n_parts(),
        });
    }
    for view in [view_drone, view_sat] {
        if view.image.height() != view.image.width() || view.label_map.len() != view.image.height() * view.image.width() {
            return Err(SynthError::BadLabelMap { height: view.image.height(), width: view.image.width() });
        }
    }
    let per_part: Vec<f64> = (0..plan_drone.n_parts())
        .map(|n| {
            let a = covering_ids(view_drone, plan_drone, n, COVERAGE_TAU);
            let b = covering_ids(view_sat, plan_sat, n, COVERAGE_TAU);
            let union = a.union(&b).count();
            if union == 0 {
                1.0
            } else {
                a.intersection(&b).count() as f64 / union as f64
            }
        })
        .collect();
    let mean = per_part.iter().sum::<f64>() / per_part.len() as f64;
    Ok(AlignmentScore { per_part, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{plan_haas, plan_sps, scale_factor};
    use crate::synth::{render_view, WorldScene};

    #[test]
    fn identical_views_and_plans_score_one() {
        let scene = WorldScene::generate(3, 1, 400.0).unwrap();
        let view = render_view(&scene, 189.75, 64).unwrap();
        let plan = plan_sps(64, 4).unwrap();
        let score = partition_alignment_iou(&plan, &view, &plan, &view).unwrap();
        assert_eq!(score.per_part, vec![1.0; 4]);
        assert_eq!(score.mean, 1.0);
    }

    #[test]
    fn background_only_parts_agree_perfectly() {
        let mut scene = WorldScene::generate(3, 1, 400.0).unwrap();
        scene.distractors.clear();
        scene.target = super::super::WorldRect {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 0.0,
            max_y: 0.0,
            color: [0.0; 3],
            id: 1,
        };
        let a = render_view(&scene, 120.0, 64).unwrap();
        let b = render_view(&scene, 240.0, 64).unwrap();
        let plan = plan_sps(64, 4).unwrap();
        let score = partition_alignment_iou(&plan, &a, &plan, &b).unwrap();
        assert_eq!(score.mean, 1.0);
    }

    #[test]
    fn height_adjusted_plans_align_better_at_double_height() {
        // Drone at twice the satellite height with alpha within bounds for
        // a 64-pixel map: the adjusted plan must beat the uniform plan on
        // average over several scenes.
        let h_sat = 189.75;
        let h_drone = 2.0 * h_sat;
        let alpha = 7.0;
        let theta = scale_factor(h_drone, h_sat, alpha).unwrap();
        assert_eq!(theta, 7);
        let uniform = plan_sps(64, 4).unwrap();
        let adjusted = plan_haas(64, 4, theta).unwrap();
        let mut uniform_sum = 0.0;
        let mut adjusted_sum = 0.0;
        let mut classes = 0;
        for class_id in 1..=12 {
            let scene = WorldScene::generate(77, class_id, h_drone).unwrap();
            let drone = render_view(&scene, h_drone, 64).unwrap();
            let sat = render_view(&scene, h_sat, 64).unwrap();
            uniform_sum += partition_alignment_iou(&uniform, &drone, &uniform, &sat).unwrap().mean;
            adjusted_sum += partition_alignment_iou(&adjusted, &drone, &uniform, &sat).unwrap().mean;
            classes += 1;
        }
        assert!(
            adjusted_sum / classes as f64 > uniform_sum / classes as f64,
            "adjusted {adjusted_sum} <= uniform {uniform_sum} over {classes} classes"
        );
    }

    #[test]
    fn part_count_mismatch_is_rejected() {
        let scene = WorldScene::generate(3, 1, 400.0).unwrap();
        let view = render_view(&scene, 189.75, 64).unwrap();
        let a = plan_sps(64, 4).unwrap();
        let b = plan_sps(64, 3).unwrap();
        assert!(partition_alignment_iou(&a, &view, &b, &view).is_err());
    }
}
