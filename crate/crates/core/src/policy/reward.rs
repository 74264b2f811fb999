//! Rearrangement reward: relative change of object volume outside the bag
//! opening.

use std::f64::consts::PI;

use crate::geometry::{point_in_polygon, Point2};
use crate::physics::{BodyKind, World};

pub const BAG_PICK_PENALTY: f64 = -0.5;

/// Summed sphere volume of object particles whose planar projection falls
/// outside `opening`.
pub fn outside_volume(world: &World, opening: &[Point2]) -> f64 {
    world
        .particles
        .iter()
        .filter(|p| p.body_kind != BodyKind::Bag)
        .filter(|p| !point_in_polygon([p.position.x, p.position.y], opening))
        .map(|p| 4.0 / 3.0 * PI * p.radius.powi(3))
        .sum()
}

/// `(pre - post) / max(pre, post)`, or 0 when both volumes are 0.
pub fn volume_reward(pre: f64, post: f64) -> f64 {
    let denom = pre.max(post);
    if denom <= 0.0 {
        0.0
    } else {
        (pre - post) / denom
    }
}

pub fn rearrange_reward(
    pre: &World,
    post: &World,
    grasped: Option<BodyKind>,
    opening: &[Point2],
) -> f64 {
    if grasped == Some(BodyKind::Bag) {
        return BAG_PICK_PENALTY;
    }
    volume_reward(outside_volume(pre, opening), outside_volume(post, opening))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_cases() {
        assert!((volume_reward(1.0, 0.4) - 0.6).abs() < 1e-15);
        assert!((volume_reward(0.4, 1.0) + 0.6).abs() < 1e-15);
        assert_eq!(volume_reward(0.0, 0.0), 0.0);
        assert_eq!(volume_reward(0.0, 2.0), -1.0);
        assert_eq!(volume_reward(2.0, 0.0), 1.0);
    }
}
