//! Turning value-map indices back into executable actions.

use super::transform::SliceParams;
use crate::actions::{LiftAction, RearrangeAction};
use crate::mask::Mask;
use crate::render::Pixel;

/// Width of the band around a lift line in which boundary pixels count as
/// intersections, in pixels.
pub const LIFT_CORRIDOR_PX: f64 = 2.0;

fn clamp_pixel(p: [f64; 2], size: usize) -> Pixel {
    let max = (size - 1) as f64;
    (p[0].floor().clamp(0.0, max) as usize, p[1].floor().clamp(0.0, max) as usize)
}

/// Unit `[row, col]` step for a world-frame direction.
pub fn pixel_direction(theta: f64) -> [f64; 2] {
    let (sin, cos) = theta.sin_cos();
    [-sin, cos]
}

/// Original-image pixel for slice pixel `(row, col)`.
pub fn slice_to_pixel(params: &SliceParams, size: usize, row: usize, col: usize) -> Pixel {
    clamp_pixel(params.to_original(size, [row as f64 + 0.5, col as f64 + 0.5]), size)
}

/// Slice pixel containing the center of original pixel `pixel`.
pub fn encode_pick(params: &SliceParams, size: usize, pixel: Pixel) -> Pixel {
    clamp_pixel(params.to_slice(size, [pixel.0 as f64 + 0.5, pixel.1 as f64 + 0.5]), size)
}

/// The pick is the slice pixel mapped back into the image; the place point
/// lies `scale * base_px` pixels away along the slice direction, clamped
/// to the image.
pub fn decode_rearrange(
    params: &SliceParams,
    size: usize,
    (row, col): Pixel,
    base_px: f64,
) -> RearrangeAction {
    let pick = slice_to_pixel(params, size, row, col);
    let dir = pixel_direction(params.theta);
    let reach = params.scale * base_px;
    let place = clamp_pixel(
        [
            pick.0 as f64 + 0.5 + reach * dir[0],
            pick.1 as f64 + 0.5 + reach * dir[1],
        ],
        size,
    );
    RearrangeAction {
        pick_pixel: pick,
        place_pixel: place,
        theta: params.theta,
        scale_w: params.scale,
    }
}

/// Constraints on a decoded lift pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftLimits {
    pub pixel_scale: f64,
    pub min_separation: f64,
    pub max_separation: f64,
}

impl LiftLimits {
    pub fn separation(&self, a: Pixel, b: Pixel) -> f64 {
        (a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64) * self.pixel_scale
    }

    pub fn admits(&self, a: Pixel, b: Pixel) -> bool {
        let d = self.separation(a, b);
        d >= self.min_separation && d <= self.max_separation
    }
}

/// Lift pair on the line through slice pixel `(row, col)` with the slice's
/// direction: the boundary pixels within the corridor that lie farthest
/// apart along the line. `None` when the line meets the boundary fewer than
/// twice, the separation is out of limits, or an endpoint is on an object.
pub fn decode_lift(
    params: &SliceParams,
    size: usize,
    (row, col): Pixel,
    boundary: &Mask,
    objects: &Mask,
    limits: &LiftLimits,
) -> Option<LiftAction> {
    let origin = params.to_original(size, [row as f64 + 0.5, col as f64 + 0.5]);
    let dir = pixel_direction(params.theta);
    let mut first: Option<(f64, Pixel)> = None;
    let mut last: Option<(f64, Pixel)> = None;
    for (r, c) in boundary.pixels() {
        let d = [r as f64 + 0.5 - origin[0], c as f64 + 0.5 - origin[1]];
        let off = (d[0] * dir[1] - d[1] * dir[0]).abs();
        if off > LIFT_CORRIDOR_PX {
            continue;
        }
        let t = d[0] * dir[0] + d[1] * dir[1];
        if first.is_none_or(|(ft, _)| t < ft) {
            first = Some((t, (r, c)));
        }
        if last.is_none_or(|(lt, _)| t > lt) {
            last = Some((t, (r, c)));
        }
    }
    let (l1, l2) = (first?.1, last?.1);
    if l1 == l2 || !limits.admits(l1, l2) || objects.get(l1.0, l1.1) || objects.get(l2.0, l2.1) {
        return None;
    }
    Some(LiftAction {
        lift_pixel: clamp_pixel(origin, size),
        theta: params.theta,
        l1,
        l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_half_turn() {
        let id = SliceParams { theta: 0.0, scale: 1.0 };
        let a = decode_rearrange(&id, 224, (100, 60), 40.0);
        assert_eq!(a.pick_pixel, (100, 60));
        assert_eq!(a.place_pixel, (100, 100));
        let back = SliceParams {
            theta: -std::f64::consts::PI,
            scale: 1.0,
        };
        let p = encode_pick(&back, 224, (100, 60));
        let b = decode_rearrange(&back, 224, p, 40.0);
        assert_eq!(b.pick_pixel, (100, 60));
        assert_eq!(b.place_pixel, (100, 20));
    }
}
