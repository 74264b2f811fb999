//! Hand-written baselines: pick outside the opening and drop at its center,
//! and lift from two boundary points.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decode::LiftLimits;
use crate::actions::{LiftAction, RearrangeAction};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::render::Pixel;
use crate::scene::wrap_angle;

/// Pixel nearest the mean of the set pixels.
pub fn mask_centroid(mask: &Mask) -> Option<Pixel> {
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
    for (r, c) in mask.pixels() {
        sr += r as f64;
        sc += c as f64;
        n += 1;
    }
    (n > 0).then(|| ((sr / n as f64).round() as usize, (sc / n as f64).round() as usize))
}

/// World-frame angle and pixel distance from `a` to `b`.
pub fn pixel_heading(a: Pixel, b: Pixel) -> (f64, f64) {
    let dx = b.1 as f64 - a.1 as f64;
    let dy = a.0 as f64 - b.0 as f64;
    (dy.atan2(dx), dx.hypot(dy))
}

/// Uniform pick over object pixels outside the filled opening, placed at
/// the opening centroid. `None` when no object pixel lies outside.
pub fn heuristic_rearrange(
    objects: &Mask,
    filled_opening: &Mask,
    base_px: f64,
    seed: u64,
) -> Option<RearrangeAction> {
    let candidates: Vec<Pixel> = objects
        .pixels()
        .filter(|&(r, c)| !filled_opening.get(r, c))
        .collect();
    let place = mask_centroid(filled_opening)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let &pick = candidates.choose(&mut rng)?;
    let (theta, dist) = pixel_heading(pick, place);
    Some(RearrangeAction {
        pick_pixel: pick,
        place_pixel: place,
        theta,
        scale_w: dist / base_px,
    })
}

fn lift_between(l1: Pixel, l2: Pixel) -> LiftAction {
    let (theta, _) = pixel_heading(l1, l2);
    // Lines are undirected; keep the angle in [-90, 90).
    let theta = wrap_angle(2.0 * theta) / 2.0;
    LiftAction {
        lift_pixel: ((l1.0 + l2.0) / 2, (l1.1 + l2.1) / 2),
        theta,
        l1,
        l2,
    }
}

/// Two boundary pixels drawn at random among pairs within the separation
/// limits.
pub fn heuristic_lift(boundary: &Mask, limits: &LiftLimits, seed: u64) -> Result<LiftAction> {
    let pixels: Vec<Pixel> = boundary.pixels().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = pixels.clone();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    for &l1 in &order {
        let partners: Vec<Pixel> = pixels
            .iter()
            .copied()
            .filter(|&p| p != l1 && limits.admits(l1, p))
            .collect();
        if let Some(&l2) = partners.choose(&mut rng) {
            return Ok(lift_between(l1, l2));
        }
    }
    Err(Error::NoLiftPair(format!(
        "no pair among {} boundary pixels is {:.2}-{:.2} m apart",
        pixels.len(),
        limits.min_separation,
        limits.max_separation
    )))
}

/// Maximum-width lift: the two farthest apart pixels on the mask's
/// outline. Ties go to the first pair in row-major order.
pub fn max_width_lift(mask: &Mask) -> Result<LiftAction> {
    let edge: Vec<Pixel> = mask
        .pixels()
        .filter(|&(r, c)| {
            r == 0
                || c == 0
                || r + 1 == mask.height
                || c + 1 == mask.width
                || !mask.get(r - 1, c)
                || !mask.get(r + 1, c)
                || !mask.get(r, c - 1)
                || !mask.get(r, c + 1)
        })
        .collect();
    let mut best: Option<(usize, Pixel, Pixel)> = None;
    for (i, &a) in edge.iter().enumerate() {
        for &b in &edge[i + 1..] {
            let d = a.0.abs_diff(b.0).pow(2) + a.1.abs_diff(b.1).pow(2);
            if best.is_none_or(|(bd, _, _)| d > bd) {
                best = Some((d, a, b));
            }
        }
    }
    match best {
        Some((_, a, b)) => Ok(lift_between(a, b)),
        None => Err(Error::NoLiftPair("mask has fewer than two pixels".into())),
    }
}
