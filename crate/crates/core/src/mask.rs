//! Binary masks: polygon fill, boundary extraction, IoU and the opening
//! perturbation used to emulate imperfect opening predictions.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{centroid, is_simple, point_in_polygon, Point2};
use crate::physics::{BodyId, BodyKind, World};
use crate::render::{render, Camera};
use crate::scene::BagAsset;

#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    data: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.height, self.width, self.count())
    }
}

const N4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const N8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Mask { height, width, data }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidMask(format!(
                "{} values for a {height}x{width} mask",
                data.len()
            )));
        }
        Ok(Mask { height, width, data })
    }

    /// Pixels whose centers lie inside `polygon`, given in `(row, col)`
    /// pixel coordinates.
    pub fn from_polygon(height: usize, width: usize, polygon: &[Point2]) -> Self {
        let mut mask = Mask::new(height, width);
        if polygon.len() < 3 {
            return mask;
        }
        let (mut r0, mut r1, mut c0, mut c1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in polygon {
            r0 = r0.min(p[0]);
            r1 = r1.max(p[0]);
            c0 = c0.min(p[1]);
            c1 = c1.max(p[1]);
        }
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n);
        for r in clamp(r0.floor(), height)..clamp(r1.ceil() + 1.0, height) {
            for c in clamp(c0.floor(), width)..clamp(c1.ceil() + 1.0, width) {
                if point_in_polygon([r as f64 + 0.5, c as f64 + 0.5], polygon) {
                    mask.set(r, c, true);
                }
            }
        }
        mask
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / w, k % w))
    }

    fn neighbor(&self, r: usize, c: usize, d: (isize, isize)) -> Option<(usize, usize)> {
        let nr = r.checked_add_signed(d.0)?;
        let nc = c.checked_add_signed(d.1)?;
        (nr < self.height && nc < self.width).then_some((nr, nc))
    }

    fn check_dims(&self, other: &Mask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::DimensionMismatch(
                (self.height, self.width),
                (other.height, other.width),
            ));
        }
        Ok(())
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.check_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        Ok(Mask { data, ..*self })
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.check_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        Ok(Mask { data, ..*self })
    }

    /// Pixels set in exactly one of the two masks.
    pub fn symmetric_difference(&self, other: &Mask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count())
    }

    /// 8-connected dilation by one pixel.
    pub fn dilate(&self) -> Mask {
        let mut out = self.clone();
        for (r, c) in self.pixels() {
            for d in N8 {
                if let Some((nr, nc)) = self.neighbor(r, c, d) {
                    out.set(nr, nc, true);
                }
            }
        }
        out
    }

    /// 8-connected components, each as a list of pixels.
    pub fn components(&self) -> Vec<Vec<(usize, usize)>> {
        let mut seen = vec![false; self.data.len()];
        let mut out = Vec::new();
        for (r, c) in self.pixels() {
            if seen[r * self.width + c] {
                continue;
            }
            seen[r * self.width + c] = true;
            let mut queue = VecDeque::from([(r, c)]);
            let mut comp = Vec::new();
            while let Some((r, c)) = queue.pop_front() {
                comp.push((r, c));
                for d in N8 {
                    if let Some((nr, nc)) = self.neighbor(r, c, d) {
                        let k = nr * self.width + nc;
                        if self.data[k] && !seen[k] {
                            seen[k] = true;
                            queue.push_back((nr, nc));
                        }
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Unset pixels 4-connected to the image border.
    fn exterior(&self) -> Vec<bool> {
        let (h, w) = (self.height, self.width);
        let mut ext = vec![false; h * w];
        let mut queue = VecDeque::new();
        for r in 0..h {
            for c in 0..w {
                if (r == 0 || c == 0 || r + 1 == h || c + 1 == w) && !self.data[r * w + c] {
                    ext[r * w + c] = true;
                    queue.push_back((r, c));
                }
            }
        }
        while let Some((r, c)) = queue.pop_front() {
            for d in N4 {
                if let Some((nr, nc)) = self.neighbor(r, c, d) {
                    let k = nr * w + nc;
                    if !self.data[k] && !ext[k] {
                        ext[k] = true;
                        queue.push_back((nr, nc));
                    }
                }
            }
        }
        ext
    }

    /// The mask with every enclosed hole filled in.
    pub fn fill_holes(&self) -> Mask {
        let data = self.exterior().into_iter().map(|e| !e).collect();
        Mask { data, ..*self }
    }
}

/// |a ∩ b| / |a ∪ b|, defined as 1 when both masks are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    a.check_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.data.iter().zip(&b.data) {
        inter += usize::from(*x && *y);
        union += usize::from(*x || *y);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Outer contour of a single filled region: the set pixels that touch the
/// image edge or a 4-neighbour outside the region. The result is a closed,
/// 8-connected, one pixel wide ring; holes contribute nothing.
pub fn boundary_from_filled(filled: &Mask) -> Result<Mask> {
    let components = filled.components().len();
    if components != 1 {
        return Err(Error::InvalidMask(format!(
            "expected one connected region, found {components}"
        )));
    }
    let ext = filled.exterior();
    let (h, w) = (filled.height, filled.width);
    Ok(Mask::from_fn(h, w, |r, c| {
        filled.get(r, c)
            && N4.iter().any(|&d| match filled.neighbor(r, c, d) {
                Some((nr, nc)) => ext[nr * w + nc],
                None => true,
            })
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub bag_mask: Mask,
    pub filled_opening_mask: Mask,
    pub opening_boundary_mask: Mask,
    pub object_masks: Vec<(BodyId, Mask)>,
}

/// Filled and boundary masks of an opening polygon in workspace coordinates.
pub fn opening_masks(rim: &[Point2], camera: &Camera) -> Result<(Mask, Mask)> {
    if !is_simple(rim) {
        return Err(Error::DegeneratePolygon("projected rim ring self-intersects".into()));
    }
    let filled = Mask::from_polygon(camera.size, camera.size, &camera.polygon_to_pixels(rim));
    let boundary = boundary_from_filled(&filled).map_err(|e| Error::DegeneratePolygon(e.to_string()))?;
    Ok((filled, boundary))
}

/// Ground-truth masks from the bag's current rim ring and a fresh render.
pub fn ground_truth_opening(world: &World, bag: &BagAsset, camera: &Camera) -> Result<MaskSet> {
    let (filled, boundary) = opening_masks(&bag.rim_polygon(world), camera)?;
    let obs = render(world, camera);
    let object_masks = world
        .bodies
        .iter()
        .filter(|b| b.kind != BodyKind::Bag)
        .map(|b| (b.id, obs.body_mask(b.id)))
        .collect();
    Ok(MaskSet {
        bag_mask: obs.kind_mask(world, BodyKind::Bag),
        filled_opening_mask: filled,
        opening_boundary_mask: boundary,
        object_masks,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedOpening {
    pub polygon: Vec<Point2>,
    pub filled: Mask,
    pub boundary: Mask,
    /// IoU of `filled` against the unperturbed filled mask.
    pub iou: f64,
    /// Largest vertex displacement in meters.
    pub amplitude: f64,
}

const PERTURB_TOLERANCE: f64 = 0.01;
const PERTURB_MAX_ITERATIONS: usize = 100;
const PERTURB_CENTERS: usize = 3;

/// Deforms the rim polygon until its filled mask has IoU `target_iou`
/// (within 0.01) with the original. A few rim vertices are picked at random
/// and their neighbourhoods are pushed along the radial direction with
/// Gaussian falloff; the overall amplitude is found by bisection.
pub fn perturb_opening(
    rim: &[Point2],
    camera: &Camera,
    target_iou: f64,
    seed: u64,
) -> Result<PerturbedOpening> {
    if !(target_iou > 0.0 && target_iou <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target IoU must be in (0, 1], got {target_iou}"
        )));
    }
    let (truth, truth_boundary) = opening_masks(rim, camera)?;
    if target_iou == 1.0 {
        return Ok(PerturbedOpening {
            polygon: rim.to_vec(),
            filled: truth,
            boundary: truth_boundary,
            iou: 1.0,
            amplitude: 0.0,
        });
    }

    let n = rim.len();
    let center = centroid(rim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sigma = (n as f64 / 10.0).max(1.0);
    let mut field = vec![0.0; n];
    for _ in 0..PERTURB_CENTERS {
        let k = rng.random_range(0..n);
        let gain: f64 = normal.sample(&mut rng);
        for (i, f) in field.iter_mut().enumerate() {
            let d = i.abs_diff(k).min(n - i.abs_diff(k)) as f64;
            *f += gain * (-d * d / (2.0 * sigma * sigma)).exp();
        }
    }
    let peak = field.iter().fold(0.0f64, |m, f| m.max(f.abs()));
    let mean_radius =
        rim.iter().map(|p| (p[0] - center[0]).hypot(p[1] - center[1])).sum::<f64>() / n as f64;

    let deform = |amplitude: f64| -> Vec<Point2> {
        rim.iter()
            .zip(&field)
            .map(|(p, f)| {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                let len = dx.hypot(dy).max(1e-12);
                let s = amplitude * f / peak;
                [p[0] + s * dx / len, p[1] + s * dy / len]
            })
            .collect()
    };
    // IoU of the deformed polygon, or None when it is no longer a valid
    // single region (treated as overshooting).
    let evaluate = |amplitude: f64| -> Option<(Vec<Point2>, Mask, Mask, f64)> {
        let polygon = deform(amplitude);
        let (filled, boundary) = opening_masks(&polygon, camera).ok()?;
        let score = iou(&truth, &filled).ok()?;
        Some((polygon, filled, boundary, score))
    };

    let (mut lo, mut hi) = (0.0, mean_radius);
    let mut best = 1.0f64;
    for _ in 0..PERTURB_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        match evaluate(mid) {
            Some((polygon, filled, boundary, score)) => {
                if (score - target_iou).abs() < (best - target_iou).abs() {
                    best = score;
                }
                if (score - target_iou).abs() <= PERTURB_TOLERANCE {
                    return Ok(PerturbedOpening {
                        polygon,
                        filled,
                        boundary,
                        iou: score,
                        amplitude: mid,
                    });
                }
                if score > target_iou {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            None => hi = mid,
        }
    }
    Err(Error::PerturbationUnreachable {
        target: target_iou,
        achieved: best,
    })
}
