//! Orthographic top-down rasterizer. Every particle is splatted as a disk of
//! its radius and resolved with a z-buffer.

use crate::color::{BAG_RGB, BACKGROUND_RGB};
use crate::geometry::Point2;
use crate::mask::Mask;
use crate::physics::{BodyId, BodyKind, World};

pub const IMAGE_SIZE: usize = 224;
/// Image coordinates `(row, col)`.
pub type Pixel = (usize, usize);
/// Height of the virtual camera above the ground, in meters.
pub const CAMERA_HEIGHT: f64 = 2.0;

/// Maps between workspace coordinates (meters, origin at the bag center)
/// and pixel coordinates `(row, col)`. Row 0 is the far edge (+y).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub size: usize,
    pub pixel_scale: f64,
    pub height: f64,
}

impl Camera {
    pub fn new(workspace_size: f64) -> Self {
        Camera {
            size: IMAGE_SIZE,
            pixel_scale: workspace_size / IMAGE_SIZE as f64,
            height: CAMERA_HEIGHT,
        }
    }

    fn half_extent(&self) -> f64 {
        self.size as f64 * self.pixel_scale / 2.0
    }

    /// Continuous pixel coordinates; pixel `(r, c)` covers `[r, r+1) x [c, c+1)`.
    pub fn to_pixel(&self, x: f64, y: f64) -> Point2 {
        let half = self.half_extent();
        [(half - y) / self.pixel_scale, (x + half) / self.pixel_scale]
    }

    /// World position of a pixel center.
    pub fn to_world(&self, row: usize, col: usize) -> Point2 {
        let half = self.half_extent();
        [
            (col as f64 + 0.5) * self.pixel_scale - half,
            half - (row as f64 + 0.5) * self.pixel_scale,
        ]
    }

    /// Pixel containing a workspace point, if it is inside the image.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let [r, c] = self.to_pixel(x, y);
        let n = self.size as f64;
        (r >= 0.0 && c >= 0.0 && r < n && c < n).then_some((r as usize, c as usize))
    }

    /// Polygon in workspace coordinates to `(row, col)` pixel space.
    pub fn polygon_to_pixels(&self, polygon: &[Point2]) -> Vec<Point2> {
        polygon.iter().map(|p| self.to_pixel(p[0], p[1])).collect()
    }
}

/// A rendered top-down view. Images are row-major, `size * size` long.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub size: usize,
    pub pixel_scale: f64,
    pub color: Vec<[f32; 3]>,
    /// Distance from the camera plane to the topmost surface.
    pub depth: Vec<f32>,
    /// Topmost body per pixel, `None` for the ground.
    pub label_map: Vec<Option<BodyId>>,
    pub filled_opening_mask: Mask,
}

impl Observation {
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.size + col
    }

    pub fn label(&self, row: usize, col: usize) -> Option<BodyId> {
        self.label_map[self.index(row, col)]
    }

    /// Pixels whose topmost body is `body`.
    pub fn body_mask(&self, body: BodyId) -> Mask {
        Mask::from_fn(self.size, self.size, |r, c| self.label(r, c) == Some(body))
    }

    /// Pixels covered by any body of `kind`.
    pub fn kind_mask(&self, world: &World, kind: BodyKind) -> Mask {
        Mask::from_fn(self.size, self.size, |r, c| {
            self.label(r, c).is_some_and(|b| world.body(b).kind == kind)
        })
    }
}

/// Renders `world` with an empty opening mask; see [`observe`].
pub fn render(world: &World, camera: &Camera) -> Observation {
    let n = camera.size;
    let mut top = vec![f64::NEG_INFINITY; n * n];
    let mut label_map = vec![None; n * n];
    let colors: Vec<[f32; 3]> = world
        .bodies
        .iter()
        .map(|b| match b.kind {
            BodyKind::Bag => BAG_RGB,
            _ => b.color.to_rgb(),
        })
        .collect();

    for p in &world.particles {
        // Cloth particles touch their grid neighbours; widening them to the
        // half diagonal closes the gaps at cell centers.
        let r = match p.body_kind {
            BodyKind::Cloth => p.radius * std::f64::consts::SQRT_2,
            _ => p.radius,
        };
        let [pr, pc] = camera.to_pixel(p.position.x, p.position.y);
        let reach = r / camera.pixel_scale;
        let r0 = (pr - reach).floor().max(0.0) as usize;
        let c0 = (pc - reach).floor().max(0.0) as usize;
        let r1 = ((pr + reach).ceil().max(0.0) as usize).min(n);
        let c1 = ((pc + reach).ceil().max(0.0) as usize).min(n);
        for row in r0..r1 {
            for col in c0..c1 {
                let dr = (row as f64 + 0.5 - pr) * camera.pixel_scale;
                let dc = (col as f64 + 0.5 - pc) * camera.pixel_scale;
                let d2 = dr * dr + dc * dc;
                if d2 > r * r {
                    continue;
                }
                let z = p.position.z + (r * r - d2).sqrt();
                let k = row * n + col;
                if z > top[k] {
                    top[k] = z;
                    label_map[k] = Some(p.body_id);
                }
            }
        }
    }

    let ground = world.params.ground_height;
    let depth = top
        .iter()
        .map(|&z| (camera.height - z.max(ground)) as f32)
        .collect();
    let color = label_map
        .iter()
        .map(|l: &Option<BodyId>| l.map_or(BACKGROUND_RGB, |b| colors[b.index()]))
        .collect();
    Observation {
        size: n,
        pixel_scale: camera.pixel_scale,
        color,
        depth,
        label_map,
        filled_opening_mask: Mask::new(n, n),
    }
}

/// Renders `world` and attaches the episode's opening mask.
pub fn observe(world: &World, camera: &Camera, filled_opening: &Mask) -> Observation {
    let mut obs = render(world, camera);
    obs.filled_opening_mask = filled_opening.clone();
    obs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::Hsv;
    use crate::physics::{SolverParams, Vec3};

    #[test]
    fn pixel_mapping_round_trips() {
        let cam = Camera::new(1.0);
        for &(r, c) in &[(0, 0), (10, 200), (223, 223), (112, 5)] {
            let [x, y] = cam.to_world(r, c);
            assert_eq!(cam.pixel_of(x, y), Some((r, c)));
        }
        assert_eq!(cam.pixel_of(0.6, 0.0), None);
        let [x, y] = cam.to_world(0, 0);
        assert!(x < 0.0 && y > 0.0);
    }

    #[test]
    fn empty_world_is_background() {
        let world = World::new(SolverParams::default());
        let obs = render(&world, &Camera::new(1.0));
        assert!(obs.label_map.iter().all(Option::is_none));
        assert!(obs.depth.iter().all(|&d| d == CAMERA_HEIGHT as f32));
    }

    #[test]
    fn upper_body_wins() {
        let mut world = World::new(SolverParams::default());
        let color = Hsv { h: 0.3, s: 1.0, v: 1.0 };
        let low = world.add_body(BodyKind::Cloth, color, &[Vec3::new(0.0, 0.0, 0.01)], 0.05, 1.0);
        let high = world.add_body(BodyKind::Cloth, color, &[Vec3::new(0.02, 0.0, 0.03)], 0.05, 1.0);
        let cam = Camera::new(1.0);
        let obs = render(&world, &cam);
        let (r, c) = cam.pixel_of(0.02, 0.0).unwrap();
        assert_eq!(obs.label(r, c), Some(high));
        let (r, c) = cam.pixel_of(-0.06, 0.0).unwrap();
        assert_eq!(obs.label(r, c), Some(low));
    }
}
