//! Benchmark tasks: seeded sampling of bag, cloth and rigid object
//! parameters, the versioned task file format, and scene construction.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::Hsv;
use crate::config::{BenchConfig, SceneParams};
use crate::error::{Error, Result};
use crate::geometry::{is_simple, point_in_polygon, Point2};
use crate::physics::{BodyId, BodyKind, DistanceConstraint, RigidCluster, Vec3, World};

pub const TASK_FORMAT_VERSION: u32 = 1;

/// Allowed (rigid, cloth) mixes, grouped by total object count.
pub const OBJECT_MIXES: [(usize, usize); 8] = [
    (1, 1),
    (1, 2),
    (2, 1),
    (1, 3),
    (2, 2),
    (3, 1),
    (2, 3),
    (3, 2),
];

pub const BAG_DIMENSION_RANGE: (f64, f64) = (0.25, 0.40);
pub const CLOTH_DIMENSION_RANGE: (f64, f64) = (0.20, 0.60);
pub const STIFFNESS_RANGE: (f64, f64) = (0.85, 0.95);
pub const RIGID_DIMENSION_RANGE: (f64, f64) = (0.04, 0.10);
pub const HUE_RANGE: (f64, f64) = (0.0, 1.0);
pub const SATURATION_RANGE: (f64, f64) = (0.0, 1.0);
pub const VALUE_RANGE: (f64, f64) = (0.5, 1.0);

/// Half-width of the square region cloth drop points are sampled from.
const CLOTH_DROP_EXTENT: f64 = 0.3;
/// Rigid objects are kept this far inside the workspace edge.
const RIGID_EDGE_MARGIN: f64 = 0.06;

pub fn mixes_with(total: usize) -> Vec<(usize, usize)> {
    OBJECT_MIXES
        .iter()
        .copied()
        .filter(|(r, c)| r + c == total)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigidShape {
    Box,
    Sphere,
    Cylinder,
    Ellipsoid,
}

impl RigidShape {
    pub const ALL: [RigidShape; 4] = [
        RigidShape::Box,
        RigidShape::Sphere,
        RigidShape::Cylinder,
        RigidShape::Ellipsoid,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagParams {
    /// Opening diameter in meters.
    pub dimension: f64,
    pub stiffness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClothDrop {
    /// Grasped particle as fractions of the grid extent.
    pub grasp_u: f64,
    pub grasp_v: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    /// Horizontal travel of the grasp while it is raised.
    pub drift: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClothParams {
    pub width: f64,
    pub height: f64,
    pub stiffness: f64,
    pub color: Hsv,
    pub drop: ClothDrop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidParams {
    pub shape: RigidShape,
    /// Extent along x, y, z. Spheres use `dims[0]` as diameter, cylinders
    /// use `dims[0]` as diameter and `dims[2]` as height.
    pub dims: [f64; 3],
    pub color: Hsv,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl RigidParams {
    /// Radius of the horizontal footprint.
    pub fn footprint_radius(&self) -> f64 {
        match self.shape {
            RigidShape::Sphere => self.dims[0] / 2.0,
            RigidShape::Cylinder => self.dims[0] / 2.0,
            RigidShape::Box | RigidShape::Ellipsoid => self.dims[0].hypot(self.dims[1]) / 2.0,
        }
    }

    pub fn max_extent(&self) -> f64 {
        let [a, b, c] = self.dims;
        match self.shape {
            RigidShape::Sphere => a,
            RigidShape::Cylinder => a.hypot(c),
            RigidShape::Box => (a * a + b * b + c * c).sqrt(),
            RigidShape::Ellipsoid => a.max(b).max(c),
        }
    }
}

/// A seeded benchmark instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub format_version: u32,
    pub seed: u64,
    pub n_rigid: usize,
    pub n_cloth: usize,
    pub bag: BagParams,
    #[serde(default)]
    pub rigids: Vec<RigidParams>,
    #[serde(default)]
    pub cloths: Vec<ClothParams>,
}

fn check_counts(n_rigid: usize, n_cloth: usize) -> Result<()> {
    if OBJECT_MIXES.contains(&(n_rigid, n_cloth)) {
        Ok(())
    } else {
        Err(Error::InvalidCounts { n_rigid, n_cloth })
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..hi)
}

fn sample_color(rng: &mut impl Rng) -> Hsv {
    Hsv::new(
        uniform(rng, HUE_RANGE),
        uniform(rng, SATURATION_RANGE),
        uniform(rng, VALUE_RANGE),
    )
}

/// Independent RNG stream derived from a task seed.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_rigid_position(
    rng: &mut impl Rng,
    footprint: f64,
    bag_radius: f64,
    others: &[(f64, f64, f64)],
    half_workspace: f64,
) -> (f64, f64) {
    let extent = half_workspace - RIGID_EDGE_MARGIN - footprint;
    let mut candidate = (extent, extent);
    for _ in 0..1000 {
        let x = rng.random_range(-extent..extent);
        let y = rng.random_range(-extent..extent);
        candidate = (x, y);
        let clear_of_bag = x.hypot(y) > bag_radius + footprint + 0.03;
        let clear_of_others = others
            .iter()
            .all(|&(ox, oy, or)| (x - ox).hypot(y - oy) > footprint + or + 0.02);
        if clear_of_bag && clear_of_others {
            break;
        }
    }
    candidate
}

fn sample_cloth_drop(rng: &mut impl Rng) -> ClothDrop {
    let drift_angle = rng.random_range(0.0..TAU);
    let drift_len = rng.random_range(0.0..0.15);
    ClothDrop {
        grasp_u: rng.random_range(0.0..1.0),
        grasp_v: rng.random_range(0.0..1.0),
        x: rng.random_range(-CLOTH_DROP_EXTENT..CLOTH_DROP_EXTENT),
        y: rng.random_range(-CLOTH_DROP_EXTENT..CLOTH_DROP_EXTENT),
        yaw: rng.random_range(0.0..TAU),
        drift: [drift_len * drift_angle.cos(), drift_len * drift_angle.sin()],
    }
}

/// Samples a task deterministically from `seed`.
pub fn sample_task(seed: u64, n_rigid: usize, n_cloth: usize) -> Result<TaskSpec> {
    check_counts(n_rigid, n_cloth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bag = BagParams {
        dimension: uniform(&mut rng, BAG_DIMENSION_RANGE),
        stiffness: uniform(&mut rng, STIFFNESS_RANGE),
    };
    let half_workspace = SceneParams::default().workspace_size / 2.0;

    let mut placed = Vec::new();
    let mut rigids = Vec::with_capacity(n_rigid);
    for _ in 0..n_rigid {
        let shape = RigidShape::ALL[rng.random_range(0..RigidShape::ALL.len())];
        let dims = [
            uniform(&mut rng, RIGID_DIMENSION_RANGE),
            uniform(&mut rng, RIGID_DIMENSION_RANGE),
            uniform(&mut rng, RIGID_DIMENSION_RANGE),
        ];
        let color = sample_color(&mut rng);
        let yaw = rng.random_range(0.0..TAU);
        let mut params = RigidParams {
            shape,
            dims,
            color,
            x: 0.0,
            y: 0.0,
            yaw,
        };
        let footprint = params.footprint_radius();
        let (x, y) = sample_rigid_position(
            &mut rng,
            footprint,
            bag.dimension / 2.0,
            &placed,
            half_workspace,
        );
        params.x = x;
        params.y = y;
        placed.push((x, y, footprint));
        rigids.push(params);
    }

    let mut cloths = Vec::with_capacity(n_cloth);
    for _ in 0..n_cloth {
        // Cloths must be larger than the bag opening.
        let mut side = || loop {
            let s = uniform(&mut rng, CLOTH_DIMENSION_RANGE);
            if s > bag.dimension {
                break s;
            }
        };
        let width = side();
        let height = side();
        let stiffness = uniform(&mut rng, STIFFNESS_RANGE);
        let color = sample_color(&mut rng);
        let drop = sample_cloth_drop(&mut rng);
        cloths.push(ClothParams {
            width,
            height,
            stiffness,
            color,
            drop,
        });
    }

    Ok(TaskSpec {
        format_version: TASK_FORMAT_VERSION,
        seed,
        n_rigid,
        n_cloth,
        bag,
        rigids,
        cloths,
    })
}

impl TaskSpec {
    pub fn object_count(&self) -> usize {
        self.n_rigid + self.n_cloth
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != TASK_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported task format version {} (expected {TASK_FORMAT_VERSION})",
                self.format_version
            )));
        }
        check_counts(self.n_rigid, self.n_cloth)?;
        if self.rigids.len() != self.n_rigid || self.cloths.len() != self.n_cloth {
            return Err(Error::Format(format!(
                "task lists {} rigid and {} cloth objects but declares {} and {}",
                self.rigids.len(),
                self.cloths.len(),
                self.n_rigid,
                self.n_cloth
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("task serializes");
        format!("# bagbench task file, format version {TASK_FORMAT_VERSION}\n{body}")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let task: TaskSpec =
            toml::from_str(text).map_err(|e| Error::Format(format!("task file: {e}")))?;
        task.validate()?;
        Ok(task)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BagAsset {
    pub body: BodyId,
    pub dimension: f64,
    pub bottom_radius: f64,
    pub wall_height: f64,
    /// Ordered ring of particles forming the opening boundary.
    pub rim: Vec<usize>,
}

impl BagAsset {
    /// Planar projection of the rim ring.
    pub fn rim_polygon(&self, world: &World) -> Vec<Point2> {
        self.rim
            .iter()
            .map(|&i| {
                let p = world.particles[i].position;
                [p.x, p.y]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClothAsset {
    pub body: BodyId,
    pub resolution: usize,
    pub width: f64,
    pub height: f64,
    pub color: Hsv,
}

impl ClothAsset {
    pub fn particle(&self, world: &World, row: usize, col: usize) -> usize {
        world.body(self.body).particles.start + row * self.resolution + col
    }

    /// Flat rest layout in the cloth's own frame, centered on the origin.
    fn layout(&self) -> Vec<(f64, f64)> {
        grid_layout(self.resolution, self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidAsset {
    pub body: BodyId,
    pub shape: RigidShape,
    pub dims: [f64; 3],
    pub color: Hsv,
    pub cluster: usize,
}

fn grid_layout(res: usize, width: f64, height: f64) -> Vec<(f64, f64)> {
    let dx = width / (res - 1) as f64;
    let dy = height / (res - 1) as f64;
    let mut out = Vec::with_capacity(res * res);
    for row in 0..res {
        for col in 0..res {
            out.push((col as f64 * dx - width / 2.0, row as f64 * dy - height / 2.0));
        }
    }
    out
}

fn link(world: &mut World, bending: bool, a: usize, b: usize, stiffness: f64) {
    let rest = (world.particles[a].position - world.particles[b].position).norm();
    let c = DistanceConstraint::new(a, b, rest, stiffness);
    if bending {
        world.bending.push(c);
    } else {
        world.distance.push(c);
    }
}

/// Builds an open pouch: a disc bottom of concentric rings plus a vertical
/// wall, centered on the origin and resting on the ground.
pub fn add_bag(world: &mut World, bag: &BagParams, scene: &SceneParams) -> BagAsset {
    let n = scene.bag_segments.max(8);
    let rings = scene.bag_rings.max(2);
    let radius = bag.dimension / 2.0;
    let wall_height = scene.wall_height_ratio * bag.dimension;
    let ring_gap = radius / rings as f64;
    let arc = TAU * radius / n as f64;
    let particle_radius = 0.55 * arc.max(ring_gap);
    let rows = (((wall_height - particle_radius) / ring_gap).round() as usize).max(2);
    let row_gap = (wall_height - particle_radius) / rows as f64;

    // ring_starts[k] / ring_counts[k]: bottom ring k (k = 0 is the center).
    let mut positions = vec![Vec3::new(0.0, 0.0, particle_radius)];
    let mut ring_starts = vec![0usize];
    let mut ring_counts = vec![1usize];
    for k in 1..=rings {
        let count = if k == rings {
            n
        } else {
            ((n * k) as f64 / rings as f64).round().max(6.0) as usize
        };
        ring_starts.push(positions.len());
        ring_counts.push(count);
        let rk = radius * k as f64 / rings as f64;
        for i in 0..count {
            let phi = TAU * i as f64 / count as f64;
            positions.push(Vec3::new(rk * phi.cos(), rk * phi.sin(), particle_radius));
        }
    }
    // Wall rows; row 0 is the outer bottom ring.
    let mut row_starts = vec![ring_starts[rings]];
    for j in 1..=rows {
        row_starts.push(positions.len());
        let z = particle_radius + row_gap * j as f64;
        for i in 0..n {
            let phi = TAU * i as f64 / n as f64;
            positions.push(Vec3::new(radius * phi.cos(), radius * phi.sin(), z));
        }
    }

    let start = world.particles.len();
    let body = world.add_body(
        BodyKind::Bag,
        Hsv::new(0.0, 0.0, 0.35),
        &positions,
        particle_radius,
        1.0 / scene.deformable_particle_mass,
    );
    let k = bag.stiffness;
    let at = |ring: usize, i: usize| start + ring_starts[ring] + i % ring_counts[ring];
    let nearest = |ring: usize, phi: f64| -> [usize; 2] {
        // Two closest particles of `ring` by angle.
        let count = ring_counts[ring];
        let t = phi / TAU * count as f64;
        let lo = t.floor() as usize % count;
        let hi = (lo + 1) % count;
        if t - t.floor() < 0.5 {
            [lo, hi]
        } else {
            [hi, lo]
        }
    };

    for ring in 1..=rings {
        let count = ring_counts[ring];
        for i in 0..count {
            link(world, false, at(ring, i), at(ring, i + 1), k);
            link(world, true, at(ring, i), at(ring, i + 2), k);
            let phi = TAU * i as f64 / count as f64;
            if ring == 1 {
                link(world, false, at(ring, i), start, k);
            } else {
                let [a, b] = nearest(ring - 1, phi);
                link(world, false, at(ring, i), at(ring - 1, a), k);
                if a != b {
                    link(world, false, at(ring, i), at(ring - 1, b), k);
                }
            }
            if ring >= 2 {
                let inner = if ring == 2 {
                    start
                } else {
                    at(ring - 2, nearest(ring - 2, phi)[0])
                };
                link(world, true, at(ring, i), inner, k);
            }
        }
    }
    let row = |j: usize, i: usize| start + row_starts[j] + i % n;
    for j in 1..=rows {
        for i in 0..n {
            link(world, false, row(j, i), row(j, i + 1), k);
            link(world, true, row(j, i), row(j, i + 2), k);
            link(world, false, row(j, i), row(j - 1, i), k);
            link(world, false, row(j, i), row(j - 1, i + 1), k);
            link(world, false, row(j, i + 1), row(j - 1, i), k);
            if j >= 2 {
                link(world, true, row(j, i), row(j - 2, i), k);
            }
        }
    }
    // Corner stiffeners hold the wall upright against the bottom.
    for i in 0..n {
        let phi = TAU * i as f64 / n as f64;
        let inner = at(rings - 1, nearest(rings - 1, phi)[0]);
        link(world, true, row(1, i), inner, k);
        if rows >= 2 {
            link(world, true, row(2, i), inner, k);
        }
    }

    if scene.bag_shape_stiffness > 0.0 {
        let range: Vec<usize> = (start..start + positions.len()).collect();
        world
            .clusters
            .push(RigidCluster::soft(range, &positions, scene.bag_shape_stiffness));
    }

    BagAsset {
        body,
        dimension: bag.dimension,
        bottom_radius: radius,
        wall_height,
        rim: (0..n).map(|i| row(rows, i)).collect(),
    }
}

/// Adds a flat rectangular cloth with its center at `center`.
#[allow(clippy::too_many_arguments)]
pub fn add_cloth(
    world: &mut World,
    params: &ClothParams,
    resolution: usize,
    bending_stiffness: f64,
    particle_mass: f64,
    center: Vec3,
    yaw: f64,
) -> ClothAsset {
    let res = resolution.max(2);
    let spacing = (params.width.max(params.height)) / (res - 1) as f64;
    // Neighbouring particles touch, so nothing slips between them. The
    // renderer widens cloth disks to cover the cell diagonals.
    let radius = spacing / 2.0;
    let (sin, cos) = yaw.sin_cos();
    let positions: Vec<Vec3> = grid_layout(res, params.width, params.height)
        .into_iter()
        .map(|(x, y)| center + Vec3::new(x * cos - y * sin, x * sin + y * cos, 0.0))
        .collect();
    let start = world.particles.len();
    let body = world.add_body(
        BodyKind::Cloth,
        params.color,
        &positions,
        radius,
        1.0 / particle_mass,
    );
    let k = params.stiffness;
    let idx = |r: usize, c: usize| start + r * res + c;
    for r in 0..res {
        for c in 0..res {
            if c + 1 < res {
                link(world, false, idx(r, c), idx(r, c + 1), k);
            }
            if r + 1 < res {
                link(world, false, idx(r, c), idx(r + 1, c), k);
            }
            if r + 1 < res && c + 1 < res {
                link(world, false, idx(r, c), idx(r + 1, c + 1), k);
                link(world, false, idx(r, c + 1), idx(r + 1, c), k);
            }
            if c + 2 < res {
                link(world, true, idx(r, c), idx(r, c + 2), bending_stiffness);
            }
            if r + 2 < res {
                link(world, true, idx(r, c), idx(r + 2, c), bending_stiffness);
            }
        }
    }
    ClothAsset {
        body,
        resolution: res,
        width: params.width,
        height: params.height,
        color: params.color,
    }
}

/// Particle offsets (relative to the shape center) and particle radius for a
/// rigid primitive. Particle disks reach the nominal extent of the shape.
pub fn rigid_lattice(shape: RigidShape, dims: [f64; 3]) -> (Vec<Vec3>, f64) {
    let dims = match shape {
        RigidShape::Sphere => [dims[0]; 3],
        RigidShape::Cylinder => [dims[0], dims[0], dims[2]],
        _ => dims,
    };
    let max = dims.iter().copied().fold(0.0, f64::max);
    let min = dims.iter().copied().fold(f64::INFINITY, f64::min);
    let radius = (max / 6.0).min(min / 2.0);
    rigid_lattice_with_radius(shape, dims, radius)
}

/// Like [`rigid_lattice`] with an explicit particle radius; `dims` are the
/// per-axis extents already expanded for spheres and cylinders.
pub fn rigid_lattice_with_radius(shape: RigidShape, dims: [f64; 3], radius: f64) -> (Vec<Vec3>, f64) {
    let spacing = 1.4 * radius;
    let axis = |extent: f64| -> Vec<f64> {
        let half = (extent / 2.0 - radius).max(0.0);
        if half < 1e-12 {
            return vec![0.0];
        }
        let n = ((2.0 * half / spacing).ceil() as usize).max(1) + 1;
        (0..n)
            .map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64)
            .collect()
    };
    let (xs, ys, zs) = (axis(dims[0]), axis(dims[1]), axis(dims[2]));
    let semi = [dims[0] / 2.0, dims[1] / 2.0, dims[2] / 2.0];
    let mut points = Vec::new();
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                let inside = match shape {
                    RigidShape::Box => true,
                    RigidShape::Sphere | RigidShape::Ellipsoid => {
                        (x / semi[0]).powi(2) + (y / semi[1]).powi(2) + (z / semi[2]).powi(2)
                            <= 1.0 + 1e-9
                    }
                    RigidShape::Cylinder => {
                        (x / semi[0]).powi(2) + (y / semi[1]).powi(2) <= 1.0 + 1e-9
                    }
                };
                if inside {
                    points.push(Vec3::new(x, y, z));
                }
            }
        }
    }
    (points, radius)
}

/// Adds a rigid primitive resting on the ground at `(x, y)`.
pub fn add_rigid(world: &mut World, params: &RigidParams, particle_mass: f64) -> RigidAsset {
    let (offsets, radius) = rigid_lattice(params.shape, params.dims);
    add_rigid_from_lattice(world, params, &offsets, radius, particle_mass)
}

pub fn add_rigid_from_lattice(
    world: &mut World,
    params: &RigidParams,
    offsets: &[Vec3],
    radius: f64,
    particle_mass: f64,
) -> RigidAsset {
    let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), params.yaw);
    let lowest = offsets.iter().map(|o| o.z).fold(f64::INFINITY, f64::min);
    let base = Vec3::new(params.x, params.y, radius - lowest);
    let positions: Vec<Vec3> = offsets.iter().map(|o| base + rot * o).collect();
    let body = world.add_body(
        BodyKind::Rigid,
        params.color,
        &positions,
        radius,
        1.0 / particle_mass,
    );
    let range = world.body(body).particles.clone();
    world
        .clusters
        .push(RigidCluster::from_positions(range.collect(), &positions));
    RigidAsset {
        body,
        shape: params.shape,
        dims: params.dims,
        color: params.color,
        cluster: world.clusters.len() - 1,
    }
}

/// A built, settled benchmark scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub task: TaskSpec,
    pub world: World,
    pub bag: BagAsset,
    pub cloths: Vec<ClothAsset>,
    pub rigids: Vec<RigidAsset>,
    /// Rim projection of the bag before any object was placed.
    pub opening_rim: Vec<Point2>,
    /// Number of objects that had to be dropped again.
    pub redrops: usize,
}

impl Scene {
    /// Object bodies (everything except the bag), rigid objects first.
    pub fn object_bodies(&self) -> Vec<BodyId> {
        self.rigids
            .iter()
            .map(|r| r.body)
            .chain(self.cloths.iter().map(|c| c.body))
            .collect()
    }
}

/// Highest particle top among bodies other than `skip`, restricted to a
/// disk of `reach` around `(x, y)`.
fn top_near(world: &World, skip: Option<BodyId>, x: f64, y: f64, reach: f64) -> f64 {
    world
        .particles
        .iter()
        .filter(|p| Some(p.body_id) != skip)
        .filter(|p| (p.position.x - x).hypot(p.position.y - y) < reach + p.radius)
        .map(|p| p.position.z + p.radius)
        .fold(0.0, f64::max)
}

fn drop_cloth(world: &mut World, cloth: &ClothAsset, drop: &ClothDrop, lift: f64) -> Result<()> {
    let layout = cloth.layout();
    let res = cloth.resolution;
    let row = (drop.grasp_v * (res - 1) as f64).round() as usize;
    let col = (drop.grasp_u * (res - 1) as f64).round() as usize;
    let grasp_local = layout[row * res + col];
    let (sin, cos) = drop.yaw.sin_cos();
    let rotate = |(x, y): (f64, f64)| (x * cos - y * sin, x * sin + y * cos);
    let (gx, gy) = rotate(grasp_local);
    let reach = cloth.width.hypot(cloth.height);
    let range = world.body(cloth.body).particles.clone();
    let radius = world.particles[range.start].radius;
    let z = top_near(world, Some(cloth.body), drop.x, drop.y, reach) + radius + 0.02;
    for (i, local) in range.clone().zip(layout) {
        let (lx, ly) = rotate(local);
        let p = &mut world.particles[i];
        p.position = Vec3::new(drop.x + lx - gx, drop.y + ly - gy, z);
        p.velocity = Vec3::zeros();
    }

    let grasp = cloth.particle(world, row, col);
    world.attach(grasp)?;
    let start = world.particles[grasp].position;
    let steps = 25;
    for s in 1..=steps {
        let f = s as f64 / steps as f64;
        let target = start + Vec3::new(drop.drift[0] * f, drop.drift[1] * f, lift * f);
        world.set_attachment_target(grasp, target)?;
        world.step(world.params.dt)?;
    }
    for _ in 0..5 {
        world.step(world.params.dt)?;
    }
    world.detach(grasp)
}

fn place_rigid(world: &mut World, rigid: &RigidAsset, x: f64, y: f64) {
    let centroid = world.body_centroid(rigid.body);
    let range = world.body(rigid.body).particles.clone();
    let lowest = world.particles[range]
        .iter()
        .map(|p| p.position.z - p.radius)
        .fold(f64::INFINITY, f64::min);
    let reach = rigid.dims.iter().copied().fold(0.0, f64::max);
    let floor = top_near(world, Some(rigid.body), x, y, reach);
    let offset = Vec3::new(x - centroid.x, y - centroid.y, floor + 0.005 - lowest);
    world.translate_body(rigid.body, offset);
}

/// True when at least one particle of `body` projects outside `polygon`.
pub fn partly_outside(world: &World, body: BodyId, polygon: &[Point2]) -> bool {
    world
        .body_positions(body)
        .any(|p| !point_in_polygon([p.x, p.y], polygon))
}

/// Builds and settles the scene for `task`: the bag is settled on its own,
/// rigid objects are placed on the ground and every cloth is picked up at a
/// random particle and dropped. Objects that end up entirely inside the bag
/// opening are dropped again.
pub fn build_scene(task: &TaskSpec, config: &BenchConfig) -> Result<Scene> {
    task.validate()?;
    let sp = &config.scene;
    let mut world = World::new(config.solver.clone());
    let bag = add_bag(&mut world, &task.bag, sp);
    world.settle(sp.bag_settle_time)?;
    let opening_rim = bag.rim_polygon(&world);
    if !is_simple(&opening_rim) {
        return Err(Error::TaskInfeasible("bag rim settled into a self-intersecting ring".into()));
    }

    let rigids: Vec<RigidAsset> = task
        .rigids
        .iter()
        .map(|params| add_rigid(&mut world, params, sp.rigid_particle_mass))
        .collect();
    let mut cloths = Vec::with_capacity(task.cloths.len());
    for params in &task.cloths {
        // Built far below the scene; drop_cloth moves it into place.
        let cloth = add_cloth(
            &mut world,
            params,
            sp.cloth_resolution,
            sp.cloth_bending_stiffness,
            sp.deformable_particle_mass,
            Vec3::new(0.0, 0.0, 10.0),
            params.drop.yaw,
        );
        drop_cloth(&mut world, &cloth, &params.drop, sp.drop_lift)?;
        cloths.push(cloth);
    }
    world.settle(sp.scene_settle_time)?;

    let mut redrops = 0;
    let half = sp.workspace_size / 2.0;
    for attempt in 0.. {
        let violators: Vec<usize> = rigids
            .iter()
            .map(|r| r.body)
            .chain(cloths.iter().map(|c: &ClothAsset| c.body))
            .enumerate()
            .filter(|&(_, body)| !partly_outside(&world, body, &opening_rim))
            .map(|(k, _)| k)
            .collect();
        if violators.is_empty() {
            break;
        }
        if attempt >= sp.max_redrops {
            return Err(Error::TaskInfeasible(format!(
                "{} object(s) still entirely inside the opening after {} re-drops",
                violators.len(),
                sp.max_redrops
            )));
        }
        for k in violators {
            redrops += 1;
            let mut rng = derived_rng(task.seed, 1 + (k * 64 + attempt) as u64);
            if k < rigids.len() {
                let rigid = &rigids[k];
                let footprint = task.rigids[k].footprint_radius();
                let others: Vec<(f64, f64, f64)> = Vec::new();
                let (x, y) = sample_rigid_position(
                    &mut rng,
                    footprint,
                    bag.bottom_radius,
                    &others,
                    half,
                );
                place_rigid(&mut world, rigid, x, y);
            } else {
                let cloth = &cloths[k - rigids.len()];
                let drop = sample_cloth_drop(&mut rng);
                drop_cloth(&mut world, cloth, &drop, sp.drop_lift)?;
            }
        }
        world.settle(sp.scene_settle_time)?;
    }

    Ok(Scene {
        task: task.clone(),
        world,
        bag,
        cloths,
        rigids,
        opening_rim,
        redrops,
    })
}

/// Angle wrapped into `[-PI, PI)`.
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}
