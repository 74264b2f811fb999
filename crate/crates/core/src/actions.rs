//! Manipulation primitives: suction pick-and-place, the two-handed bag lift
//! with a shake, and the lift success check.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::config::PrimitiveParams;
use crate::error::Result;
use crate::physics::{BodyId, BodyKind, Vec3, World};
use crate::render::{Camera, Observation, Pixel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RearrangeAction {
    pub pick_pixel: Pixel,
    pub place_pixel: Pixel,
    /// Place direction in the world frame, 0 along +x (increasing column).
    pub theta: f64,
    pub scale_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftAction {
    pub lift_pixel: Pixel,
    /// Direction of the lift line in the world frame.
    pub theta: f64,
    pub l1: Pixel,
    pub l2: Pixel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RearrangeOutcome {
    pub grasped_body: Option<BodyId>,
    pub grasped_kind: Option<BodyKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftOutcome {
    pub success: bool,
    /// One flag per object body, in the order given to [`execute_lift`].
    pub per_object_inside: Vec<bool>,
    /// Bodies held by the two grippers, when both grasps succeeded.
    pub grasped: Option<[BodyId; 2]>,
}

impl LiftOutcome {
    pub fn fraction_inside(&self) -> f64 {
        if self.per_object_inside.is_empty() {
            return 1.0;
        }
        let n = self.per_object_inside.iter().filter(|&&b| b).count();
        n as f64 / self.per_object_inside.len() as f64
    }
}

/// Surface point seen at `pixel`, using the rendered depth.
pub fn depth_project(obs: &Observation, camera: &Camera, pixel: Pixel) -> Vec3 {
    let [x, y] = camera.to_world(pixel.0, pixel.1);
    let depth = f64::from(obs.depth[obs.index(pixel.0, pixel.1)]);
    Vec3::new(x, y, camera.height - depth)
}

/// Particle whose surface is nearest to `point`, within `radius`.
fn nearest_where(world: &World, point: Vec3, radius: f64, keep: impl Fn(BodyKind) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in world.particles.iter().enumerate() {
        if !keep(p.body_kind) {
            continue;
        }
        let d = ((p.position - point).norm() - p.radius).max(0.0);
        if d <= radius && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Moves every attached particle from its current target along straight
/// lines to `goals`, at `speed` m/s.
fn move_grasps(world: &mut World, grasps: &[usize], goals: &[Vec3], speed: f64) -> Result<()> {
    let dt = world.params.dt;
    let starts: Vec<Vec3> = grasps
        .iter()
        .map(|&g| world.attachment_target(g).unwrap_or(world.particles[g].position))
        .collect();
    let distance = starts
        .iter()
        .zip(goals)
        .map(|(a, b)| (b - a).norm())
        .fold(0.0, f64::max);
    let steps = (distance / (speed * dt)).ceil().max(1.0) as usize;
    for s in 1..=steps {
        let f = s as f64 / steps as f64;
        for ((&g, a), b) in grasps.iter().zip(&starts).zip(goals) {
            world.set_attachment_target(g, a + (b - a) * f)?;
        }
        world.step(dt)?;
    }
    Ok(())
}

fn clamp_to_workspace(p: Vec3, half: f64) -> Vec3 {
    Vec3::new(p.x.clamp(-half, half), p.y.clamp(-half, half), p.z)
}

/// Suction pick-and-place. The pick pixel is projected onto the visible
/// surface and the nearest particle within the grasp radius is taken, bag
/// particles only when nothing else is in reach. The grasp is raised,
/// carried to the place pixel, lowered, released, and the scene settles.
pub fn execute_rearrange(
    world: &mut World,
    action: &RearrangeAction,
    obs: &Observation,
    camera: &Camera,
    params: &PrimitiveParams,
) -> Result<RearrangeOutcome> {
    let pick = depth_project(obs, camera, action.pick_pixel);
    let grasp = nearest_where(world, pick, params.grasp_radius, |k| k != BodyKind::Bag)
        .or_else(|| nearest_where(world, pick, params.grasp_radius, |k| k == BodyKind::Bag));
    let Some(grasp) = grasp else {
        world.settle(params.rearrange_settle_time)?;
        return Ok(RearrangeOutcome {
            grasped_body: None,
            grasped_kind: None,
        });
    };
    let body = world.particles[grasp].body_id;
    let kind = world.particles[grasp].body_kind;
    let half = camera.size as f64 * camera.pixel_scale / 2.0;

    world.attach(grasp)?;
    let start = world.particles[grasp].position;
    let travel_z = start.z + params.raise_height;
    move_grasps(world, &[grasp], &[start + Vec3::z() * params.raise_height], params.move_speed)?;

    let place = depth_project(obs, camera, action.place_pixel);
    let above = clamp_to_workspace(Vec3::new(place.x, place.y, travel_z), half);
    move_grasps(world, &[grasp], &[above], params.move_speed)?;

    // Lower until the grasp is `place_height` above the surface under the
    // place point, or until the carried body would reach that surface.
    let bottom = world.particles[world.body(body).particles.clone()]
        .iter()
        .map(|p| p.position.z - p.radius)
        .fold(f64::INFINITY, f64::min);
    let descent = (travel_z - (place.z + params.place_height))
        .min(bottom - place.z)
        .max(0.0);
    move_grasps(world, &[grasp], &[above - Vec3::z() * descent], params.move_speed)?;

    world.detach(grasp)?;
    world.settle(params.rearrange_settle_time)?;
    Ok(RearrangeOutcome {
        grasped_body: Some(body),
        grasped_kind: Some(kind),
    })
}

/// Height above the ground below which an object counts as touching it.
/// Bag and cloth sheets are a single layer of particles, far thicker than
/// real fabric, so an object resting on a sheet that lies flat on the
/// ground sits one particle diameter up. That layer is counted as surface.
pub fn contact_tolerance(world: &World, ground_epsilon: f64) -> f64 {
    let sheet = world
        .bodies
        .iter()
        .filter(|b| b.kind != BodyKind::Rigid)
        .flat_map(|b| world.particles[b.particles.clone()].iter().map(|p| p.radius))
        .fold(0.0, f64::max);
    ground_epsilon + 2.0 * sheet
}

/// An object is inside when none of its particles comes within
/// `tolerance` of the ground.
pub fn object_inside(world: &World, body: BodyId, tolerance: f64) -> bool {
    world
        .body(body)
        .particles
        .clone()
        .all(|i| world.clearance(i) >= tolerance)
}

/// Two-handed lift: both lift points are grasped (any body), raised to the
/// lift height, shaken vertically and held while the scene settles. Success
/// means no object touches the ground.
pub fn execute_lift(
    world: &mut World,
    action: &LiftAction,
    obs: &Observation,
    camera: &Camera,
    objects: &[BodyId],
    params: &PrimitiveParams,
) -> Result<LiftOutcome> {
    let p1 = depth_project(obs, camera, action.l1);
    let p2 = depth_project(obs, camera, action.l2);
    let g1 = nearest_where(world, p1, params.grasp_radius, |_| true);
    let g2 = nearest_where(world, p2, params.grasp_radius, |_| true);
    let (g1, g2) = match (g1, g2) {
        (Some(a), Some(b)) if a != b => (a, b),
        _ => {
            return Ok(LiftOutcome {
                success: false,
                per_object_inside: vec![false; objects.len()],
                grasped: None,
            })
        }
    };
    let grasps = [g1, g2];
    world.attach(g1)?;
    world.attach(g2)?;

    let dt = world.params.dt;
    let starts = [world.particles[g1].position, world.particles[g2].position];
    let raise_steps = (params.lift_duration / dt).ceil().max(1.0) as usize;
    for s in 1..=raise_steps {
        let f = s as f64 / raise_steps as f64;
        for (g, a) in grasps.iter().zip(&starts) {
            let z = a.z + (params.lift_height - a.z) * f;
            world.set_attachment_target(*g, Vec3::new(a.x, a.y, z))?;
        }
        world.step(dt)?;
    }

    let shake_steps = (params.shake_duration / dt).round() as usize;
    for s in 1..=shake_steps {
        let t = s as f64 * dt;
        let z = params.lift_height + params.shake_amplitude * (TAU * params.shake_frequency * t).sin();
        for (g, a) in grasps.iter().zip(&starts) {
            world.set_attachment_target(*g, Vec3::new(a.x, a.y, z))?;
        }
        world.step(dt)?;
    }
    for (g, a) in grasps.iter().zip(&starts) {
        world.set_attachment_target(*g, Vec3::new(a.x, a.y, params.lift_height))?;
    }
    world.settle(params.lift_settle_time)?;

    let tolerance = contact_tolerance(world, params.ground_epsilon);
    let per_object_inside: Vec<bool> = objects
        .iter()
        .map(|&b| object_inside(world, b, tolerance))
        .collect();
    Ok(LiftOutcome {
        success: per_object_inside.iter().all(|&b| b),
        per_object_inside,
        grasped: Some([world.particles[g1].body_id, world.particles[g2].body_id]),
    })
}
