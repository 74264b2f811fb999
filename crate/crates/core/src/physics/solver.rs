use nalgebra::Matrix3;

use super::{best_rotation, BodyKind, DistanceConstraint, SpatialHash, Vec3, World};
use crate::error::{Error, Result};

struct Contact {
    i: u32,
    j: u32,
    rest: f64,
}

/// Scratch state for one step; particles are copied out into flat arrays so
/// the projection loops stay cache friendly.
struct Scratch {
    x: Vec<Vec3>,
    v: Vec<Vec3>,
    p: Vec<Vec3>,
    w: Vec<f64>,
    r: Vec<f64>,
    clustered: Vec<bool>,
    /// (particle, target at step start, target at step end)
    pinned: Vec<(usize, Vec3, Vec3)>,
    contacts: Vec<Contact>,
    grids: Vec<SpatialHash>,
    bounds: Vec<(Vec3, Vec3)>,
}

pub(super) fn step(world: &mut World, dt: f64) -> Result<()> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("step dt must be positive, got {dt}")));
    }
    let params = world.params.clone();
    let substeps = params.substeps.max(1);
    let h = dt / f64::from(substeps);
    let gravity = Vec3::from(params.gravity);

    let mut s = Scratch {
        x: world.particles.iter().map(|p| p.position).collect(),
        v: world.particles.iter().map(|p| p.velocity).collect(),
        p: Vec::with_capacity(world.particles.len()),
        w: world.particles.iter().map(|p| p.inverse_mass).collect(),
        r: world.particles.iter().map(|p| p.radius).collect(),
        clustered: vec![false; world.particles.len()],
        pinned: world
            .attachments
            .iter()
            .filter(|a| a.active)
            .map(|a| (a.particle, a.previous_target, a.target))
            .collect(),
        contacts: Vec::new(),
        grids: vec![SpatialHash::default(); world.bodies.len()],
        bounds: Vec::with_capacity(world.bodies.len()),
    };
    for &(i, _, _) in &s.pinned {
        s.w[i] = 0.0;
    }
    for cluster in world.clusters.iter().filter(|c| c.is_rigid()) {
        for &i in &cluster.particles {
            s.clustered[i] = true;
        }
    }
    let max_radius = s.r.iter().copied().fold(0.0, f64::max);

    for sub in 0..substeps {
        apply_damping(world, &mut s, params.damping);

        s.p.clear();
        for i in 0..s.x.len() {
            if s.w[i] > 0.0 {
                s.v[i] += gravity * h;
            }
            let predicted = s.x[i] + s.v[i] * h;
            s.p.push(predicted);
        }
        let frac = f64::from(sub + 1) / f64::from(substeps);
        for &(i, from, to) in &s.pinned {
            s.p[i] = from + (to - from) * frac;
        }

        find_contacts(world, &mut s, 2.0 * max_radius + params.collision_margin, params.collision_margin);

        for _ in 0..params.iterations {
            project_distances(&world.distance, &mut s);
            project_distances(&world.bending, &mut s);
            project_contacts(&mut s, params.friction);
            project_ground(&mut s, params.ground_height, params.friction);
            project_clusters(world, &mut s);
        }
        resolve_ground_residual(world, &mut s, params.ground_height);

        for i in 0..s.x.len() {
            s.v[i] = (s.p[i] - s.x[i]) / h;
            s.x[i] = s.p[i];
        }
        for &(i, from, to) in &s.pinned {
            s.v[i] = (to - from) / dt;
        }
    }

    for (i, particle) in world.particles.iter_mut().enumerate() {
        if !(s.x[i].iter().all(|c| c.is_finite()) && s.v[i].iter().all(|c| c.is_finite())) {
            return Err(Error::Diverged { particle: i });
        }
        particle.position = s.x[i];
        particle.velocity = s.v[i];
    }
    for cluster in &mut world.clusters {
        let (rotation, centroid) = fit_cluster(&cluster.particles, &cluster.rest_offsets, &s.x);
        cluster.rotation = rotation;
        cluster.centroid = centroid;
    }
    for a in &mut world.attachments {
        a.previous_target = a.target;
    }
    world.time += dt;
    Ok(())
}

fn apply_damping(world: &World, s: &mut Scratch, damping: f64) {
    if damping <= 0.0 {
        return;
    }
    for body in &world.bodies {
        if body.kind == BodyKind::Rigid {
            continue;
        }
        let mut momentum = Vec3::zeros();
        let mut mass = 0.0;
        for i in body.particles.clone() {
            if s.w[i] > 0.0 {
                momentum += s.v[i] / s.w[i];
                mass += 1.0 / s.w[i];
            }
        }
        if mass == 0.0 {
            continue;
        }
        let mean = momentum / mass;
        for i in body.particles.clone() {
            if s.w[i] > 0.0 {
                let v = s.v[i];
                s.v[i] = v + (mean - v) * damping;
            }
        }
    }
}

/// Broad phase: one hash grid per body, queried only where two bodies'
/// bounding boxes overlap, so particles never scan their own body.
fn find_contacts(world: &World, s: &mut Scratch, cell: f64, margin: f64) {
    s.contacts.clear();
    if world.bodies.len() < 2 {
        return;
    }
    s.bounds.clear();
    for (body, grid) in world.bodies.iter().zip(s.grids.iter_mut()) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for i in body.particles.clone() {
            let r = Vec3::repeat(s.r[i]);
            lo = lo.inf(&(s.p[i] - r));
            hi = hi.sup(&(s.p[i] + r));
        }
        s.bounds.push((lo, hi));
        grid.build(body.particles.clone().map(|i| (i as u32, s.p[i])), cell);
    }
    let overlaps = |a: &(Vec3, Vec3), b: &(Vec3, Vec3), pad: f64| {
        (0..3).all(|k| a.0[k] <= b.1[k] + pad && b.0[k] <= a.1[k] + pad)
    };
    for a in 0..world.bodies.len() {
        for b in a + 1..world.bodies.len() {
            if !overlaps(&s.bounds[a], &s.bounds[b], margin) {
                continue;
            }
            let (query, target) = if world.bodies[a].particles.len() <= world.bodies[b].particles.len() {
                (a, b)
            } else {
                (b, a)
            };
            let target_bounds = s.bounds[target];
            for i in world.bodies[query].particles.clone() {
                let pad = s.r[i] + margin;
                let own = (s.p[i], s.p[i]);
                if !overlaps(&own, &target_bounds, pad) {
                    continue;
                }
                let (p, r, contacts) = (&s.p, &s.r, &mut s.contacts);
                s.grids[target].for_each_near(&p[i], |j| {
                    let j = j as usize;
                    let rest = r[i] + r[j];
                    let reach = rest + margin;
                    if (p[i] - p[j]).norm_squared() < reach * reach {
                        contacts.push(Contact {
                            i: i.min(j) as u32,
                            j: i.max(j) as u32,
                            rest,
                        });
                    }
                });
            }
        }
    }
}

fn project_distances(constraints: &[DistanceConstraint], s: &mut Scratch) {
    for c in constraints {
        let (a, b) = (c.particle_a as usize, c.particle_b as usize);
        let (wa, wb) = (s.w[a], s.w[b]);
        let wsum = wa + wb;
        if wsum == 0.0 {
            continue;
        }
        let d = s.p[a] - s.p[b];
        let len = d.norm();
        if len < 1e-12 {
            continue;
        }
        let corr = d * (c.stiffness * (len - c.rest_length) / (len * wsum));
        s.p[a] -= corr * wa;
        s.p[b] += corr * wb;
    }
}

fn project_contacts(s: &mut Scratch, friction: f64) {
    for c in &s.contacts {
        let (i, j) = (c.i as usize, c.j as usize);
        let (wi, wj) = (s.w[i], s.w[j]);
        let wsum = wi + wj;
        if wsum == 0.0 {
            continue;
        }
        let d = s.p[i] - s.p[j];
        let dist2 = d.norm_squared();
        if dist2 >= c.rest * c.rest {
            continue;
        }
        let dist = dist2.sqrt();
        let n = if dist > 1e-12 { d / dist } else { Vec3::z() };
        let penetration = c.rest - dist;
        let push = n * (penetration / wsum);
        s.p[i] += push * wi;
        s.p[j] -= push * wj;

        let rel = (s.p[i] - s.x[i]) - (s.p[j] - s.x[j]);
        let tangential = rel - n * rel.dot(&n);
        let t = tangential.norm();
        if t > 0.0 {
            let limit = friction * penetration;
            let removed = if t < limit { tangential } else { tangential * (limit / t) };
            s.p[i] -= removed * (wi / wsum);
            s.p[j] += removed * (wj / wsum);
        }
    }
}

fn project_ground(s: &mut Scratch, ground: f64, friction: f64) {
    for i in 0..s.p.len() {
        if s.w[i] == 0.0 {
            continue;
        }
        let floor = ground + s.r[i];
        let penetration = floor - s.p[i].z;
        if penetration <= 0.0 {
            continue;
        }
        s.p[i].z = floor;
        let dx = s.p[i].x - s.x[i].x;
        let dy = s.p[i].y - s.x[i].y;
        let t = dx.hypot(dy);
        if t > 0.0 {
            let limit = friction * penetration;
            let keep = if t < limit { 0.0 } else { 1.0 - limit / t };
            s.p[i].x = s.x[i].x + dx * keep;
            s.p[i].y = s.x[i].y + dy * keep;
        }
    }
}

fn fit_cluster(indices: &[usize], rest: &[Vec3], positions: &[Vec3]) -> (Matrix3<f64>, Vec3) {
    let n = indices.len() as f64;
    let centroid = indices.iter().map(|&i| positions[i]).sum::<Vec3>() / n;
    let mut a = Matrix3::zeros();
    for (&i, q) in indices.iter().zip(rest) {
        a += (positions[i] - centroid) * q.transpose();
    }
    (best_rotation(&a), centroid)
}

fn project_clusters(world: &World, s: &mut Scratch) {
    for cluster in &world.clusters {
        let (rotation, centroid) = fit_cluster(&cluster.particles, &cluster.rest_offsets, &s.p);
        if !cluster.is_rigid() {
            for (&i, q) in cluster.particles.iter().zip(&cluster.rest_offsets) {
                if s.w[i] > 0.0 {
                    let pull = (centroid + rotation * q - s.p[i]) * cluster.stiffness;
                    s.p[i] += pull;
                }
            }
            continue;
        }
        let mut offset = Vec3::zeros();
        let mut pinned = 0usize;
        for (&i, q) in cluster.particles.iter().zip(&cluster.rest_offsets) {
            if s.w[i] == 0.0 {
                offset += s.p[i] - (centroid + rotation * q);
                pinned += 1;
            }
        }
        if pinned > 0 {
            offset /= pinned as f64;
        }
        for (&i, q) in cluster.particles.iter().zip(&cluster.rest_offsets) {
            if s.w[i] > 0.0 {
                s.p[i] = centroid + rotation * q + offset;
            }
        }
    }
}

/// Final non-penetration pass: rigid clusters are lifted as a whole so their
/// shape is untouched, everything else is clamped per particle.
fn resolve_ground_residual(world: &World, s: &mut Scratch, ground: f64) {
    for cluster in world.clusters.iter().filter(|c| c.is_rigid()) {
        let lowest = cluster
            .particles
            .iter()
            .filter(|&&i| s.w[i] > 0.0)
            .map(|&i| s.p[i].z - s.r[i] - ground)
            .fold(0.0, f64::min);
        if lowest < 0.0 {
            for &i in &cluster.particles {
                if s.w[i] > 0.0 {
                    s.p[i].z -= lowest;
                }
            }
        }
    }
    for i in 0..s.p.len() {
        if s.w[i] > 0.0 && !s.clustered[i] {
            s.p[i].z = s.p[i].z.max(ground + s.r[i]);
        }
    }
}
