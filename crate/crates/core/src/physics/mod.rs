//! Position-based particle dynamics.
//!
//! Every object in a scene (bag, cloths, rigid primitives) is a set of
//! particles. Deformables are held together by distance and bending
//! constraints, rigid objects by shape matching. Bodies collide with each
//! other through particle-particle separation constraints and with the
//! ground plane at `z = ground_height`.

mod grid;
mod shape_match;
mod solver;

use std::ops::Range;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::color::Hsv;
use crate::error::{Error, Result};

pub use grid::SpatialHash;
pub use shape_match::best_rotation;

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BodyKind {
    Bag,
    Cloth,
    Rigid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BodyId(pub u32);

impl BodyId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub id: BodyId,
    pub kind: BodyKind,
    pub color: Hsv,
    /// Particles of a body are stored contiguously.
    pub particles: Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub position: Vec3,
    pub velocity: Vec3,
    pub inverse_mass: f64,
    pub radius: f64,
    pub body_id: BodyId,
    pub body_kind: BodyKind,
}

impl Particle {
    pub fn mass(&self) -> f64 {
        if self.inverse_mass > 0.0 {
            1.0 / self.inverse_mass
        } else {
            0.0
        }
    }
}

/// Keeps two particles at `rest_length`. Bending constraints use the same
/// form across second-ring neighbours.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceConstraint {
    pub particle_a: u32,
    pub particle_b: u32,
    pub rest_length: f64,
    pub stiffness: f64,
}

impl DistanceConstraint {
    pub fn new(a: usize, b: usize, rest_length: f64, stiffness: f64) -> Self {
        debug_assert!(a != b && rest_length > 0.0 && stiffness > 0.0 && stiffness <= 1.0);
        DistanceConstraint {
            particle_a: a as u32,
            particle_b: b as u32,
            rest_length,
            stiffness,
        }
    }

    pub fn residual(&self, particles: &[Particle]) -> f64 {
        let a = &particles[self.particle_a as usize];
        let b = &particles[self.particle_b as usize];
        (a.position - b.position).norm() - self.rest_length
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidCluster {
    pub particles: Vec<usize>,
    /// Rest positions relative to the rest centroid.
    pub rest_offsets: Vec<Vec3>,
    pub rotation: Matrix3<f64>,
    pub centroid: Vec3,
    /// Fraction of the way to the fitted rest shape each particle is moved
    /// per iteration. 1 is a rigid body.
    pub stiffness: f64,
}

impl RigidCluster {
    pub fn from_positions(particles: Vec<usize>, positions: &[Vec3]) -> Self {
        Self::soft(particles, positions, 1.0)
    }

    pub fn soft(particles: Vec<usize>, positions: &[Vec3], stiffness: f64) -> Self {
        let centroid = positions.iter().sum::<Vec3>() / positions.len() as f64;
        RigidCluster {
            particles,
            rest_offsets: positions.iter().map(|p| p - centroid).collect(),
            rotation: Matrix3::identity(),
            centroid,
            stiffness,
        }
    }

    pub fn is_rigid(&self) -> bool {
        self.stiffness >= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attachment {
    pub particle: usize,
    pub target: Vec3,
    /// Target at the start of the current step; the pinned particle is
    /// swept linearly from here to `target` across substeps.
    previous_target: Vec3,
    pub active: bool,
}

impl Attachment {
    fn velocity(&self, dt: f64) -> Vec3 {
        (self.target - self.previous_target) / dt
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub gravity: [f64; 3],
    pub ground_height: f64,
    pub dt: f64,
    pub substeps: u32,
    pub iterations: u32,
    pub friction: f64,
    /// Fraction of each particle's velocity deviation from its body's mean
    /// velocity removed per substep. Preserves linear momentum.
    pub damping: f64,
    pub contact_tolerance: f64,
    pub energy_epsilon: f64,
    /// Extra distance added to the broad-phase query radius.
    pub collision_margin: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            gravity: [0.0, 0.0, -9.81],
            ground_height: 0.0,
            dt: 0.01,
            substeps: 2,
            iterations: 5,
            friction: 0.4,
            damping: 0.05,
            contact_tolerance: 1e-3,
            energy_epsilon: 1e-6,
            collision_margin: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SettleOutcome {
    pub reached_equilibrium: bool,
    pub steps: usize,
}

#[derive(Clone, Debug, Default)]
pub struct World {
    pub particles: Vec<Particle>,
    pub bodies: Vec<Body>,
    pub distance: Vec<DistanceConstraint>,
    pub bending: Vec<DistanceConstraint>,
    pub clusters: Vec<RigidCluster>,
    pub attachments: Vec<Attachment>,
    pub params: SolverParams,
    pub time: f64,
}

impl World {
    pub fn new(params: SolverParams) -> Self {
        World {
            params,
            ..Default::default()
        }
    }

    /// Appends a body made of `particles` (positions, radius) with uniform
    /// `inverse_mass`. Returns the new body id.
    pub fn add_body(
        &mut self,
        kind: BodyKind,
        color: Hsv,
        positions: &[Vec3],
        radius: f64,
        inverse_mass: f64,
    ) -> BodyId {
        assert!(radius > 0.0 && inverse_mass >= 0.0);
        let id = BodyId(self.bodies.len() as u32);
        let start = self.particles.len();
        self.particles.extend(positions.iter().map(|&position| Particle {
            position,
            velocity: Vec3::zeros(),
            inverse_mass,
            radius,
            body_id: id,
            body_kind: kind,
        }));
        self.bodies.push(Body {
            id,
            kind,
            color,
            particles: start..self.particles.len(),
        });
        id
    }

    pub fn body(&self, id: BodyId) -> &Body {
        &self.bodies[id.index()]
    }

    pub fn body_positions(&self, id: BodyId) -> impl Iterator<Item = &Vec3> + '_ {
        self.particles[self.body(id).particles.clone()]
            .iter()
            .map(|p| &p.position)
    }

    pub fn body_centroid(&self, id: BodyId) -> Vec3 {
        let range = self.body(id).particles.clone();
        let n = range.len() as f64;
        self.particles[range].iter().map(|p| p.position).sum::<Vec3>() / n
    }

    /// Rigidly translates a body and zeroes its velocity.
    pub fn translate_body(&mut self, id: BodyId, offset: Vec3) {
        let range = self.body(id).particles.clone();
        for p in &mut self.particles[range] {
            p.position += offset;
            p.velocity = Vec3::zeros();
        }
        for cluster in &mut self.clusters {
            if cluster
                .particles
                .first()
                .is_some_and(|&i| self.particles[i].body_id == id)
            {
                cluster.centroid += offset;
            }
        }
    }

    pub fn is_attached(&self, particle: usize) -> bool {
        self.attachments
            .iter()
            .any(|a| a.active && a.particle == particle)
    }

    /// Pins a particle at its current position. Move it with
    /// [`World::set_attachment_target`].
    pub fn attach(&mut self, particle: usize) -> Result<()> {
        let p = self
            .particles
            .get(particle)
            .ok_or(Error::InvalidParticle(particle))?;
        if self.is_attached(particle) {
            return Err(Error::AlreadyAttached(particle));
        }
        let position = p.position;
        self.attachments.push(Attachment {
            particle,
            target: position,
            previous_target: position,
            active: true,
        });
        Ok(())
    }

    /// Releases a particle; it keeps the velocity its target had during the
    /// last step.
    pub fn detach(&mut self, particle: usize) -> Result<()> {
        if particle >= self.particles.len() {
            return Err(Error::InvalidParticle(particle));
        }
        let slot = self
            .attachments
            .iter()
            .position(|a| a.active && a.particle == particle)
            .ok_or(Error::NotAttached(particle))?;
        let attachment = self.attachments.remove(slot);
        self.particles[particle].velocity = attachment.velocity(self.params.dt);
        Ok(())
    }

    pub fn detach_all(&mut self) {
        let pinned: Vec<usize> = self.attachments.iter().map(|a| a.particle).collect();
        for particle in pinned {
            // Cannot fail: every listed particle is attached and in range.
            let _ = self.detach(particle);
        }
    }

    pub fn set_attachment_target(&mut self, particle: usize, target: Vec3) -> Result<()> {
        let attachment = self
            .attachments
            .iter_mut()
            .find(|a| a.active && a.particle == particle)
            .ok_or(Error::NotAttached(particle))?;
        attachment.target = target;
        Ok(())
    }

    pub fn attachment_target(&self, particle: usize) -> Option<Vec3> {
        self.attachments
            .iter()
            .find(|a| a.active && a.particle == particle)
            .map(|a| a.target)
    }

    /// Index of the nearest particle within `radius` of `point`, optionally
    /// restricted to one body kind. Ties go to the lowest index.
    pub fn nearest_particle(
        &self,
        point: Vec3,
        radius: f64,
        kind_filter: Option<BodyKind>,
    ) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.particles.iter().enumerate() {
            if kind_filter.is_some_and(|k| k != p.body_kind) {
                continue;
            }
            let d = (p.position - point).norm_squared();
            if d <= radius * radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        solver::step(self, dt)
    }

    /// Steps at the configured `dt` until every particle's kinetic energy is
    /// below `energy_epsilon`, or `max_time` has elapsed.
    pub fn settle(&mut self, max_time: f64) -> Result<SettleOutcome> {
        let dt = self.params.dt;
        let max_steps = (max_time / dt).ceil().max(1.0) as usize;
        for steps in 1..=max_steps {
            self.step(dt)?;
            if self.max_kinetic_energy() < self.params.energy_epsilon {
                return Ok(SettleOutcome {
                    reached_equilibrium: true,
                    steps,
                });
            }
        }
        Ok(SettleOutcome {
            reached_equilibrium: false,
            steps: max_steps,
        })
    }

    pub fn max_kinetic_energy(&self) -> f64 {
        self.particles
            .iter()
            .map(|p| 0.5 * p.mass() * p.velocity.norm_squared())
            .fold(0.0, f64::max)
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.particles
            .iter()
            .map(|p| p.velocity * p.mass())
            .sum()
    }

    /// Order-sensitive FNV-1a hash of particle positions quantized to 1e-7 m.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.particles {
            for c in p.position.iter() {
                let q = (c * 1e7).round() as i64;
                for byte in q.to_le_bytes() {
                    hash ^= u64::from(byte);
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        hash
    }

    /// Lowest point of a particle, i.e. its center height minus its radius,
    /// measured from the ground.
    pub fn clearance(&self, particle: usize) -> f64 {
        let p = &self.particles[particle];
        p.position.z - p.radius - self.params.ground_height
    }
}
