//! Benchmark configuration, loadable from a TOML file. Every field has a
//! default, so a config file only needs to list what it overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::SolverParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    /// Particles per cloth side, independent of the cloth's physical size.
    pub cloth_resolution: usize,
    /// Particles around the bag rim.
    pub bag_segments: usize,
    /// Concentric particle rings in the bag bottom.
    pub bag_rings: usize,
    /// Wall height as a fraction of the bag dimension (opening diameter).
    pub wall_height_ratio: f64,
    /// Pull of the bag towards its rest shape per solver iteration; keeps
    /// the walls from folding flat. 0 disables it.
    pub bag_shape_stiffness: f64,
    pub deformable_particle_mass: f64,
    pub rigid_particle_mass: f64,
    pub cloth_bending_stiffness: f64,
    /// Side of the square workspace centered on the bag, in meters.
    pub workspace_size: f64,
    /// Height the grasped cloth particle is raised to during pick-and-drop.
    pub drop_lift: f64,
    pub max_redrops: usize,
    pub bag_settle_time: f64,
    pub scene_settle_time: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            cloth_resolution: 15,
            bag_segments: 40,
            bag_rings: 6,
            wall_height_ratio: 0.6,
            bag_shape_stiffness: 0.05,
            deformable_particle_mass: 0.01,
            rigid_particle_mass: 0.03,
            cloth_bending_stiffness: 0.05,
            workspace_size: 1.0,
            drop_lift: 0.25,
            max_redrops: 10,
            bag_settle_time: 1.0,
            scene_settle_time: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrimitiveParams {
    pub grasp_radius: f64,
    /// A particle whose lowest point is closer than this to the ground is
    /// touching it.
    pub ground_epsilon: f64,
    pub raise_height: f64,
    pub place_height: f64,
    pub move_speed: f64,
    pub rearrange_settle_time: f64,
    pub lift_height: f64,
    pub lift_duration: f64,
    pub shake_amplitude: f64,
    pub shake_frequency: f64,
    pub shake_duration: f64,
    pub lift_settle_time: f64,
    /// Lift point separation bounds in meters.
    pub lift_min_separation: f64,
    pub lift_max_separation: f64,
}

impl Default for PrimitiveParams {
    fn default() -> Self {
        PrimitiveParams {
            grasp_radius: 0.03,
            ground_epsilon: 0.005,
            raise_height: 0.4,
            place_height: 0.05,
            move_speed: 1.0,
            rearrange_settle_time: 1.5,
            lift_height: 0.6,
            lift_duration: 1.5,
            shake_amplitude: 0.05,
            shake_frequency: 2.0,
            shake_duration: 2.0,
            lift_settle_time: 1.0,
            lift_min_separation: 0.10,
            lift_max_separation: 0.45,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    /// Lift score above which rearrangement stops. 0.5 was used on hardware.
    pub lift_threshold: f64,
    pub max_rearrange_steps: usize,
    /// Place displacement in pixels for scale factor 1.
    pub base_displacement_px: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            lift_threshold: 0.95,
            max_rearrange_steps: 10,
            base_displacement_px: 40.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub solver: SolverParams,
    pub scene: SceneParams,
    pub primitives: PrimitiveParams,
    pub policy: PolicyParams,
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = BenchConfig::from_toml("[solver]\niterations = 7\n[policy]\nlift_threshold = 0.5\n")
            .unwrap();
        assert_eq!(cfg.solver.iterations, 7);
        assert_eq!(cfg.solver.substeps, SolverParams::default().substeps);
        assert_eq!(cfg.policy.lift_threshold, 0.5);
        assert_eq!(cfg.scene, SceneParams::default());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = BenchConfig::default();
        assert_eq!(BenchConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
