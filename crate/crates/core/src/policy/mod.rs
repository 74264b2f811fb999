//! Spatial action map policy: transform batches, value functions, action
//! decoding, rewards, heuristics and the fused rearrange-or-lift decision.

pub mod decode;
pub mod heuristic;
pub mod reward;
pub mod transform;
pub mod value;

use serde::{Deserialize, Serialize};

use crate::actions::{LiftAction, RearrangeAction};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::render::Observation;

pub use decode::{decode_lift, decode_rearrange, encode_pick, LiftLimits};
pub use heuristic::{heuristic_lift, heuristic_rearrange, max_width_lift};
pub use reward::{outside_volume, rearrange_reward, volume_reward, BAG_PICK_PENALTY};
pub use transform::{make_transform_batch, Mode, SliceParams, TransformBatch};
pub use value::{
    ConstantVf, HeuristicLiftVf, HeuristicRearrangeVf, RandomVf, ValueFunction, ValueMapBatch,
    VfContext, VfSpec,
};

/// How many of the highest lift values are decoded when looking for a
/// feasible lift pair.
pub const LIFT_CANDIDATES: usize = 4096;

/// What the policy sees at one step.
#[derive(Clone, Copy, Debug)]
pub struct PolicyInputs<'a> {
    pub obs: &'a Observation,
    pub boundary: &'a Mask,
    /// Pixels whose topmost body is an object.
    pub objects: &'a Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredLift {
    pub action: LiftAction,
    pub score: f64,
    /// Batch slice the action came from; `None` for the fallback pair.
    pub slice: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    Lift(ScoredLift),
    Rearrange {
        action: RearrangeAction,
        slice: usize,
        value: f64,
    },
    LiftAtBest(ScoredLift),
}

#[derive(Clone, Debug, Default)]
pub struct EpisodeState {
    /// Rearrangements executed so far.
    pub step: usize,
    pub best_lift: Option<ScoredLift>,
    /// Seed for the fallback lift pair.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusedParams {
    pub lift_threshold: f64,
    pub max_rearrange_steps: usize,
    pub base_displacement_px: f64,
    pub limits: LiftLimits,
}

impl FusedParams {
    pub fn from_config(config: &crate::BenchConfig) -> Self {
        FusedParams {
            lift_threshold: config.policy.lift_threshold,
            max_rearrange_steps: config.policy.max_rearrange_steps,
            base_displacement_px: config.policy.base_displacement_px,
            limits: LiftLimits {
                pixel_scale: config.scene.workspace_size / crate::render::IMAGE_SIZE as f64,
                min_separation: config.primitives.lift_min_separation,
                max_separation: config.primitives.lift_max_separation,
            },
        }
    }
}

/// Highest-valued feasible lift among the top [`LIFT_CANDIDATES`] values;
/// ties go to the lowest index.
pub fn best_lift(
    batch: &TransformBatch,
    maps: &ValueMapBatch,
    boundary: &Mask,
    objects: &Mask,
    limits: &LiftLimits,
) -> Option<ScoredLift> {
    let mut order: Vec<(f32, usize)> = maps.values.iter().copied().zip(0..).collect();
    let by_rank = |a: &(f32, usize), b: &(f32, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if order.len() > LIFT_CANDIDATES {
        order.select_nth_unstable_by(LIFT_CANDIDATES, by_rank);
        order.truncate(LIFT_CANDIDATES);
    }
    order.sort_unstable_by(by_rank);
    order.into_iter().find_map(|(value, index)| {
        let (slice, row, col) = maps.unravel(index);
        decode_lift(&batch.slices[slice], batch.size, (row, col), boundary, objects, limits).map(
            |action| ScoredLift {
                action,
                score: f64::from(value),
                slice: Some(slice),
            },
        )
    })
}

/// Lift used when the value maps offer no feasible pair: a random boundary
/// pair, or the widest opening span. It carries the lowest finite score.
pub fn fallback_lift(boundary: &Mask, filled: &Mask, limits: &LiftLimits, seed: u64) -> Result<ScoredLift> {
    let action = heuristic_lift(boundary, limits, seed).or_else(|_| max_width_lift(filled))?;
    Ok(ScoredLift {
        action,
        score: f64::MIN,
        slice: None,
    })
}

/// One fused decision. The lift maps are scored first; a feasible lift
/// above the threshold ends the episode. Otherwise the rearrange maps are
/// scored, and the episode ends with the best lift seen so far when the
/// step budget is used up or the best rearrange pick is not on an object.
pub fn fused_step(
    inputs: PolicyInputs<'_>,
    rearrange_vf: &mut dyn ValueFunction,
    lift_vf: &mut dyn ValueFunction,
    state: &mut EpisodeState,
    params: &FusedParams,
) -> Result<Decision> {
    let lift_batch = make_transform_batch(inputs.obs, Mode::Lift);
    let lift_maps = lift_vf.evaluate(&lift_batch)?;
    lift_maps.validate(&lift_batch)?;
    let candidate = match best_lift(&lift_batch, &lift_maps, inputs.boundary, inputs.objects, &params.limits) {
        Some(c) => c,
        None => fallback_lift(
            inputs.boundary,
            &inputs.obs.filled_opening_mask,
            &params.limits,
            state.seed.wrapping_add(state.step as u64),
        )?,
    };
    // Ties go to the newer candidate, computed on the more recent view.
    if state.best_lift.as_ref().is_none_or(|b| candidate.score >= b.score) {
        state.best_lift = Some(candidate.clone());
    }
    if candidate.score > params.lift_threshold {
        return Ok(Decision::Lift(candidate));
    }
    let best = || {
        state
            .best_lift
            .clone()
            .ok_or_else(|| Error::NoLiftPair("no lift recorded".into()))
    };
    if state.step >= params.max_rearrange_steps {
        return Ok(Decision::LiftAtBest(best()?));
    }

    let batch = make_transform_batch(inputs.obs, Mode::Rearrange);
    let maps = rearrange_vf.evaluate(&batch)?;
    maps.validate(&batch)?;
    let (slice, row, col) = maps.argmax();
    let action = decode_rearrange(&batch.slices[slice], batch.size, (row, col), params.base_displacement_px);
    if !inputs.objects.get(action.pick_pixel.0, action.pick_pixel.1) {
        return Ok(Decision::LiftAtBest(best()?));
    }
    Ok(Decision::Rearrange {
        action,
        slice,
        value: f64::from(maps.get(slice, row, col)),
    })
}
