//! Episode runner, benchmark suites, metrics and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actions::{execute_lift, execute_rearrange, LiftAction, LiftOutcome, RearrangeAction};
use crate::config::BenchConfig;
use crate::error::{Error, Result};
use crate::geometry::{is_simple, Point2};
use crate::mask::{opening_masks, perturb_opening, Mask};
use crate::physics::BodyKind;
use crate::policy::decode::pixel_direction;
use crate::policy::transform::REARRANGE_SCALES;
use crate::policy::{
    fused_step, heuristic_lift, outside_volume, volume_reward, Decision, EpisodeState, FusedParams,
    Mode, PolicyInputs, ValueFunction, VfContext, VfSpec, BAG_PICK_PENALTY,
};
use crate::render::{observe, Camera, Observation};
use crate::scene::{build_scene, mixes_with, sample_task, Scene, TaskSpec};
use crate::tensor::Tensor;

/// Channels of a stored observation: RGB, depth, filled opening mask and
/// the label map (body index + 1, 0 for the ground).
pub const OBSERVATION_CHANNELS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOptions {
    pub config: BenchConfig,
    /// Replace the opening masks the policy sees by a perturbed opening
    /// with this IoU against the true one.
    pub opening_iou: Option<f64>,
    /// Probability of replacing a decision's action by a random one.
    pub epsilon: f64,
    pub policy_seed: u64,
    /// Keep a tensor of every observation, needed for dataset export.
    pub keep_observations: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions {
            config: BenchConfig::default(),
            opening_iou: None,
            epsilon: 0.0,
            policy_seed: 0,
            keep_observations: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Rearrange,
    Lift,
    LiftAtBest,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepLabel {
    /// Relative change of outside volume, or the bag-pick penalty.
    Rearrange { reward: f64 },
    /// 1 for a successful lift, 0 otherwise.
    Lift { label: u8 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub observation_digest: u64,
    pub decision: DecisionKind,
    /// The action was drawn at random instead of taken from the policy.
    pub explored: bool,
    pub rearrange: Option<RearrangeAction>,
    pub lift: Option<LiftAction>,
    /// Batch slice and its rotation / scale the action was decoded from.
    pub slice: Option<usize>,
    pub theta: Option<f64>,
    pub scale: Option<f64>,
    pub value: Option<f64>,
    pub label: StepLabel,
    pub grasped: Option<BodyKind>,
    /// World checksum after the step.
    pub checksum: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub task: TaskSpec,
    pub initial_checksum: u64,
    /// IoU of the opening the policy saw, when perturbed.
    pub opening_iou: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub lift: Option<LiftOutcome>,
    pub success: bool,
    pub fraction_inside: f64,
    #[serde(skip)]
    pub observations: Vec<Tensor>,
}

impl EpisodeTrace {
    /// Rearrangement steps plus the lift.
    pub fn length(&self) -> usize {
        self.steps.len()
    }

    pub fn labels(&self) -> Vec<StepLabel> {
        self.steps.iter().map(|s| s.label).collect()
    }
}

/// FNV-1a over the observation's color, depth and mask bytes.
pub fn observation_digest(obs: &Observation) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for rgb in &obs.color {
        for c in rgb {
            feed(&c.to_le_bytes());
        }
    }
    for d in &obs.depth {
        feed(&d.to_le_bytes());
    }
    for &m in obs.filled_opening_mask.as_slice() {
        feed(&[u8::from(m)]);
    }
    hash
}

pub fn observation_tensor(obs: &Observation) -> Tensor {
    let n = obs.size;
    let mask = obs.filled_opening_mask.as_slice();
    let mut data = Vec::with_capacity(n * n * OBSERVATION_CHANNELS);
    for k in 0..n * n {
        data.extend_from_slice(&obs.color[k]);
        data.push(obs.depth[k]);
        data.push(if mask[k] { 1.0 } else { 0.0 });
        data.push(obs.label_map[k].map_or(0.0, |b| (b.index() + 1) as f32));
    }
    Tensor {
        dims: vec![n, n, OBSERVATION_CHANNELS],
        data,
    }
}

fn object_mask(obs: &Observation, world: &crate::physics::World) -> Mask {
    Mask::from_fn(obs.size, obs.size, |r, c| {
        obs.label(r, c).is_some_and(|b| world.body(b).kind != BodyKind::Bag)
    })
}

/// Random rearrangement: uniform pick over object pixels, uniform slice.
fn random_rearrange(
    objects: &Mask,
    size: usize,
    base_px: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(RearrangeAction, usize)> {
    let pixels: Vec<_> = objects.pixels().collect();
    let &pick = pixels.choose(rng)?;
    let slice = rng.random_range(0..Mode::Rearrange.slice_count());
    let params = Mode::Rearrange.slices()[slice];
    let dir = pixel_direction(params.theta);
    let reach = params.scale * base_px;
    let max = (size - 1) as f64;
    let place = (
        (pick.0 as f64 + 0.5 + reach * dir[0]).floor().clamp(0.0, max) as usize,
        (pick.1 as f64 + 0.5 + reach * dir[1]).floor().clamp(0.0, max) as usize,
    );
    debug_assert!(REARRANGE_SCALES.contains(&params.scale));
    Some((
        RearrangeAction {
            pick_pixel: pick,
            place_pixel: place,
            theta: params.theta,
            scale_w: params.scale,
        },
        slice,
    ))
}

/// The rim as an opening polygon, or `None` when it folded over itself.
fn truth_polygon(rim: &[Point2]) -> Option<Vec<Point2>> {
    is_simple(rim).then(|| rim.to_vec())
}

/// Opening masks handed to the policy, recomputed from the bag rim before
/// every step. When the rim folds over itself the last valid masks stay.
struct OpeningView {
    truth: Vec<Point2>,
    filled: Mask,
    boundary: Mask,
    iou: Option<f64>,
}

impl OpeningView {
    fn new(rim: &[Point2], camera: &Camera, target: Option<f64>, seed: u64) -> Result<Self> {
        let (filled, boundary, iou) = match target {
            Some(t) => {
                let p = perturb_opening(rim, camera, t, seed)?;
                (p.filled, p.boundary, Some(p.iou))
            }
            None => {
                let (f, b) = opening_masks(rim, camera)?;
                (f, b, None)
            }
        };
        Ok(OpeningView {
            truth: rim.to_vec(),
            filled,
            boundary,
            iou,
        })
    }

    fn update(&mut self, rim: &[Point2], camera: &Camera, target: Option<f64>, seed: u64) {
        if truth_polygon(rim).is_none() {
            return;
        }
        if let Ok(next) = OpeningView::new(rim, camera, target, seed) {
            *self = OpeningView { iou: self.iou, ..next };
        }
    }
}

/// Builds the task's scene and runs the fused policy until it lifts.
pub fn run_episode(
    task: &TaskSpec,
    rearrange_vf: &mut dyn ValueFunction,
    lift_vf: &mut dyn ValueFunction,
    opts: &EpisodeOptions,
) -> Result<EpisodeTrace> {
    let scene = build_scene(task, &opts.config)?;
    run_scene(scene, rearrange_vf, lift_vf, opts)
}

/// Runs the fused policy on an already built scene, e.g. one assembled by
/// hand. Seeds are taken from `scene.task`.
pub fn run_scene(
    scene: Scene,
    rearrange_vf: &mut dyn ValueFunction,
    lift_vf: &mut dyn ValueFunction,
    opts: &EpisodeOptions,
) -> Result<EpisodeTrace> {
    let cfg = &opts.config;
    let task = &scene.task;
    let camera = Camera::new(cfg.scene.workspace_size);
    let objects = scene.object_bodies();
    let mut world = scene.world;
    let bag = scene.bag;
    let mut view = OpeningView::new(&bag.rim_polygon(&world), &camera, opts.opening_iou, task.seed)?;
    let achieved = view.iou;

    let fused = FusedParams::from_config(cfg);
    let mut state = EpisodeState {
        seed: task.seed ^ opts.policy_seed.rotate_left(32),
        ..EpisodeState::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.policy_seed ^ task.seed.rotate_left(17));
    let mut trace = EpisodeTrace {
        task: task.clone(),
        initial_checksum: world.checksum(),
        opening_iou: achieved,
        steps: Vec::new(),
        lift: None,
        success: false,
        fraction_inside: 0.0,
        observations: Vec::new(),
    };

    loop {
        if !trace.steps.is_empty() {
            view.update(&bag.rim_polygon(&world), &camera, opts.opening_iou, task.seed);
        }
        let (filled, boundary, truth) = (&view.filled, &view.boundary, &view.truth);
        let obs = observe(&world, &camera, filled);
        let objects_px = object_mask(&obs, &world);
        let inputs = PolicyInputs {
            obs: &obs,
            boundary,
            objects: &objects_px,
        };
        let decision = fused_step(inputs, rearrange_vf, lift_vf, &mut state, &fused)?;
        let explore = rng.random::<f64>() < opts.epsilon;
        let index = trace.steps.len();
        let digest = observation_digest(&obs);
        if opts.keep_observations {
            trace.observations.push(observation_tensor(&obs));
        }

        match decision {
            Decision::Rearrange { action, slice, value } => {
                let (action, slice, value) = match explore {
                    true => match random_rearrange(&objects_px, obs.size, fused.base_displacement_px, &mut rng) {
                        Some((a, s)) => (a, s, None),
                        None => (action, slice, Some(value)),
                    },
                    false => (action, slice, Some(value)),
                };
                let pre = outside_volume(&world, truth);
                let outcome = execute_rearrange(&mut world, &action, &obs, &camera, &cfg.primitives)?;
                let reward = match outcome.grasped_kind {
                    Some(BodyKind::Bag) => BAG_PICK_PENALTY,
                    _ => {
                        // The bag may have moved; judge "outside" by its new rim.
                        let post = match truth_polygon(&bag.rim_polygon(&world)) {
                            Some(rim) => outside_volume(&world, &rim),
                            None => outside_volume(&world, truth),
                        };
                        volume_reward(pre, post)
                    }
                };
                state.step += 1;
                let params = Mode::Rearrange.slices()[slice];
                trace.steps.push(StepRecord {
                    index,
                    observation_digest: digest,
                    decision: DecisionKind::Rearrange,
                    explored: explore,
                    rearrange: Some(action),
                    lift: None,
                    slice: Some(slice),
                    theta: Some(params.theta),
                    scale: Some(params.scale),
                    value,
                    label: StepLabel::Rearrange { reward },
                    grasped: outcome.grasped_kind,
                    checksum: world.checksum(),
                });
            }
            Decision::Lift(_) | Decision::LiftAtBest(_) => {
                let (kind, best) = match decision {
                    Decision::Lift(b) => (DecisionKind::Lift, b),
                    Decision::LiftAtBest(b) => (DecisionKind::LiftAtBest, b),
                    Decision::Rearrange { .. } => unreachable!(),
                };
                let (action, slice, value) = if explore {
                    match heuristic_lift(boundary, &fused.limits, rng.random()) {
                        Ok(a) => (a, None, None),
                        Err(_) => (best.action, best.slice, Some(best.score)),
                    }
                } else {
                    (best.action, best.slice, Some(best.score))
                };
                let outcome = execute_lift(&mut world, &action, &obs, &camera, &objects, &cfg.primitives)?;
                let params = slice.map(|s| Mode::Lift.slices()[s]);
                trace.success = outcome.success;
                trace.fraction_inside = outcome.fraction_inside();
                trace.steps.push(StepRecord {
                    index,
                    observation_digest: digest,
                    decision: kind,
                    explored: explore,
                    rearrange: None,
                    lift: Some(action),
                    slice,
                    theta: params.map(|p| p.theta),
                    scale: params.map(|p| p.scale),
                    value: value.filter(|v| v.is_finite() && *v > f64::MIN),
                    label: StepLabel::Lift {
                        label: u8::from(outcome.success),
                    },
                    grasped: None,
                    checksum: world.checksum(),
                });
                trace.lift = Some(outcome);
                return Ok(trace);
            }
        }
    }
}

/// Runs `task` with value functions built from the given specs.
pub fn run_with_specs(
    task: &TaskSpec,
    rearrange: &VfSpec,
    lift: &VfSpec,
    opts: &EpisodeOptions,
) -> Result<EpisodeTrace> {
    let ctx = VfContext::from_config(&opts.config);
    let mut r = rearrange.build(Mode::Rearrange, ctx)?;
    let mut l = lift.build(Mode::Lift, ctx)?;
    run_episode(task, r.as_mut(), l.as_mut(), opts)
}

/// Self-supervised data collection: runs the episode with exploration and
/// returns the trace together with its labels.
pub fn collect_epsilon_greedy(
    task: &TaskSpec,
    rearrange_vf: &mut dyn ValueFunction,
    lift_vf: &mut dyn ValueFunction,
    epsilon: f64,
    seed: u64,
    config: &BenchConfig,
) -> Result<EpisodeTrace> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon must be in [0, 1], got {epsilon}")));
    }
    let opts = EpisodeOptions {
        config: config.clone(),
        epsilon,
        policy_seed: seed,
        keep_observations: true,
        ..EpisodeOptions::default()
    };
    run_episode(task, rearrange_vf, lift_vf, &opts)
}

/// `episodes` tasks with `objects` objects each, mixes drawn uniformly from
/// the allowed (rigid, cloth) splits.
pub fn suite(objects: usize, episodes: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    let mixes = mixes_with(objects);
    if mixes.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no object mix has {objects} objects (supported: 2 to 5)"
        )));
    }
    let mut rng = crate::scene::derived_rng(seed, 1000 + objects as u64);
    (0..episodes)
        .map(|_| {
            let &(r, c) = mixes.choose(&mut rng).expect("mixes is not empty");
            sample_task(rng.random(), r, c)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub objects: usize,
    pub success: bool,
    pub fraction_inside: f64,
    pub length: usize,
    pub initial_checksum: Option<u64>,
    pub final_checksum: Option<u64>,
    /// Set when the episode could not be run; it counts as a failure.
    pub error: Option<String>,
}

impl EpisodeSummary {
    pub fn from_result(task: &TaskSpec, result: &Result<EpisodeTrace>) -> Self {
        match result {
            Ok(t) => EpisodeSummary {
                seed: task.seed,
                objects: task.object_count(),
                success: t.success,
                fraction_inside: t.fraction_inside,
                length: t.length(),
                initial_checksum: Some(t.initial_checksum),
                final_checksum: t.steps.last().map(|s| s.checksum),
                error: None,
            },
            Err(e) => EpisodeSummary {
                seed: task.seed,
                objects: task.object_count(),
                success: false,
                fraction_inside: 0.0,
                length: 1,
                initial_checksum: None,
                final_checksum: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub objects: usize,
    pub episodes: usize,
    pub successes: usize,
    pub errors: usize,
    pub sr: f64,
    pub avg_f: f64,
    pub avg_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rearrange_policy: String,
    pub lift_policy: String,
    pub rows: Vec<ReportRow>,
    pub episodes: Vec<EpisodeSummary>,
}

impl BenchmarkReport {
    /// Aggregates per object count; the result does not depend on the
    /// order of `episodes`.
    pub fn from_episodes(rearrange_policy: &str, lift_policy: &str, mut episodes: Vec<EpisodeSummary>) -> Self {
        episodes.sort_by_key(|e| (e.objects, e.seed));
        let mut groups: BTreeMap<usize, Vec<&EpisodeSummary>> = BTreeMap::new();
        for e in &episodes {
            groups.entry(e.objects).or_default().push(e);
        }
        let rows = groups
            .into_iter()
            .map(|(objects, eps)| {
                let n = eps.len() as f64;
                let successes = eps.iter().filter(|e| e.success).count();
                ReportRow {
                    objects,
                    episodes: eps.len(),
                    successes,
                    errors: eps.iter().filter(|e| e.error.is_some()).count(),
                    sr: successes as f64 / n,
                    avg_f: eps.iter().map(|e| e.fraction_inside).sum::<f64>() / n,
                    avg_l: eps.iter().map(|e| e.length as f64).sum::<f64>() / n,
                }
            })
            .collect();
        BenchmarkReport {
            rearrange_policy: rearrange_policy.to_string(),
            lift_policy: lift_policy.to_string(),
            rows,
            episodes,
        }
    }

    pub fn row(&self, objects: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.objects == objects)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rearrange,lift,objects,episodes,successes,errors,sr,avg_f,avg_l\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.4},{:.4},{:.4}",
                self.rearrange_policy, self.lift_policy, r.objects, r.episodes, r.successes, r.errors, r.sr, r.avg_f, r.avg_l
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "rearrange: {}  lift: {}\n{:>7} {:>8} {:>7} {:>7} {:>6}\n",
            self.rearrange_policy, self.lift_policy, "objects", "episodes", "SR %", "AvgF %", "AvgL"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>7} {:>8} {:>7.1} {:>7.1} {:>6.2}",
                r.objects,
                r.episodes,
                100.0 * r.sr,
                100.0 * r.avg_f,
                r.avg_l
            );
        }
        out
    }
}

/// Runs every task (in parallel with `workers > 1` when the `parallel`
/// feature is on) and aggregates the report. Episodes that fail to run are
/// counted as failures and keep their error message.
pub fn evaluate(
    tasks: &[TaskSpec],
    rearrange: &VfSpec,
    lift: &VfSpec,
    opts: &EpisodeOptions,
    workers: usize,
) -> Result<BenchmarkReport> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("empty task suite".into()));
    }
    let run = |task: &TaskSpec| EpisodeSummary::from_result(task, &run_with_specs(task, rearrange, lift, opts));

    #[cfg(feature = "parallel")]
    let episodes: Vec<EpisodeSummary> = if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(run).collect())
    } else {
        tasks.iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let episodes: Vec<EpisodeSummary> = {
        let _ = workers;
        tasks.iter().map(run).collect()
    };

    Ok(BenchmarkReport::from_episodes(
        &rearrange.to_string(),
        &lift.to_string(),
        episodes,
    ))
}
