//! Acceptance run: one PASS/FAIL line per benchmark criterion. Exits with a
//! non-zero status when any criterion fails.
//!
//! `BAGBENCH_BASELINE_EPISODES` shortens the baseline run (default 100
//! episodes per object count); a shortened run is reported as such.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bagbench::actions::{execute_lift, LiftAction};
use bagbench::bench::{
    collect_epsilon_greedy, evaluate, run_with_specs, suite, DecisionKind, EpisodeOptions, EpisodeTrace,
    StepLabel,
};
use bagbench::color::Hsv;
use bagbench::dataset::{export_dataset, read_dataset};
use bagbench::geometry::{centroid, Point2};
use bagbench::mask::{boundary_from_filled, iou, opening_masks, perturb_opening, Mask};
use bagbench::physics::{BodyId, BodyKind, SolverParams, Vec3, World};
use bagbench::policy::transform::observation_channels;
use bagbench::policy::{
    decode_rearrange, encode_pick, heuristic_lift, make_transform_batch, max_width_lift, rearrange_reward,
    LiftLimits, Mode, VfContext, VfSpec,
};
use bagbench::render::{observe, Camera, Observation};
use bagbench::scene::{add_cloth, add_rigid, build_scene, sample_task, Scene};
use bagbench::BenchConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Runner {
    failures: usize,
}

impl Runner {
    fn check(&mut self, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let mut outcome = f();
        let elapsed = start.elapsed();
        if outcome.is_ok() && elapsed > budget {
            outcome = Err(format!("took {:.1} s, budget {:.0} s", elapsed.as_secs_f64(), budget.as_secs_f64()));
        }
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {name}: {detail} ({:.1} s)", elapsed.as_secs_f64());
        if outcome.is_err() {
            self.failures += 1;
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn settled_scene(seed: u64, n_rigid: usize, n_cloth: usize, config: &BenchConfig) -> Result<Scene, String> {
    let task = sample_task(seed, n_rigid, n_cloth).map_err(|e| e.to_string())?;
    build_scene(&task, config).map_err(|e| format!("seed {seed}: {e}"))
}

fn scene_observation(scene: &Scene, camera: &Camera) -> Result<Observation, String> {
    let (filled, _) = opening_masks(&scene.bag.rim_polygon(&scene.world), camera).map_err(|e| e.to_string())?;
    Ok(observe(&scene.world, camera, &filled))
}

// ---------------------------------------------------------------------------

fn batch_shapes() -> Outcome {
    let config = BenchConfig::default();
    let scene = settled_scene(1, 1, 1, &config)?;
    let camera = Camera::new(config.scene.workspace_size);
    let obs = scene_observation(&scene, &camera)?;
    let source = observation_channels(&obs);

    let start = Instant::now();
    let rearrange = make_transform_batch(&obs, Mode::Rearrange);
    let lift = make_transform_batch(&obs, Mode::Lift);
    let elapsed = start.elapsed();

    let plane = obs.size * obs.size * 4;
    for (batch, t) in [(&rearrange, 96), (&lift, 12)] {
        ensure(batch.len() == t && batch.slices.len() == t, || {
            format!("{:?}: {} slices, expected {t}", batch.mode, batch.len())
        })?;
        ensure(batch.data.len() == t * plane, || format!("{:?}: data length {}", batch.mode, batch.data.len()))?;
    }
    for i in 0..12 {
        for j in 0..8 {
            let s = rearrange.slices[i * 8 + j];
            let degrees = -180.0 + 30.0 * i as f64;
            let scale = 1.0 + 0.25 * j as f64;
            ensure((s.theta.to_degrees() - degrees).abs() < 1e-9 && s.scale == scale, || {
                format!("rearrange slice {} is ({:.3}°, {}), expected ({degrees}°, {scale})", i * 8 + j, s.theta.to_degrees(), s.scale)
            })?;
        }
        let s = lift.slices[i];
        let degrees = -90.0 + 15.0 * i as f64;
        ensure((s.theta.to_degrees() - degrees).abs() < 1e-9 && s.scale == 1.0, || {
            format!("lift slice {i} is ({:.3}°, {}), expected ({degrees}°, 1)", s.theta.to_degrees(), s.scale)
        })?;
    }
    for (batch, mode) in [(&rearrange, Mode::Rearrange), (&lift, Mode::Lift)] {
        ensure(batch.slice(mode.identity_slice()) == source.as_slice(), || {
            format!("{mode} identity slice differs from the observation")
        })?;
    }
    ensure(elapsed < Duration::from_secs(1), || format!("batching took {:.2} s", elapsed.as_secs_f64()))?;
    Ok(format!(
        "t=96 (12 rotations x 8 scales) and t=12 grids exact, identity slices bit-equal, built in {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

// ---------------------------------------------------------------------------

/// Winding-number containment, written independently of the library's
/// crossing test.
fn winding_inside(p: Point2, poly: &[Point2]) -> bool {
    let mut winding = 0i32;
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && cross > 0.0 {
                winding += 1;
            }
        } else if b[1] <= p[1] && cross < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

fn brute_outside_volume(world: &World, poly: &[Point2]) -> f64 {
    let mut total = 0.0;
    for p in &world.particles {
        if p.body_kind == BodyKind::Bag {
            continue;
        }
        if !winding_inside([p.position.x, p.position.y], poly) {
            total += 4.0 / 3.0 * PI * p.radius * p.radius * p.radius;
        }
    }
    total
}

fn brute_reward(pre: &World, post: &World, poly: &[Point2]) -> f64 {
    let (a, b) = (brute_outside_volume(pre, poly), brute_outside_volume(post, poly));
    let m = if a > b { a } else { b };
    if m == 0.0 {
        0.0
    } else {
        (a - b) / m
    }
}

fn star_polygon(rng: &mut ChaCha8Rng, center: Point2, radius: f64, vertices: usize, jitter: f64) -> Vec<Point2> {
    (0..vertices)
        .map(|k| {
            let a = (k as f64 + rng.random_range(-0.3..0.3)) / vertices as f64 * TAU;
            let r = radius * (1.0 + rng.random_range(-jitter..jitter));
            [center[0] + r * a.cos(), center[1] + r * a.sin()]
        })
        .collect()
}

fn random_worlds(rng: &mut ChaCha8Rng) -> (World, World) {
    let mut pre = World::new(SolverParams::default());
    let mut post = World::new(SolverParams::default());
    let kinds = [BodyKind::Rigid, BodyKind::Cloth, BodyKind::Rigid, BodyKind::Cloth, BodyKind::Bag];
    let bodies = rng.random_range(2..7);
    let all_inside = rng.random_bool(0.05);
    for b in 0..bodies {
        let kind = if b == 0 { BodyKind::Bag } else { kinds[rng.random_range(0..kinds.len())] };
        let n = rng.random_range(1..40);
        let radius = rng.random_range(0.004..0.03);
        let spread = if all_inside { 0.05 } else { 0.5 };
        let a: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), 0.05))
            .collect();
        let moved: Vec<Vec3> = match rng.random_range(0..3) {
            0 => a.clone(),
            1 => a.iter().map(|p| p * rng.random_range(0.0..1.5)).collect(),
            _ => (0..n)
                .map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.05))
                .collect(),
        };
        let color = Hsv::new(0.5, 0.5, 0.5);
        pre.add_body(kind, color, &a, radius, 1.0);
        post.add_body(kind, color, &moved, radius, 1.0);
    }
    (pre, post)
}

fn reward_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut worst = 0.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut zero_cases = 0;
    for case in 0..1000 {
        let (pre, post) = random_worlds(&mut rng);
        let center = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
        let vertices = rng.random_range(6..40);
        let radius = rng.random_range(0.08..0.3);
        let poly = star_polygon(&mut rng, center, radius, vertices, 0.3);
        let grasped = [None, Some(BodyKind::Rigid), Some(BodyKind::Cloth)][rng.random_range(0..3)];
        let got = rearrange_reward(&pre, &post, grasped, &poly);
        let want = brute_reward(&pre, &post, &poly);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-12, || format!("case {case}: reward {got} vs brute force {want}"))?;
        ensure((-1.0..=1.0).contains(&got), || format!("case {case}: reward {got} out of [-1, 1]"))?;
        lo = lo.min(got);
        hi = hi.max(got);
        let empty = brute_outside_volume(&pre, &poly) == 0.0 && brute_outside_volume(&post, &poly) == 0.0;
        zero_cases += usize::from(empty);
        let bag = rearrange_reward(&pre, &post, Some(BodyKind::Bag), &poly);
        ensure(bag == -0.5, || format!("case {case}: bag grasp gave {bag}"))?;
    }
    Ok(format!(
        "1000 cases, max |diff| {worst:.1e}, range [{lo:.3}, {hi:.3}], {zero_cases} cases with nothing outside, bag grasps -0.5"
    ))
}

// ---------------------------------------------------------------------------

fn decode_round_trip() -> Outcome {
    let size = bagbench::render::IMAGE_SIZE;
    let base = BenchConfig::default().policy.base_displacement_px;
    let mut checked = 0usize;
    let mut exact = 0usize;
    for (index, params) in Mode::Rearrange.slices().iter().enumerate() {
        // Interior grid: slice pixels whose decoded pick lands at least
        // four pixels inside the image at this scale.
        let reach = (size as f64 / 2.0 - 4.0) / (params.scale * std::f64::consts::SQRT_2);
        let c = size as f64 / 2.0;
        for i in 0..16 {
            for j in 0..16 {
                let row = (c - reach + 2.0 * reach * i as f64 / 15.0) as usize;
                let col = (c - reach + 2.0 * reach * j as f64 / 15.0) as usize;
                let action = decode_rearrange(params, size, (row, col), base);
                let back = encode_pick(params, size, action.pick_pixel);
                ensure(back.0.abs_diff(row) <= 1 && back.1.abs_diff(col) <= 1, || {
                    format!("slice {index}: ({row}, {col}) -> {:?} -> {back:?}", action.pick_pixel)
                })?;
                checked += 1;
                exact += usize::from(back == (row, col));
            }
        }
    }
    Ok(format!("{checked} picks within 1 px, {exact} exact"))
}

// ---------------------------------------------------------------------------

/// Symmetric difference pixels more than one pixel (8-neighbourhood) away
/// from the boundary ring.
fn far_differences(a: &Mask, b: &Mask, ring: &Mask) -> usize {
    let near_ring = |r: usize, c: usize| {
        (r.saturating_sub(1)..=(r + 1).min(ring.height - 1))
            .any(|rr| (c.saturating_sub(1)..=(c + 1).min(ring.width - 1)).any(|cc| ring.get(rr, cc)))
    };
    (0..a.height)
        .flat_map(|r| (0..a.width).map(move |c| (r, c)))
        .filter(|&(r, c)| a.get(r, c) != b.get(r, c) && !near_ring(r, c))
        .count()
}

fn own_iou(a: &Mask, b: &Mask) -> f64 {
    let (mut i, mut u) = (0usize, 0usize);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        i += usize::from(*x && *y);
        u += usize::from(*x || *y);
    }
    i as f64 / u as f64
}

fn mask_geometry() -> Outcome {
    let config = BenchConfig::default();
    let camera = Camera::new(config.scene.workspace_size);
    let ws = config.scene.workspace_size;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut total_diff = 0usize;
    let mut worst_miss = 0.0f64;
    for case in 0..100 {
        let radius = rng.random_range(0.12..0.3) * ws;
        let vertices = rng.random_range(12..48);
        let center = [rng.random_range(-0.05..0.05) * ws, 0.0];
        let rim = star_polygon(&mut rng, center, radius, vertices, 0.15);
        let filled = Mask::from_polygon(camera.size, camera.size, &camera.polygon_to_pixels(&rim));
        let ring = boundary_from_filled(&filled).map_err(|e| format!("polygon {case}: {e}"))?;
        let refilled = ring.fill_holes();
        let diff = filled.symmetric_difference(&refilled).map_err(|e| e.to_string())?;
        total_diff += diff;
        let far = far_differences(&filled, &refilled, &ring);
        ensure(far == 0, || format!("polygon {case}: {far} refill differences farther than 1 px from the ring"))?;
        let self_iou = iou(&filled, &filled).map_err(|e| e.to_string())?;
        ensure(self_iou == 1.0, || format!("polygon {case}: IoU(M, M) = {self_iou}"))?;
        for target in [0.95, 0.93] {
            let p = perturb_opening(&rim, &camera, target, case).map_err(|e| format!("polygon {case}, target {target}: {e}"))?;
            let measured = own_iou(&filled, &p.filled);
            worst_miss = worst_miss.max((measured - target).abs());
            ensure((measured - target).abs() <= 0.01, || {
                format!("polygon {case}: perturbed IoU {measured:.4} for target {target}")
            })?;
        }
    }
    Ok(format!(
        "100 polygons refill with {total_diff} differing pixels in total, IoU(M,M)=1, perturbation worst miss {worst_miss:.4}"
    ))
}

// ---------------------------------------------------------------------------

fn cloth_residual(world: &World, body: BodyId) -> f64 {
    let range = world.body(body).particles.clone();
    let (mut sum, mut n) = (0.0, 0usize);
    for c in &world.distance {
        if range.contains(&(c.particle_a as usize)) {
            let a = world.particles[c.particle_a as usize].position;
            let b = world.particles[c.particle_b as usize].position;
            sum += ((a - b).norm() - c.rest_length).abs() / c.rest_length;
            n += 1;
        }
    }
    sum / n as f64
}

fn min_clearance(world: &World) -> f64 {
    (0..world.particles.len()).map(|i| world.clearance(i)).fold(f64::INFINITY, f64::min)
}

fn momentum_drift(seed: u64) -> Result<f64, String> {
    let config = BenchConfig::default();
    let task = sample_task(seed, 2, 1).map_err(|e| e.to_string())?;
    let mut world = World::new(SolverParams {
        gravity: [0.0; 3],
        ..config.solver.clone()
    });
    let sp = &config.scene;
    let cloth = add_cloth(
        &mut world,
        &task.cloths[0],
        sp.cloth_resolution,
        sp.cloth_bending_stiffness,
        sp.deformable_particle_mass,
        Vec3::new(0.0, 0.0, 2.0),
        0.4,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bodies = vec![(cloth.body, Vec3::new(0.0, 0.0, 0.4))];
    for (k, params) in task.rigids.iter().enumerate() {
        let mut params = params.clone();
        params.x = rng.random_range(-0.05..0.05);
        params.y = rng.random_range(-0.05..0.05);
        let rigid = add_rigid(&mut world, &params, sp.rigid_particle_mass);
        world.translate_body(rigid.body, Vec3::new(0.0, 0.0, 2.3 + 0.2 * k as f64));
        bodies.push((rigid.body, Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), -1.0)));
    }
    for (body, v) in &bodies {
        for i in world.body(*body).particles.clone() {
            world.particles[i].velocity = *v;
        }
    }
    let scale: f64 = world.particles.iter().map(|p| p.mass() * p.velocity.norm()).sum();
    let before = world.total_momentum();
    let mut contacts_seen = false;
    for _ in 0..150 {
        world.step(world.params.dt).map_err(|e| e.to_string())?;
        let rigid_z = world.body_centroid(bodies[1].0).z;
        contacts_seen |= rigid_z < world.body_centroid(cloth.body).z + 0.15;
    }
    ensure(contacts_seen, || format!("seed {seed}: bodies never met"))?;
    ensure(min_clearance(&world) > 0.5, || format!("seed {seed}: bodies came near the ground"))?;
    Ok((world.total_momentum() - before).norm() / scale)
}

fn physics_properties() -> Outcome {
    let config = BenchConfig::default();
    let mut residuals = Vec::new();
    let mut lowest = f64::INFINITY;
    for seed in 0..20 {
        let mut scene = settled_scene(500 + seed, 1, 1, &config)?;
        let r = cloth_residual(&scene.world, scene.cloths[0].body);
        residuals.push(r);
        lowest = lowest.min(min_clearance(&scene.world));
        // Pull the bag up by two opposite rim particles and watch every step.
        let rim = scene.bag.rim.clone();
        let grips = [rim[0], rim[rim.len() / 2]];
        let starts = grips.map(|g| scene.world.particles[g].position);
        for &g in &grips {
            scene.world.attach(g).map_err(|e| e.to_string())?;
        }
        for s in 1..=100 {
            for (g, a) in grips.iter().zip(&starts) {
                let target = Vec3::new(a.x, a.y, a.z + 0.3 * s as f64 / 100.0);
                scene.world.set_attachment_target(*g, target).map_err(|e| e.to_string())?;
            }
            scene.world.step(scene.world.params.dt).map_err(|e| e.to_string())?;
            lowest = lowest.min(min_clearance(&scene.world));
        }
        scene.world.detach_all();
        scene.world.settle(1.0).map_err(|e| e.to_string())?;
        lowest = lowest.min(min_clearance(&scene.world));
    }
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    ensure(worst <= 0.02, || format!("cloth stretch at settle up to {:.2}% (mean {:.2}%)", worst * 100.0, mean * 100.0))?;
    ensure(lowest >= -1e-3, || format!("penetration {:.2} mm below the ground", -lowest * 1e3))?;

    let mut drift = 0.0f64;
    for seed in 0..3 {
        drift = drift.max(momentum_drift(seed)?);
    }
    ensure(drift <= 1e-9, || format!("relative momentum drift {drift:.2e} with gravity off"))?;

    let opts = EpisodeOptions::default();
    let mut checksums = 0;
    for seed in [11, 12] {
        let task = sample_task(seed, 1, 1).map_err(|e| e.to_string())?;
        let a = run_with_specs(&task, &VfSpec::Heuristic, &VfSpec::Heuristic, &opts).map_err(|e| e.to_string())?;
        let b = run_with_specs(&task, &VfSpec::Heuristic, &VfSpec::Heuristic, &opts).map_err(|e| e.to_string())?;
        let sums = |t: &EpisodeTrace| -> Vec<u64> {
            std::iter::once(t.initial_checksum).chain(t.steps.iter().map(|s| s.checksum)).collect()
        };
        ensure(sums(&a) == sums(&b), || format!("seed {seed}: checksums differ between runs"))?;
        checksums += sums(&a).len();
    }
    Ok(format!(
        "cloth stretch at settle mean {:.2}% worst {:.2}% over 20 cloths, lowest clearance {:+.2} mm, momentum drift {drift:.1e}, {checksums} checksums reproduced",
        mean * 100.0,
        worst * 100.0,
        lowest * 1e3
    ))
}

// ---------------------------------------------------------------------------

/// Drops every object of the scene into the bag opening, one above the
/// other, and lets the scene settle.
fn load_bag(scene: &mut Scene) -> Result<(), String> {
    let [cx, cy] = centroid(&scene.opening_rim);
    let mut floor = scene.bag.wall_height + 0.03;
    for body in scene.object_bodies() {
        let range = scene.world.body(body).particles.clone();
        let c = scene.world.body_centroid(body);
        let bottom = scene.world.particles[range.clone()]
            .iter()
            .map(|p| p.position.z - p.radius)
            .fold(f64::INFINITY, f64::min);
        let top = scene.world.particles[range.clone()]
            .iter()
            .map(|p| p.position.z + p.radius)
            .fold(f64::NEG_INFINITY, f64::max);
        scene.world.translate_body(body, Vec3::new(cx - c.x, cy - c.y, floor - bottom));
        for i in range {
            scene.world.particles[i].velocity = Vec3::zeros();
        }
        floor += top - bottom + 0.03;
    }
    scene.world.settle(3.0).map_err(|e| e.to_string())?;
    Ok(())
}

/// Independent z-scan: an object touches the surface when any particle's
/// lowest point is within the ground epsilon plus one sheet thickness.
fn z_scan(world: &World, body: BodyId, ground_epsilon: f64) -> bool {
    let mut sheet = 0.0f64;
    for p in &world.particles {
        if p.body_kind != BodyKind::Rigid && p.radius > sheet {
            sheet = p.radius;
        }
    }
    let threshold = ground_epsilon + 2.0 * sheet;
    !world
        .particles
        .iter()
        .filter(|p| p.body_id == body)
        .any(|p| p.position.z - p.radius - world.params.ground_height < threshold)
}

fn success_oracle() -> Outcome {
    let config = BenchConfig::default();
    let camera = Camera::new(config.scene.workspace_size);
    let limits = LiftLimits {
        pixel_scale: camera.pixel_scale,
        min_separation: config.primitives.lift_min_separation,
        max_separation: config.primitives.lift_max_separation,
    };
    let mixes = [(1, 1), (2, 1), (1, 2)];
    let (mut flags, mut inside, mut successes) = (0usize, 0usize, 0usize);
    for k in 0..50u64 {
        let (r, c) = mixes[k as usize % mixes.len()];
        let mut scene = settled_scene(900 + k, r, c, &config)?;
        if k % 2 == 0 {
            load_bag(&mut scene)?;
        }
        let rim = scene.bag.rim_polygon(&scene.world);
        let rim = if bagbench::geometry::is_simple(&rim) { rim } else { scene.opening_rim.clone() };
        let (filled, boundary) = opening_masks(&rim, &camera).map_err(|e| e.to_string())?;
        let obs = observe(&scene.world, &camera, &filled);
        let action: LiftAction = if k % 4 < 2 {
            max_width_lift(&filled)
        } else {
            heuristic_lift(&boundary, &limits, k)
        }
        .map_err(|e| e.to_string())?;
        let objects = scene.object_bodies();
        let outcome = execute_lift(&mut scene.world, &action, &obs, &camera, &objects, &config.primitives)
            .map_err(|e| e.to_string())?;
        let grasped = outcome.grasped.is_some();
        for (i, &body) in objects.iter().enumerate() {
            let expected = grasped && z_scan(&scene.world, body, config.primitives.ground_epsilon);
            ensure(outcome.per_object_inside[i] == expected, || {
                format!("lift {k}, object {i}: flag {} but z-scan says {expected}", outcome.per_object_inside[i])
            })?;
            flags += 1;
            inside += usize::from(expected);
        }
        let all = outcome.per_object_inside.iter().all(|&b| b);
        ensure(outcome.success == all, || format!("lift {k}: success {} with flags {:?}", outcome.success, outcome.per_object_inside))?;
        successes += usize::from(outcome.success);
    }
    ensure(inside > 0 && inside < flags, || format!("degenerate sample: {inside} of {flags} flags true"))?;
    Ok(format!("50 lifts, {flags} flags match the z-scan ({inside} inside), {successes} successful lifts"))
}

// ---------------------------------------------------------------------------

fn baseline_trend(episodes: usize) -> Outcome {
    let opts = EpisodeOptions::default();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut tasks = Vec::new();
    for n in 2..=5 {
        tasks.extend(suite(n, episodes, 2024).map_err(|e| e.to_string())?);
    }
    let report = evaluate(&tasks, &VfSpec::Heuristic, &VfSpec::Heuristic, &opts, workers).map_err(|e| e.to_string())?;
    for line in report.to_table().lines() {
        println!("    {line}");
    }
    let mut sr = Vec::new();
    for n in 2..=5 {
        let row = report.row(n).ok_or(format!("no row for {n} objects"))?;
        // Recount from the raw episodes.
        let eps: Vec<_> = report.episodes.iter().filter(|e| e.objects == n).collect();
        let count = eps.len() as f64;
        let successes = eps.iter().filter(|e| e.success).count();
        let avg_f = eps.iter().map(|e| e.fraction_inside).sum::<f64>() / count;
        let avg_l = eps.iter().map(|e| e.length as f64).sum::<f64>() / count;
        ensure(eps.len() == episodes && row.episodes == episodes, || format!("{n} objects: {} episodes", eps.len()))?;
        ensure(row.successes == successes && row.sr == successes as f64 / count, || {
            format!("{n} objects: reported SR {} vs recount {}", row.sr, successes as f64 / count)
        })?;
        ensure((row.avg_f - avg_f).abs() <= 1e-12 && (row.avg_l - avg_l).abs() <= 1e-12, || {
            format!("{n} objects: reported AvgF/AvgL {}/{} vs recount {avg_f}/{avg_l}", row.avg_f, row.avg_l)
        })?;
        let longest = eps.iter().map(|e| e.length).max().unwrap_or(0);
        ensure(longest <= 11, || format!("{n} objects: episode of length {longest}"))?;
        sr.push(row.sr);
    }
    let points: Vec<String> = sr.iter().map(|s| format!("{:.1}", s * 100.0)).collect();
    let drop = (sr[0] - sr[3]) * 100.0;
    ensure(drop >= 20.0, || format!("SR {} drops only {drop:.1} points from 2 to 5 objects", points.join("/")))?;
    let inversions: Vec<f64> = sr.windows(2).map(|w| (w[1] - w[0]) * 100.0).filter(|&d| d > 0.0).collect();
    ensure(inversions.len() <= 1 && inversions.iter().all(|&d| d <= 5.0 + 1e-9), || {
        format!("SR {} is not non-increasing (rises: {inversions:?})", points.join("/"))
    })?;
    let errors: usize = report.rows.iter().map(|r| r.errors).sum();
    Ok(format!(
        "SR(2..5) = {} %, drop {drop:.1} points, {} episodes per class, {errors} errored episodes, metrics match recount",
        points.join("/"),
        episodes
    ))
}

// ---------------------------------------------------------------------------

fn fused_boundaries() -> Outcome {
    let mut tasks = Vec::new();
    for n in 2..=5 {
        tasks.extend(suite(n, 2, 77).map_err(|e| e.to_string())?);
    }
    let mut opts = EpisodeOptions::default();
    opts.config.policy.lift_threshold = f64::NEG_INFINITY;
    let mut total = 0;
    for task in &tasks {
        let t = run_with_specs(task, &VfSpec::Heuristic, &VfSpec::Heuristic, &opts).map_err(|e| e.to_string())?;
        ensure(t.length() == 1 && t.steps[0].decision == DecisionKind::Lift, || {
            format!("tau=-inf, seed {}: length {} first decision {:?}", task.seed, t.length(), t.steps[0].decision)
        })?;
        total += t.length();
    }
    let avg_low = total as f64 / tasks.len() as f64;

    opts.config.policy.lift_threshold = f64::INFINITY;
    let max_steps = opts.config.policy.max_rearrange_steps;
    let (mut total, mut longest, mut capped) = (0, 0, 0);
    for task in &tasks {
        let t = run_with_specs(task, &VfSpec::Heuristic, &VfSpec::Heuristic, &opts).map_err(|e| e.to_string())?;
        let n = t.length();
        let (last, before) = t.steps.split_last().ok_or("empty trace")?;
        ensure(last.decision == DecisionKind::LiftAtBest, || {
            format!("tau=+inf, seed {}: ended with {:?}", task.seed, last.decision)
        })?;
        ensure(before.iter().all(|s| s.decision == DecisionKind::Rearrange), || {
            format!("tau=+inf, seed {}: lifted before rearrangement ended", task.seed)
        })?;
        ensure(n <= 11 && before.len() <= max_steps, || format!("seed {}: length {n}", task.seed))?;
        total += n;
        longest = longest.max(n);
        capped += usize::from(before.len() == max_steps);
    }
    Ok(format!(
        "tau=-inf AvgL {avg_low:.2}; tau=+inf AvgL {:.2}, every lift after rearrangement ended ({capped} hit the 10-step cap), max length {longest}",
        total as f64 / tasks.len() as f64
    ))
}

// ---------------------------------------------------------------------------

fn dataset_round_trip() -> Outcome {
    let config = BenchConfig::default();
    let ctx = VfContext::from_config(&config);
    let collect_start = Instant::now();
    let mut traces = Vec::new();
    for task in suite(2, 10, 31).map_err(|e| e.to_string())? {
        let mut r = VfSpec::Heuristic.build(Mode::Rearrange, ctx).map_err(|e| e.to_string())?;
        let mut l = VfSpec::Heuristic.build(Mode::Lift, ctx).map_err(|e| e.to_string())?;
        traces.push(
            collect_epsilon_greedy(&task, r.as_mut(), l.as_mut(), 0.25, 3, &config).map_err(|e| e.to_string())?,
        );
    }
    let collect_time = collect_start.elapsed();

    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = export_dataset(dir.path(), &traces, &config).map_err(|e| e.to_string())?;
    let (read_manifest, back) = read_dataset(dir.path()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    ensure(manifest == read_manifest && back.len() == 10, || "manifest did not round trip".into())?;
    let (mut buffers, mut labels, mut explored) = (0usize, 0usize, 0usize);
    for (a, b) in traces.iter().zip(&back) {
        ensure(a.steps == b.steps && a.lift == b.lift && a.task == b.task, || {
            format!("seed {}: trace records differ after reading", a.task.seed)
        })?;
        for (x, y) in a.labels().iter().zip(b.labels()) {
            let same = match (x, y) {
                (StepLabel::Rearrange { reward: p }, StepLabel::Rearrange { reward: q }) => p.to_bits() == q.to_bits(),
                _ => *x == y,
            };
            ensure(same, || format!("seed {}: label {x:?} read back as {y:?}", a.task.seed))?;
            labels += 1;
        }
        ensure(a.observations.len() == b.observations.len(), || "observation count differs".into())?;
        for (x, y) in a.observations.iter().zip(&b.observations) {
            let bits = |t: &bagbench::tensor::Tensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<u32>>();
            ensure(x.dims == y.dims && bits(x) == bits(y), || format!("seed {}: observation buffer differs", a.task.seed))?;
            buffers += 1;
        }
        explored += a.steps.iter().filter(|s| s.explored).count();
    }
    ensure(elapsed < Duration::from_secs(30), || format!("round trip took {:.1} s", elapsed.as_secs_f64()))?;
    Ok(format!(
        "10 episodes, {buffers} buffers bit-identical, {labels} labels exact ({explored} explored steps), export+read {:.1} s after {:.1} s of collection",
        elapsed.as_secs_f64(),
        collect_time.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let episodes = std::env::var("BAGBENCH_BASELINE_EPISODES")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(100);
    let mut runner = Runner { failures: 0 };
    let secs = Duration::from_secs;

    runner.check("Batch shapes", secs(1) + secs(5), batch_shapes);
    runner.check("Reward oracle", secs(10), reward_oracle);
    runner.check("Decode round trip", secs(10), decode_round_trip);
    runner.check("Mask geometry", secs(30), mask_geometry);
    runner.check("Physics properties", secs(120), physics_properties);
    runner.check("Success metric oracle", secs(120), success_oracle);
    let name = if episodes == 100 {
        "Baseline trend".to_string()
    } else {
        format!("Baseline trend (shortened to {episodes} episodes per class)")
    };
    runner.check(&name, secs(30 * 60), || baseline_trend(episodes));
    runner.check("Fused logic boundaries", secs(300), fused_boundaries);
    runner.check("Dataset round trip", secs(120), dataset_round_trip);

    println!("{} criteria failed", runner.failures);
    if runner.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
