use bagbench::bench::{
    collect_epsilon_greedy, run_scene, run_with_specs, BenchmarkReport, DecisionKind, EpisodeOptions, EpisodeSummary,
};
use bagbench::color::Hsv;
use bagbench::mask::opening_masks;
use bagbench::physics::{BodyKind, World};
use bagbench::policy::{
    decode_rearrange, make_transform_batch, HeuristicLiftVf, HeuristicRearrangeVf, Mode, ValueFunction, VfContext,
    VfSpec,
};
use bagbench::render::{observe, Camera};
use bagbench::scene::{add_bag, add_rigid, build_scene, sample_task, BagParams, RigidParams, RigidShape, Scene, TaskSpec};
use bagbench::BenchConfig;

fn summary(seed: u64, objects: usize, success: bool, fraction_inside: f64, length: usize) -> EpisodeSummary {
    EpisodeSummary {
        seed,
        objects,
        success,
        fraction_inside,
        length,
        initial_checksum: None,
        final_checksum: None,
        error: None,
    }
}

#[test]
fn report_aggregates_per_object_count() {
    let episodes = vec![
        summary(1, 2, true, 1.0, 2),
        summary(2, 2, true, 1.0, 3),
        summary(3, 2, false, 0.5, 4),
        summary(4, 2, true, 1.0, 3),
        summary(5, 3, true, 1.0, 5),
    ];
    let report = BenchmarkReport::from_episodes("heuristic", "heuristic", episodes.clone());
    let two = report.row(2).unwrap();
    assert_eq!((two.episodes, two.successes), (4, 3));
    assert_eq!(two.sr, 0.75);
    assert_eq!(two.avg_f, 0.875);
    assert_eq!(two.avg_l, 3.0);
    let three = report.row(3).unwrap();
    assert_eq!((three.sr, three.avg_f, three.avg_l), (1.0, 1.0, 5.0));

    let mut reversed = episodes;
    reversed.reverse();
    assert_eq!(BenchmarkReport::from_episodes("heuristic", "heuristic", reversed), report);
    assert!(report.to_csv().lines().count() == 3);
}

#[test]
fn errored_episodes_count_as_failures() {
    let task = sample_task(3, 1, 1).unwrap();
    let err: bagbench::Result<_> = Err(bagbench::Error::TaskInfeasible("test".into()));
    let s = EpisodeSummary::from_result(&task, &err);
    assert!(!s.success && s.error.is_some());
    assert_eq!((s.length, s.fraction_inside), (1, 0.0));
    let report = BenchmarkReport::from_episodes("a", "b", vec![s]);
    assert_eq!(report.rows[0].errors, 1);
    assert_eq!(report.rows[0].sr, 0.0);
}

#[test]
fn zero_epsilon_collection_equals_the_greedy_run() {
    let config = BenchConfig::default();
    let task = sample_task(8, 1, 1).unwrap();
    let ctx = VfContext::from_config(&config);
    let collected = collect_epsilon_greedy(
        &task,
        &mut HeuristicRearrangeVf::new(ctx),
        &mut HeuristicLiftVf::new(ctx),
        0.0,
        5,
        &config,
    )
    .unwrap();
    let opts = EpisodeOptions {
        policy_seed: 5,
        ..EpisodeOptions::default()
    };
    let greedy = run_with_specs(&task, &VfSpec::Heuristic, &VfSpec::Heuristic, &opts).unwrap();
    assert_eq!(collected.steps, greedy.steps);
    assert!(collected.steps.iter().all(|s| !s.explored));
    assert_eq!(collected.observations.len(), collected.steps.len());
}

#[test]
fn epsilon_outside_unit_interval_is_rejected() {
    let config = BenchConfig::default();
    let task = sample_task(8, 1, 1).unwrap();
    let ctx = VfContext::from_config(&config);
    let r = collect_epsilon_greedy(
        &task,
        &mut HeuristicRearrangeVf::new(ctx),
        &mut HeuristicLiftVf::new(ctx),
        1.5,
        0,
        &config,
    );
    assert!(r.is_err());
}

#[test]
fn one_small_object_beside_the_bag_is_bagged_quickly() {
    let config = BenchConfig::default();
    let bag_params = BagParams {
        dimension: 0.3,
        stiffness: 0.9,
    };
    let cube = RigidParams {
        shape: RigidShape::Box,
        dims: [0.05, 0.05, 0.05],
        color: Hsv::new(0.6, 0.8, 0.8),
        x: 0.24,
        y: 0.0,
        yaw: 0.0,
    };
    let mut world = World::new(config.solver.clone());
    let bag = add_bag(&mut world, &bag_params, &config.scene);
    world.settle(config.scene.bag_settle_time).unwrap();
    let opening_rim = bag.rim_polygon(&world);
    let rigid = add_rigid(&mut world, &cube, config.scene.rigid_particle_mass);
    world.settle(config.scene.scene_settle_time).unwrap();
    let scene = Scene {
        task: TaskSpec {
            format_version: 1,
            seed: 11,
            n_rigid: 1,
            n_cloth: 0,
            bag: bag_params,
            rigids: vec![cube],
            cloths: vec![],
        },
        world,
        bag,
        cloths: vec![],
        rigids: vec![rigid],
        opening_rim,
        redrops: 0,
    };
    let ctx = VfContext::from_config(&config);
    let trace = run_scene(
        scene,
        &mut HeuristicRearrangeVf::new(ctx),
        &mut HeuristicLiftVf::new(ctx),
        &EpisodeOptions::default(),
    )
    .unwrap();
    assert!(trace.success, "{:?}", trace.lift);
    assert!(trace.length() <= 3, "length {}", trace.length());
    assert_eq!(trace.steps[0].decision, DecisionKind::Rearrange);
    assert_eq!(trace.steps[0].grasped, Some(BodyKind::Rigid));
}

#[test]
fn trace_length_counts_rearranges_plus_the_lift() {
    let task = sample_task(14, 2, 1).unwrap();
    let trace = run_with_specs(&task, &VfSpec::Heuristic, &VfSpec::Heuristic, &EpisodeOptions::default()).unwrap();
    let (last, rest) = trace.steps.split_last().unwrap();
    assert!(matches!(last.decision, DecisionKind::Lift | DecisionKind::LiftAtBest));
    assert!(rest.iter().all(|s| s.decision == DecisionKind::Rearrange));
    assert_eq!(trace.length(), rest.len() + 1);
    assert!(trace.lift.is_some());
    assert!((0.0..=1.0).contains(&trace.fraction_inside));
}

#[test]
fn heuristic_pick_is_never_inside_the_opening() {
    let config = BenchConfig::default();
    let camera = Camera::new(config.scene.workspace_size);
    let mut vf = HeuristicRearrangeVf::new(VfContext::from_config(&config));
    for seed in 40..44 {
        let scene = build_scene(&sample_task(seed, 2, 1).unwrap(), &config).unwrap();
        let (filled, _) = opening_masks(&scene.bag.rim_polygon(&scene.world), &camera).unwrap();
        let batch = make_transform_batch(&observe(&scene.world, &camera, &filled), Mode::Rearrange);
        let maps = vf.evaluate(&batch).unwrap();
        let (slice, row, col) = maps.argmax();
        assert!(maps.get(slice, row, col) > 0.0, "seed {seed}: every object inside");
        let action = decode_rearrange(&batch.slices[slice], batch.size, (row, col), 40.0);
        let (r, c) = action.pick_pixel;
        assert!(!filled.get(r, c), "seed {seed}: pick {:?} on the opening", action.pick_pixel);
    }
}
