//! `bagbench` command line: task generation, episode runs, evaluation,
//! data collection and the remote value-function server.

mod image;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bagbench::bench::{
    collect_epsilon_greedy, evaluate, run_with_specs, suite, EpisodeOptions, EpisodeTrace, StepLabel,
};
use bagbench::dataset::export_dataset;
use bagbench::mask::{opening_masks, perturb_opening};
use bagbench::policy::{Mode, VfContext, VfSpec};
use bagbench::protocol::Server;
use bagbench::render::{observe, Camera};
use bagbench::scene::{build_scene, TaskSpec};
use bagbench::{BenchConfig, Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bagbench", version, about = "Heterogeneous bagging benchmark and policy harness")]
struct Cli {
    /// Benchmark configuration file (TOML). Built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct PolicyArgs {
    /// Rearrangement value function: heuristic, random:<seed>, constant:<v>
    /// or remote:<host:port>.
    #[arg(long, default_value = "heuristic")]
    rearrange: VfSpec,
    /// Lift value function, same forms as --rearrange.
    #[arg(long, default_value = "heuristic")]
    lift: VfSpec,
    /// Show the policy a perturbed opening with this IoU.
    #[arg(long)]
    opening_iou: Option<f64>,
    /// Lift score threshold; accepts inf and -inf.
    #[arg(long, allow_hyphen_values = true)]
    lift_threshold: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample seeded task files.
    GenTasks {
        #[arg(long)]
        objects: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one task and print the episode.
    Run {
        #[arg(long)]
        task: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Write one PNG per step into this directory.
        #[arg(long)]
        render: Option<PathBuf>,
        /// Print the full trace as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate a policy pair on a directory of task files.
    Eval {
        #[arg(long)]
        tasks: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Write the per-object-count report as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Only the first n tasks (by file name).
        #[arg(long)]
        episodes: Option<usize>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Epsilon-greedy data collection into a labeled dataset.
    Collect {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
        /// Task files; otherwise a suite is sampled from --objects/--count/--seed.
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        objects: usize,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Serve a value function over the wire protocol.
    Serve {
        #[arg(long, env = "BAGBENCH_BIND", default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long, default_value = "heuristic")]
        vf: VfSpec,
    },
    /// Render the initial scene of a task to PNG.
    Render {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        opening_iou: Option<f64>,
    },
}

fn load_config(path: Option<&Path>) -> Result<BenchConfig> {
    match path {
        Some(p) => BenchConfig::load(p),
        None => Ok(BenchConfig::default()),
    }
}

fn episode_options(config: &BenchConfig, policy: &PolicyArgs) -> EpisodeOptions {
    let mut config = config.clone();
    if let Some(t) = policy.lift_threshold {
        config.policy.lift_threshold = t;
    }
    EpisodeOptions {
        config,
        opening_iou: policy.opening_iou,
        ..EpisodeOptions::default()
    }
}

/// Task files of a directory, sorted by file name.
fn load_tasks(dir: &Path) -> Result<Vec<TaskSpec>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no .toml task files in {}", dir.display())));
    }
    paths.iter().map(|p| TaskSpec::load(p)).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_trace(trace: &EpisodeTrace) {
    for step in &trace.steps {
        match (&step.rearrange, &step.lift, step.label) {
            (Some(a), _, StepLabel::Rearrange { reward }) => println!(
                "step {:>2}  rearrange  pick {:?} place {:?}  grasped {}  reward {:+.3}{}",
                step.index,
                a.pick_pixel,
                a.place_pixel,
                step.grasped.map_or("nothing".to_string(), |k| format!("{k:?}").to_lowercase()),
                reward,
                if step.explored { "  (explored)" } else { "" }
            ),
            (_, Some(a), StepLabel::Lift { label }) => println!(
                "step {:>2}  {:?}  l1 {:?} l2 {:?}  label {}",
                step.index, step.decision, a.l1, a.l2, label
            ),
            _ => println!("step {:>2}  {:?}", step.index, step.decision),
        }
    }
    println!(
        "success {}  fraction inside {:.2}  length {}",
        trace.success,
        trace.fraction_inside,
        trace.length()
    );
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenTasks {
            objects,
            count,
            seed,
            out,
        } => {
            create_dir(&out)?;
            for (k, task) in suite(objects, count, seed)?.iter().enumerate() {
                task.save(&out.join(format!("task_{objects}obj_{k:04}.toml")))?;
            }
            println!("wrote {count} tasks to {}", out.display());
        }
        Command::Run {
            task,
            policy,
            render,
            json,
        } => {
            let task = TaskSpec::load(&task)?;
            let mut opts = episode_options(&config, &policy);
            opts.keep_observations = render.is_some();
            let trace = run_with_specs(&task, &policy.rearrange, &policy.lift, &opts)?;
            if let Some(dir) = render {
                create_dir(&dir)?;
                for (step, obs) in trace.steps.iter().zip(&trace.observations) {
                    image::write_step(&dir.join(format!("step_{:02}.png", step.index)), obs, step)?;
                }
            }
            if json {
                let text = serde_json::to_string_pretty(&trace).map_err(|e| Error::Format(e.to_string()))?;
                println!("{text}");
            } else {
                print_trace(&trace);
            }
        }
        Command::Eval {
            tasks,
            policy,
            report,
            episodes,
            parallel,
        } => {
            let mut tasks = load_tasks(&tasks)?;
            if let Some(n) = episodes {
                tasks.truncate(n);
            }
            let opts = episode_options(&config, &policy);
            let result = evaluate(&tasks, &policy.rearrange, &policy.lift, &opts, parallel.max(1))?;
            print!("{}", result.to_table());
            for e in result.episodes.iter().filter(|e| e.error.is_some()) {
                eprintln!("episode {} failed: {}", e.seed, e.error.as_deref().unwrap_or_default());
            }
            if let Some(path) = report {
                fs::write(&path, result.to_csv()).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Collect {
            epsilon,
            out,
            tasks,
            objects,
            count,
            seed,
            policy,
        } => {
            let tasks = match tasks {
                Some(dir) => load_tasks(&dir)?,
                None => suite(objects, count, seed)?,
            };
            let opts = episode_options(&config, &policy);
            let ctx = VfContext::from_config(&opts.config);
            let mut traces = Vec::with_capacity(tasks.len());
            for task in &tasks {
                let mut r = policy.rearrange.build(Mode::Rearrange, ctx)?;
                let mut l = policy.lift.build(Mode::Lift, ctx)?;
                match collect_epsilon_greedy(task, r.as_mut(), l.as_mut(), epsilon, seed, &opts.config) {
                    Ok(t) => traces.push(t),
                    Err(e) => eprintln!("task {} skipped: {e}", task.seed),
                }
            }
            let manifest = export_dataset(&out, &traces, &opts.config)?;
            let steps: usize = manifest.episodes.iter().map(|e| e.steps).sum();
            println!(
                "wrote {} episodes ({steps} labeled steps) to {}",
                manifest.episodes.len(),
                out.display()
            );
        }
        Command::Serve { bind, vf } => {
            let server = Server::start(bind.as_str(), vf, VfContext::from_config(&config))?;
            println!("listening on {}", server.local_addr());
            std::io::stdout().flush().ok();
            server.wait();
        }
        Command::Render {
            task,
            out,
            opening_iou,
        } => {
            let task = TaskSpec::load(&task)?;
            let scene = build_scene(&task, &config)?;
            let camera = Camera::new(config.scene.workspace_size);
            let rim = scene.bag.rim_polygon(&scene.world);
            let filled = match opening_iou {
                Some(t) => perturb_opening(&rim, &camera, t, task.seed)?.filled,
                None => opening_masks(&rim, &camera)?.0,
            };
            let obs = observe(&scene.world, &camera, &filled);
            image::write_observation(&out, &bagbench::bench::observation_tensor(&obs))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
