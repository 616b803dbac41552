use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use maca::config::RunConfig;
use maca::credit::AdvantageMethod;
use maca::env::{spawn_episode, EnvConfig, Scenario};
use maca::eval::{self, DecisionSample, EvalConfig};
use maca::render;
use maca::seed::{self, stream};
use maca::trace;
use maca::trainer::{self, TrainOptions};

#[derive(Parser)]
#[command(name = "maca", version, about = "Train and evaluate multi-actor centralized-critic UAV swarms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Train actors and critic; writes into <out>/<scenario>-<method>-seed<seed>/.
    Train {
        #[arg(long, default_value = "2U1O")]
        scenario: Scenario,
        /// maca, coma or shapley
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Total environment steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// TOML file with [env], [train], [advantage] and [eas] overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from the run's resume.json if present.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy evaluation of a checkpoint directory.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: Scenario,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, value_enum, default_value = "on")]
        eas: Toggle,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; defaults to a sibling of the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of episode traces to export.
        #[arg(long, default_value_t = 3)]
        traces: usize,
    },
    /// Render SVG plots and a metrics summary for a run directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
    /// Render one exported episode trace as SVG.
    Replay {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        svg: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            scenario,
            method,
            seed,
            steps,
            out,
            config,
            resume,
        } => {
            let mut run = match &config {
                Some(p) => RunConfig::load(p, scenario).with_context(|| format!("reading {}", p.display()))?,
                None => RunConfig::preset(scenario, AdvantageMethod::Maca, 0),
            };
            if let Some(m) = method {
                run.train.method = AdvantageMethod::parse(&m)?;
            }
            if let Some(s) = seed {
                run.train.seed = s;
            }
            if let Some(s) = steps {
                run.train.total_env_steps = s;
            }
            let dir = out.join(format!("{}-{}-seed{}", run.train.scenario, run.train.method.name(), run.train.seed));
            let summary = trainer::train(&run.train, &dir, &TrainOptions { resume, stop_after: None })?;
            let last = summary.curve.last().map_or(f64::NAN, |r| r.mean_return);
            println!(
                "trained {} env steps, {} episodes, {} train steps; final greedy return {last:.3}",
                summary.env_steps, summary.episodes, summary.train_steps
            );
            println!("artifacts in {}", dir.display());
        }
        Command::Evaluate {
            checkpoint,
            scenario,
            episodes,
            eas,
            seed,
            out,
            traces,
        } => {
            let eas_on = matches!(eas, Toggle::On);
            let cfg = EvalConfig::new(episodes, seed, eas_on);
            let report = eval::evaluate_checkpoint(&checkpoint, scenario, &cfg)?;
            let out = out.unwrap_or_else(|| {
                let parent = checkpoint.parent().map(PathBuf::from).unwrap_or_default();
                parent.join(format!("eval-{scenario}-eas-{}-seed{seed}", if eas_on { "on" } else { "off" }))
            });
            eval::write_eval_csvs(&out, &report)?;
            for (k, rec) in report.records.iter().take(traces).enumerate() {
                trace::write_trace(&out.join(trainer::TRACE_DIR).join(format!("episode_{k:04}.csv")), &rec.trace_rows())?;
            }

            let env = scenario.config();
            let (actors, _) = trainer::load_actors(&checkpoint, &env)?;
            let world = spawn_episode(&env, seed::derive(seed, stream::EVAL_SPAWN, 0))?;
            let sample = DecisionSample {
                world: &world,
                env: &env,
                agent: 0,
            };
            let timing = eval::measure_response_time(actors.policy(0), &sample, cfg.eas.as_ref(), 1000)?;
            fs::write(out.join("response_time.txt"), format!("median_us {}\n", timing.median_us))?;

            let m = &report.metrics;
            println!("episodes          {}", m.episodes);
            println!("failure_rate      {:.4}", m.failure_rate);
            println!("min_uav_uav (m)   {:.3}", m.min_uav_uav);
            println!("min_uav_obs (m)   {:.3}", m.min_uav_obs);
            println!("energy_surrogate  {:.1}", m.energy_surrogate);
            println!("eas_intervention  {:.4}", m.eas_intervention_rate);
            println!("response (us)     {:.2}", timing.median_us);
            println!("written to {}", out.display());
        }
        Command::Plot { run } => {
            if !run.is_dir() {
                bail!("{} is not a directory", run.display());
            }
            let report = render::render_outputs(&run)?;
            for n in &report.notices {
                println!("note: {n}");
            }
            for p in &report.written {
                println!("wrote {}", p.display());
            }
        }
        Command::Replay { episode, svg } => {
            let rows = trace::read_trace(&episode)?;
            if let Some(parent) = svg.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&svg, render::trajectory_svg(&rows, &EnvConfig::default()))?;
            println!("wrote {}", svg.display());
        }
    }
    Ok(())
}
