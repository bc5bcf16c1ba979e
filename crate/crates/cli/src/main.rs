use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use togsim_core::pipeline::{Pipeline, RunConfig};
use togsim_core::tasksim::TaskKind;
use togsim_core::Error;

#[derive(Parser)]
#[command(name = "togsim", version, about = "Task-oriented grasping: generate, collect, train, evaluate")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "TOGSIM_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Overrides `master_seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for every artifact.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the training and held-out tool libraries.
    Gen,
    /// Collect one round of episodes (0 = random stage-0 data).
    Collect {
        #[arg(long, value_parser = parse_task)]
        task: TaskKind,
        #[arg(long)]
        round: u32,
    },
    /// Train the checkpoint for one round.
    Train {
        #[arg(long, value_parser = parse_task)]
        task: TaskKind,
        #[arg(long)]
        round: u32,
    },
    /// Evaluate the final checkpoint against the baselines on held-out tools.
    Eval {
        #[arg(long, value_parser = parse_task)]
        task: TaskKind,
    },
    /// Run every stage, skipping those already done.
    Pipeline,
    /// Re-render a recorded episode as `task:round:index`.
    Inspect {
        episode: String,
        /// Output path stem; defaults to `<out>/inspect/<task>_<round>_<index>`.
        #[arg(long)]
        stem: Option<PathBuf>,
    },
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    match s {
        "sweep" => Ok(TaskKind::Sweep),
        "hammer" => Ok(TaskKind::Hammer),
        _ => Err(format!("unknown task `{s}` (sweep or hammer)")),
    }
}

fn parse_episode(s: &str) -> Result<(TaskKind, u32, u64), Error> {
    let bad = || Error::config("episode", format!("`{s}` is not task:round:index"));
    let mut it = s.split(':');
    let (Some(t), Some(r), Some(i), None) = (it.next(), it.next(), it.next(), it.next()) else {
        return Err(bad());
    };
    let task = parse_task(t).map_err(|e| Error::config("episode", e))?;
    Ok((task, r.parse().map_err(|_| bad())?, i.parse().map_err(|_| bad())?))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::MissingPrerequisite { .. } | Error::HashMismatch { .. } => 3,
        Error::NonFinite { .. } => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let c = &cli.common;
    let path = c.config.as_ref().ok_or_else(|| Error::config("config", "--config is required"))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = c.seed {
        config.master_seed = seed;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(c.workers)
        .build_global()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let mut p = Pipeline::new(config, &c.out)?;
    p.verbose = !c.quiet;
    match cli.cmd {
        Cmd::Gen => p.gen(),
        Cmd::Collect { task, round } => p.collect(task, round).map(drop),
        Cmd::Train { task, round } => p.train(task, round).map(drop),
        Cmd::Eval { task } => {
            let report = p.eval(task)?;
            for m in &report.methods {
                println!(
                    "{:<18} {:.3} [{:.3}, {:.3}]",
                    m.method.as_str(),
                    m.overall.rate,
                    m.overall.ci_low,
                    m.overall.ci_high
                );
            }
            Ok(())
        }
        Cmd::Pipeline => {
            let s = p.run_all()?;
            for t in &s.tasks {
                println!("{}", t.task);
                for (m, r) in &t.rates {
                    println!("  {:<18} {r:.3}", m.as_str());
                }
                println!("  audit fraction {:.2} over {} tools", t.audit_fraction, t.audit_tools);
            }
            Ok(())
        }
        Cmd::Inspect { episode, stem } => {
            let (task, round, index) = parse_episode(&episode)?;
            let stem = match stem {
                Some(s) => s,
                None => {
                    let d = c.out.join("inspect");
                    std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                    d.join(format!("{task}_{round}_{index}"))
                }
            };
            let r = p.inspect(task, round, index, &stem)?;
            println!("{}", r.grasp_image.display());
            println!("{}", r.task_image.display());
            println!("grasp pixel {:.1} {:.1}  S_G {}  S_T {}", r.grasp_pixel.0, r.grasp_pixel.1, r.s_g as u8, r.s_t as u8);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("togsim: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
