//! `aotsim`: object generation, exploration, training, goal evaluation,
//! axis inference and the full benchmark matrix.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aotsim::harness::report::{write_json, write_jsonl};
use aotsim::harness::run::{self, RunOutput};
use aotsim::harness::{summarize, write_csv, ExperimentConfig, Manifest, RunContext, TraceSource};
use aotsim::interaction::log::{read_trajectory, TrajectoryWriter};
use aotsim::{BaselineKind, Error};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "aotsim",
    version,
    about = "Arrow-of-Time articulated-object simulator and benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured object suite as JSON files into --out.
    GenObjects(Common),
    /// Exploration episodes for every policy.
    Explore(Common),
    /// Self-supervised training of the learned scorer.
    Train(Common),
    /// Goal-conditioned evaluation for every policy.
    EvalGoal(Common),
    /// Joint-axis inference from action traces.
    InferAxis {
        #[command(flatten)]
        common: Common,
        /// Infer from this trajectory log instead of generating traces.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Exploration plus goal evaluation for every policy.
    Bench(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Policy to run; repeat or separate with commas. Overrides the config.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    /// Object directory, object file or suite spec. Overrides the config.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Worker threads; 0 means one per core. Overrides the config.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if !self.policy.is_empty() {
            cfg.policies = self
                .policy
                .iter()
                .map(|p| p.parse::<BaselineKind>())
                .collect::<Result<_, _>>()?;
        }
        if let Some(s) = &self.suite {
            cfg.suite = Some(s.clone());
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn context(&self) -> Result<RunContext, Error> {
        let ctx = RunContext::new(self.config()?)?;
        std::fs::create_dir_all(&self.out)?;
        let cancel = ctx.cancel.clone();
        // a second handler cannot be installed; tests call this once per process
        let _ = ctrlc::set_handler(move || cancel.cancel());
        Ok(ctx)
    }
}

fn write_manifest(out: &Path, command: &str, ctx: &RunContext) -> Result<(), Error> {
    write_json(
        &out.join("manifest.json"),
        &Manifest::new(command, &ctx.cfg, &ctx.suite),
    )
}

fn write_results(
    out: &Path,
    command: &str,
    ctx: &RunContext,
    result: &RunOutput,
) -> Result<(), Error> {
    write_csv(&out.join("results.csv"), &result.rows)?;
    write_json(
        &out.join("summary.json"),
        &summarize(command, &result.rows, result.interrupted),
    )?;
    write_manifest(out, command, ctx)
}

#[derive(Serialize)]
struct TrainSummary {
    command: &'static str,
    interrupted: bool,
    epochs_completed: usize,
    final_position_loss: Option<f64>,
    final_dist_loss: Option<f64>,
    final_aot_loss: Option<f64>,
}

#[derive(Serialize)]
struct AxisGroup {
    group: String,
    traces: usize,
    mean_angle_error_deg: f64,
}

#[derive(Serialize)]
struct AxisSummary {
    command: &'static str,
    interrupted: bool,
    records: usize,
    failures: usize,
    groups: Vec<AxisGroup>,
}

/// Runs a command; `Ok(false)` means it was interrupted after flushing.
fn execute(command: Command) -> Result<bool, Error> {
    match command {
        Command::GenObjects(c) => {
            let ctx = c.context()?;
            for o in &ctx.suite {
                o.save(c.out.join(format!("{}.json", o.id)))?;
            }
            write_manifest(&c.out, "gen-objects", &ctx)?;
            Ok(true)
        }
        Command::Explore(c) => {
            let ctx = c.context()?;
            let keep = ctx.cfg.explore.write_trajectories;
            let (result, episodes) = run::explore(&ctx, keep)?;
            if keep {
                let mut w = TrajectoryWriter::create(&c.out.join("trajectories.jsonl"))?;
                for t in episodes.iter().flat_map(|e| &e.transitions) {
                    w.write(t)?;
                }
                w.flush()?;
            }
            write_results(&c.out, "explore", &ctx, &result)?;
            Ok(!result.interrupted)
        }
        Command::EvalGoal(c) => {
            let ctx = c.context()?;
            let result = run::eval_goal(&ctx)?;
            write_results(&c.out, "eval-goal", &ctx, &result)?;
            Ok(!result.interrupted)
        }
        Command::Bench(c) => {
            let ctx = c.context()?;
            let result = run::bench(&ctx)?;
            write_results(&c.out, "bench", &ctx, &result)?;
            Ok(!result.interrupted)
        }
        Command::Train(c) => {
            let ctx = c.context()?;
            let ckpt = c.out.join("checkpoints");
            if ctx.cfg.train.checkpoint_every > 0 {
                std::fs::create_dir_all(&ckpt)?;
            }
            let mut log = BufWriter::new(File::create(c.out.join("epochs.jsonl"))?);
            let mut io_error = None;
            let cancel = ctx.cancel.clone();
            let trained = ctx.install(|| {
                aotsim::tasks::run_training(
                    &ctx.cfg.train,
                    &ctx.cfg.cem,
                    &ctx.suite,
                    ctx.cfg.seed,
                    Some(&ckpt),
                    |l| {
                        let line = serde_json::to_string(l).expect("epoch log serializes");
                        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                            io_error = Some(e);
                            return false;
                        }
                        !cancel.is_cancelled()
                    },
                )
            })??;
            if let Some(e) = io_error {
                return Err(e.into());
            }
            trained.model.save(c.out.join("model.json"))?;
            let interrupted = trained.logs.len() < ctx.cfg.train.epochs;
            let last = trained.logs.last();
            write_json(
                &c.out.join("summary.json"),
                &TrainSummary {
                    command: "train",
                    interrupted,
                    epochs_completed: trained.logs.len(),
                    final_position_loss: last.and_then(|l| l.position_loss),
                    final_dist_loss: last.and_then(|l| l.dist_loss),
                    final_aot_loss: last.and_then(|l| l.aot_loss),
                },
            )?;
            write_manifest(&c.out, "train", &ctx)?;
            Ok(!interrupted)
        }
        Command::InferAxis { common: c, traces } => {
            let ctx = c.context()?;
            let episodes = match &traces {
                Some(p) => run::group_episodes(read_trajectory(p)?, |_| TraceSource::Logged),
                None => {
                    let generated = run::generate_traces(&ctx)?;
                    run::log_traces(&c.out.join("trajectories.jsonl"), &generated)?
                }
            };
            let interrupted = ctx.cancel.is_cancelled();
            let records = run::infer_episodes(&ctx, &episodes);
            write_jsonl(&c.out.join("axes.jsonl"), &records)?;
            write_json(
                &c.out.join("summary.json"),
                &AxisSummary {
                    command: "infer-axis",
                    interrupted,
                    records: records.len(),
                    failures: records.iter().filter(|r| r.estimate.is_none()).count(),
                    groups: run::summarize_axes(&records)
                        .into_iter()
                        .map(|(group, (traces, mean))| AxisGroup {
                            group,
                            traces,
                            mean_angle_error_deg: mean,
                        })
                        .collect(),
                },
            )?;
            write_manifest(&c.out, "infer-axis", &ctx)?;
            Ok(!interrupted)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("aotsim: interrupted; partial results written");
            ExitCode::from(1)
        }
        Err(e @ (Error::Config(_) | Error::ObjectSpec(_))) => {
            eprintln!("aotsim: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("aotsim: {e}");
            ExitCode::from(1)
        }
    }
}
