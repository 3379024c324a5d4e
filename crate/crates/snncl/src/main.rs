use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use snncl::config::ExperimentConfig;
use snncl::error::AppError;
use snncl::report::emit_report;
use snncl::runner::{self, AggregateRow, DataCache, RunOptions, RunRecord};
use snncl_core::experiment::Session;
use snncl_core::seed::SeedStreams;

/// Spiking continual-learning experiments on split image benchmarks.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration (every seed and m_max it lists) and write a report.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run several configurations, or one configuration over an m_max grid,
    /// and aggregate across seeds.
    Sweep {
        /// Configuration files; defaults are used when none is given.
        #[arg(long = "config", short = 'c')]
        configs: Vec<PathBuf>,
        /// Override a key in every configuration (`key=value`).
        #[arg(long = "set", short = 's')]
        overrides: Vec<String>,
        /// Comma-separated m_max grid applied to every configuration.
        #[arg(long, value_delimiter = ',')]
        m_max: Vec<f64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a checkpoint on every task of a configuration.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Build report files from stored run records.
    Report {
        /// Run directories, or directories containing run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output directory.
        #[arg(long, short = 'o')]
        out: PathBuf,
    },
    /// Print the full configuration, defaults included.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Override a configuration key (`key=value`, dotted for nested keys).
    #[arg(long = "set", short = 's')]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, AppError> {
        load_config(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Keep a checkpoint after every task.
    #[arg(long)]
    keep_checkpoints: bool,
    /// Stop each run after this many tasks (resume by running again).
    #[arg(long)]
    stop_after: Option<usize>,
    /// No per-task progress lines.
    #[arg(long, short = 'q')]
    quiet: bool,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions { keep_all_checkpoints: self.keep_checkpoints, stop_after: self.stop_after, verbose: !self.quiet }
    }
}

fn load_config(path: Option<&std::path::Path>, overrides: &[String]) -> Result<ExperimentConfig, AppError> {
    match path {
        Some(p) => ExperimentConfig::load(p, overrides),
        None => ExperimentConfig::with_overrides(overrides),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), AppError> {
    match command {
        Command::Train { cfg, run } => {
            let cfg = cfg.load()?;
            let outcome = runner::sweep(std::slice::from_ref(&cfg), run.options())?;
            finish(&cfg.output_dir, outcome, run.stop_after.is_some())
        }
        Command::Sweep { configs, overrides, m_max, jobs, run } => {
            let mut cfgs = if configs.is_empty() {
                vec![load_config(None, &overrides)?]
            } else {
                configs.iter().map(|p| load_config(Some(p), &overrides)).collect::<Result<Vec<_>, _>>()?
            };
            if !m_max.is_empty() {
                cfgs.iter_mut().for_each(|c| c.m_max_sweep = m_max.clone());
            }
            if let Some(n) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| AppError::Runtime(e.to_string()))?;
            }
            let out = cfgs[0].output_dir.clone();
            let outcome = runner::sweep(&cfgs, run.options())?;
            finish(&out, outcome, run.stop_after.is_some())
        }
        Command::Eval { cfg, checkpoint } => {
            let cfg = cfg.load()?;
            let run = cfg.expand().into_iter().next().expect("at least one seed");
            let data = DataCache::default().get(&run)?;
            let tasks = runner::build_tasks(&run, &data)?;
            let model = snncl::checkpoint::load(&checkpoint)?;
            let session = Session {
                train: &data.train,
                test: &data.test,
                tasks: &tasks,
                protocol: run.protocol(),
                streams: SeedStreams::new(run.seeds[0]),
            };
            session.check(&model)?;
            let evals = session.evaluate_all(&model);
            let rows: Vec<serde_json::Value> = evals
                .iter()
                .map(|e| {
                    serde_json::json!({
                        "task": e.task + 1,
                        "classes": tasks.tasks[e.task].classes,
                        "correct": e.correct,
                        "total": e.total,
                        "accuracy": e.accuracy(),
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows).expect("json"));
            Ok(())
        }
        Command::Report { runs, out } => {
            let mut records: Vec<RunRecord> = Vec::new();
            for dir in &runs {
                records.extend(runner::collect_records(dir)?);
            }
            for path in emit_report(&records, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Config { cfg } => {
            print!("{}", cfg.load()?.to_toml());
            Ok(())
        }
    }
}

fn finish(out: &std::path::Path, outcome: runner::SweepOutcome, partial: bool) -> Result<(), AppError> {
    for (hash, e) in &outcome.failures {
        eprintln!("run {hash} failed: {e}");
    }
    if !outcome.aggregate.is_empty() {
        print_aggregate(&outcome.aggregate);
        for path in emit_report(&outcome.records, out)? {
            eprintln!("wrote {}", path.display());
        }
    } else if partial {
        eprintln!("runs stopped early; run the same command again to resume");
    }
    match outcome.failures.into_iter().next() {
        Some((_, e)) if outcome.records.is_empty() => Err(e),
        Some(_) => Err(AppError::Runtime("some runs failed".into())),
        None => Ok(()),
    }
}

fn print_aggregate(rows: &[AggregateRow]) {
    let fmt = |s: Option<runner::Spread>| s.map(|s| format!("{:.4}±{:.4}", s.mean, s.std)).unwrap_or_else(|| "-".into());
    println!("name\tmode\tm_max\truns\tMA\tBWT\tFWT\tA_final\tMO");
    for r in rows {
        let mode = serde_json::to_value(r.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.1}",
            r.name,
            mode,
            r.m_max,
            r.runs,
            fmt(Some(r.mean_accuracy)),
            fmt(r.backward_transfer),
            fmt(r.forward_transfer),
            fmt(Some(r.final_task_accuracy)),
            r.memory_overhead,
        );
    }
}
