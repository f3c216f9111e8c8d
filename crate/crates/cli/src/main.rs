use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use slasim::harness::{run_experiment, sweep_status, write_outputs, RunFailure, RunOptions, RunRow};
use slasim::ExperimentConfig;

#[derive(Parser)]
#[command(name = "slasim", version, about = "Run SLA admission-control experiments")]
struct Cli {
    /// More progress output; repeat for per-run lines.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point, policy and replication of an experiment.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Worker threads; all cores by default.
        #[arg(short, long)]
        jobs: Option<usize>,
        /// Write an event trace per run under `<output>/traces`.
        #[arg(long)]
        trace: bool,
        /// Override the replication count.
        #[arg(long)]
        replications: Option<u32>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Report how many runs of a sweep have finished.
    SweepStatus {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::from_path(path)?;
    cfg.validate().with_context(|| format!("{} is not a valid experiment", path.display()))?;
    Ok(cfg)
}

fn describe(cfg: &ExperimentConfig) -> String {
    let policies: Vec<&str> = cfg.policies.iter().map(|p| p.name()).collect();
    format!(
        "{} sweep points x {} policies ({}) x {} replications = {} runs",
        cfg.sweep.values().len(),
        cfg.policies.len(),
        policies.join(", "),
        cfg.replications,
        cfg.total_runs()
    )
}

fn run(
    config: &Path,
    output: Option<PathBuf>,
    jobs: Option<usize>,
    trace: bool,
    replications: Option<u32>,
    verbose: u8,
) -> Result<bool> {
    let mut cfg = load(config)?;
    if let Some(r) = replications {
        cfg.replications = r;
        cfg.validate()?;
    }
    let dir = output.unwrap_or_else(|| cfg.output.dir.clone());
    let total = cfg.total_runs();
    if verbose > 0 {
        eprintln!("{}: {}", config.display(), describe(&cfg));
    }
    let done = AtomicUsize::new(0);
    let progress = |outcome: std::result::Result<&RunRow, &RunFailure>| {
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        match outcome {
            Ok(row) if verbose > 1 => eprintln!(
                "[{n}/{total}] {} {}={} rep={} seed={} revenue={:.4}/s accepted={}",
                row.policy,
                row.sweep_var,
                row.sweep_value,
                row.replication,
                row.seed,
                row.revenue_per_sec,
                row.total_accepted()
            ),
            Ok(_) => {}
            Err(f) => eprintln!(
                "[{n}/{total}] FAILED {} point={} rep={}: {}",
                f.policy, f.sweep_index, f.replication, f.message
            ),
        }
    };
    let options = RunOptions {
        jobs,
        output: Some(dir.clone()),
        trace,
        progress: Some(&progress),
    };
    let table = run_experiment(&cfg, &options)?;
    write_outputs(&cfg, &table, &dir).with_context(|| format!("writing results to {}", dir.display()))?;
    println!(
        "{} runs finished, {} failed; results in {}",
        table.runs.len(),
        table.failures.len(),
        dir.display()
    );
    for &policy in &table.policies {
        let series = table.series(policy);
        let cells: Vec<String> = series
            .iter()
            .map(|p| format!("{:.3}±{:.3}", p.mean_revenue, p.ci_half_width))
            .collect();
        println!("{:>14}: {}", policy.name(), cells.join(" "));
    }
    Ok(table.failures.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            output,
            jobs,
            trace,
            replications,
        } => run(&config, output, jobs, trace, replications, cli.verbose),
        Command::Validate { config } => load(&config).map(|cfg| {
            println!("{}: ok, {}", config.display(), describe(&cfg));
            true
        }),
        Command::SweepStatus { config, output } => ExperimentConfig::from_path(&config)
            .map_err(anyhow::Error::from)
            .and_then(|cfg| {
                let dir = output.unwrap_or_else(|| cfg.output.dir.clone());
                let status = sweep_status(&cfg, &dir)?;
                println!("{}: {}/{} runs complete", dir.display(), status.completed, status.expected);
                for (policy, n) in &status.per_policy {
                    println!("{:>14}: {n}", policy.name());
                }
                Ok(status.completed >= status.expected)
            }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
