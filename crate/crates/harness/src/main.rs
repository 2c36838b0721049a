use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use edgesched_harness::config::ExperimentConfig;
use edgesched_harness::report::{compare_runs, comparison_csv, comparison_table, aggregate_text};
use edgesched_harness::runner::{default_fit_intervals, fit_norms, run_experiment, write_atomic};
use edgesched_harness::scaling::{measure_scaling, scaling_csv};

/// Edge-cloud scheduling experiments: simulate, compare, scale, fit.
#[derive(Parser)]
#[command(name = "edgesched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts to the output directory.
    Run(ConfigArgs),
    /// Summarize finished runs side by side from their artifact directories.
    Compare {
        /// Run directories (each holding config.txt and intervals.csv).
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the comparison as CSV to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Measure how training time to a target loss scales with agent count.
    Scale {
        #[command(flatten)]
        config: ConfigArgs,
        /// Agent counts to measure, comma-separated.
        #[arg(long, default_value = "1,2,4")]
        agent_counts: String,
        /// Mean episode loss an update must reach to stop the clock.
        #[arg(long)]
        target_loss: f64,
    },
    /// Fit the feature normalization table from a sample run and write it.
    FitNorms {
        #[command(flatten)]
        config: ConfigArgs,
        /// Intervals to sample; defaults to the configured horizon, capped at
        /// one simulated day.
        #[arg(long)]
        sample_intervals: Option<usize>,
        /// Where to write the table.
        #[arg(long, default_value = "minmax.txt")]
        table_out: PathBuf,
    },
}

/// Experiment settings. Every field of the flat config file has a flag of the
/// same name; flags override the file.
#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheduling policy: random, lr-mmt, mad-mc, reinforce, dqn or a3c.
    #[arg(long)]
    scheduler: Option<String>,
    /// Host table CSV describing the cluster.
    #[arg(long)]
    cluster: Option<PathBuf>,
    /// Instances of each stock host type, comma-separated.
    #[arg(long)]
    hosts: Option<String>,
    /// Scheduling interval length in seconds.
    #[arg(long)]
    interval_seconds: Option<f64>,
    /// Concurrent task cap (scheduler row budget).
    #[arg(long)]
    max_tasks: Option<usize>,
    /// Intervals per learning episode.
    #[arg(long)]
    episode_size: Option<usize>,
    /// Five loss weights (energy, response, migration, cost, slav).
    #[arg(long)]
    hyperparams: Option<String>,
    /// "synthetic" or a trace file/directory.
    #[arg(long)]
    workload: Option<String>,
    /// Trace split to draw from: train, test or all.
    #[arg(long)]
    trace_partition: Option<String>,
    /// Mean of the per-interval arrival count draw.
    #[arg(long)]
    mean_new_tasks: Option<f64>,
    /// Deviation of the arrival count draw.
    #[arg(long)]
    std_new_tasks: Option<f64>,
    /// Mean task duration in seconds.
    #[arg(long)]
    mean_duration: Option<f64>,
    /// Deviation of the task duration draw.
    #[arg(long)]
    std_duration: Option<f64>,
    /// Workload and initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Scheduling intervals to simulate.
    #[arg(long)]
    intervals: Option<usize>,
    /// Concurrent learner replicas (actor-critic only).
    #[arg(long)]
    agents: Option<usize>,
    /// Feature normalization table to load instead of fitting one.
    #[arg(long)]
    minmax: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        let path_str = |p: &PathBuf| p.display().to_string();
        let overrides = [
            ("scheduler", self.scheduler.clone()),
            ("cluster", self.cluster.as_ref().map(path_str)),
            ("hosts", self.hosts.clone()),
            ("interval_seconds", self.interval_seconds.map(|v| v.to_string())),
            ("max_tasks", self.max_tasks.map(|v| v.to_string())),
            ("episode_size", self.episode_size.map(|v| v.to_string())),
            ("hyperparams", self.hyperparams.clone()),
            ("workload", self.workload.clone()),
            ("trace_partition", self.trace_partition.clone()),
            ("mean_new_tasks", self.mean_new_tasks.map(|v| v.to_string())),
            ("std_new_tasks", self.std_new_tasks.map(|v| v.to_string())),
            ("mean_duration", self.mean_duration.map(|v| v.to_string())),
            ("std_duration", self.std_duration.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("intervals", self.intervals.map(|v| v.to_string())),
            ("agents", self.agents.map(|v| v.to_string())),
            ("minmax", self.minmax.as_ref().map(path_str)),
            ("output", self.output.as_ref().map(path_str)),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                config
                    .set(key, &value)
                    .with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        Ok(config)
    }
}

fn parse_counts(text: &str) -> anyhow::Result<Vec<usize>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .with_context(|| format!("--agent-counts: cannot parse {part:?}"))
        })
        .collect()
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let config = args.resolve()?;
            config.validate()?;
            let summary = run_experiment(&config)?;
            print!("{}", aggregate_text(&summary.aggregate));
            println!("artifacts = {}", config.output.display());
        }
        Command::Compare { dirs, output } => {
            let rows = compare_runs(&dirs)?;
            print!("{}", comparison_table(&rows));
            if let Some(path) = output {
                write_atomic(&path, &comparison_csv(&rows))?;
            }
        }
        Command::Scale {
            config,
            agent_counts,
            target_loss,
        } => {
            let config = config.resolve()?;
            let counts = parse_counts(&agent_counts)?;
            let rows = measure_scaling(&config, &counts, target_loss)?;
            print!("{}", scaling_csv(&rows));
            println!("written to {}", config.output.join("scaling.csv").display());
        }
        Command::FitNorms {
            config,
            sample_intervals,
            table_out,
        } => {
            let config = config.resolve()?;
            config.validate()?;
            let sample =
                sample_intervals.unwrap_or_else(|| default_fit_intervals(config.intervals));
            let table = fit_norms(&config, sample)?;
            if let Some(parent) = table_out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            write_atomic(&table_out, &table.to_text())?;
            println!("fitted over {sample} intervals, written to {}", table_out.display());
        }
    }
    Ok(())
}
