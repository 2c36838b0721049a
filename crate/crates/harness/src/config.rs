//! Experiment configuration: defaults, a flat `key = value` file format, and
//! validation. Every field can also be overridden from the command line; the
//! effective configuration is echoed into the output directory in the same
//! flat format so a run can be reproduced from its artifacts alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use edgesched_core::model::{
    expand_host_types, load_host_table, stock_host_types, ClusterConfig, HyperParams,
};
use edgesched_core::workload::{load_trace, ArrivalModel, DemandMode, Partition, SyntheticParams};
use edgesched_core::{Error, Result};

/// Where per-interval task demands come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkloadChoice {
    /// Seeded random-walk demands.
    Synthetic,
    /// Recorded traces loaded from a file or directory.
    TraceDir(PathBuf),
}

/// Full description of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Policy name, one of [`edgesched_core::schedulers::SCHEDULER_NAMES`].
    pub scheduler: String,
    /// Host table file; when absent the stock host types are instantiated
    /// according to `host_counts`.
    pub cluster: Option<PathBuf>,
    /// Instances of each stock host type, in catalogue order.
    pub host_counts: Vec<usize>,
    pub interval_seconds: f64,
    pub max_tasks: usize,
    /// Intervals per learning episode.
    pub episode_size: usize,
    pub hyperparams: HyperParams,
    pub workload: WorkloadChoice,
    /// Which side of the trace split to draw from; ignored for synthetic
    /// workloads.
    pub trace_partition: Partition,
    pub arrival: ArrivalModel,
    pub seed: u64,
    /// Scheduling intervals to simulate (per agent).
    pub intervals: usize,
    /// Concurrent learner replicas; only the actor-critic scheduler accepts
    /// more than one.
    pub agents: usize,
    /// Feature normalization table to load; fitted on the fly when absent.
    pub minmax: Option<PathBuf>,
    /// Directory receiving the run artifacts.
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scheduler: "a3c".to_string(),
            cluster: None,
            host_counts: vec![2, 2, 2, 2],
            interval_seconds: 300.0,
            max_tasks: 16,
            episode_size: 12,
            hyperparams: HyperParams::stock(),
            workload: WorkloadChoice::Synthetic,
            trace_partition: Partition::Train,
            arrival: ArrivalModel::default(),
            seed: 7,
            intervals: 288,
            agents: 1,
            minmax: None,
            output: PathBuf::from("edgesched-run"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|part| parse_num(key, part.trim()))
        .collect()
}

fn parse_partition(value: &str) -> Result<Partition> {
    match value {
        "train" => Ok(Partition::Train),
        "test" => Ok(Partition::Test),
        "all" => Ok(Partition::All),
        other => Err(Error::config(format!(
            "trace_partition: expected train, test or all, got {other:?}"
        ))),
    }
}

fn partition_name(partition: Partition) -> &'static str {
    match partition {
        Partition::Train => "train",
        Partition::Test => "test",
        Partition::All => "all",
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting. Shared by the file parser and the
    /// command-line override path so both accept exactly the same keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scheduler" => self.scheduler = value.to_string(),
            "cluster" => self.cluster = Some(PathBuf::from(value)),
            "hosts" => self.host_counts = parse_list(key, value)?,
            "interval_seconds" => self.interval_seconds = parse_num(key, value)?,
            "max_tasks" => self.max_tasks = parse_num(key, value)?,
            "episode_size" => self.episode_size = parse_num(key, value)?,
            "hyperparams" => {
                let w: Vec<f64> = parse_list(key, value)?;
                if w.len() != 5 {
                    return Err(Error::config(format!(
                        "hyperparams: expected 5 weights, got {}",
                        w.len()
                    )));
                }
                self.hyperparams = HyperParams::new(w[0], w[1], w[2], w[3], w[4])?;
            }
            "workload" => {
                self.workload = if value == "synthetic" {
                    WorkloadChoice::Synthetic
                } else {
                    WorkloadChoice::TraceDir(PathBuf::from(value))
                };
            }
            "trace_partition" => self.trace_partition = parse_partition(value)?,
            "mean_new_tasks" => self.arrival.mean_new_tasks = parse_num(key, value)?,
            "std_new_tasks" => self.arrival.std_new_tasks = parse_num(key, value)?,
            "mean_duration" => self.arrival.mean_duration = parse_num(key, value)?,
            "std_duration" => self.arrival.std_duration = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "intervals" => self.intervals = parse_num(key, value)?,
            "agents" => self.agents = parse_num(key, value)?,
            "minmax" => self.minmax = Some(PathBuf::from(value)),
            "output" => self.output = PathBuf::from(value),
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a flat config file: one `key = value` per line, `#` comments,
    /// blank lines ignored. Later keys override earlier ones.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        let text = std::fs::read_to_string(path)?;
        let display = path.display().to_string();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: display.clone(),
                row: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    path: display.clone(),
                    row: i + 1,
                    msg: e.to_string(),
                })?;
        }
        Ok(config)
    }

    /// Renders the effective configuration in the flat file format, suitable
    /// both for humans and for feeding back through [`Self::from_file`].
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        let w = self.hyperparams.as_array();
        let _ = writeln!(out, "scheduler = {}", self.scheduler);
        if let Some(cluster) = &self.cluster {
            let _ = writeln!(out, "cluster = {}", cluster.display());
        }
        let counts: Vec<String> = self.host_counts.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "hosts = {}", counts.join(","));
        let _ = writeln!(out, "interval_seconds = {}", self.interval_seconds);
        let _ = writeln!(out, "max_tasks = {}", self.max_tasks);
        let _ = writeln!(out, "episode_size = {}", self.episode_size);
        let _ = writeln!(
            out,
            "hyperparams = {},{},{},{},{}",
            w[0], w[1], w[2], w[3], w[4]
        );
        match &self.workload {
            WorkloadChoice::Synthetic => {
                let _ = writeln!(out, "workload = synthetic");
            }
            WorkloadChoice::TraceDir(dir) => {
                let _ = writeln!(out, "workload = {}", dir.display());
            }
        }
        let _ = writeln!(
            out,
            "trace_partition = {}",
            partition_name(self.trace_partition)
        );
        let _ = writeln!(out, "mean_new_tasks = {}", self.arrival.mean_new_tasks);
        let _ = writeln!(out, "std_new_tasks = {}", self.arrival.std_new_tasks);
        let _ = writeln!(out, "mean_duration = {}", self.arrival.mean_duration);
        let _ = writeln!(out, "std_duration = {}", self.arrival.std_duration);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "intervals = {}", self.intervals);
        let _ = writeln!(out, "agents = {}", self.agents);
        if let Some(minmax) = &self.minmax {
            let _ = writeln!(out, "minmax = {}", minmax.display());
        }
        let _ = writeln!(out, "output = {}", self.output.display());
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !edgesched_core::schedulers::SCHEDULER_NAMES.contains(&self.scheduler.as_str()) {
            return Err(Error::config(format!(
                "unknown scheduler {:?}; available: {}",
                self.scheduler,
                edgesched_core::schedulers::SCHEDULER_NAMES.join(", ")
            )));
        }
        if self.intervals == 0 {
            return Err(Error::config("intervals must be at least 1"));
        }
        if self.agents == 0 {
            return Err(Error::config("agents must be at least 1"));
        }
        if self.agents > 1 && self.scheduler != "a3c" {
            return Err(Error::config(format!(
                "scheduler {:?} is single-agent; only a3c trains with agents > 1",
                self.scheduler
            )));
        }
        if self.cluster.is_none() {
            if self.host_counts.is_empty() || self.host_counts.len() > stock_host_types().len() {
                return Err(Error::config(format!(
                    "hosts: expected 1 to {} counts",
                    stock_host_types().len()
                )));
            }
            if self.host_counts.iter().sum::<usize>() == 0 {
                return Err(Error::config("hosts: at least one host is required"));
            }
        }
        // Interval length, max_tasks and episode_size bounds are enforced by
        // the cluster constructor; build one to surface errors early.
        self.cluster_config()?;
        Ok(())
    }

    /// Materializes the cluster: hosts from the table file or the stock
    /// catalogue, plus the interval, episode and loss-weight settings.
    pub fn cluster_config(&self) -> Result<ClusterConfig> {
        let hosts = match &self.cluster {
            Some(path) => load_host_table(path)?,
            None => expand_host_types(&stock_host_types(), &self.host_counts),
        };
        ClusterConfig::new(
            hosts,
            self.interval_seconds,
            self.max_tasks,
            self.episode_size,
            self.hyperparams,
        )
    }

    /// Builds the demand source, loading trace files if configured.
    pub fn demand_mode(&self) -> Result<DemandMode> {
        match &self.workload {
            WorkloadChoice::Synthetic => Ok(DemandMode::Synthetic(SyntheticParams::default())),
            WorkloadChoice::TraceDir(dir) => Ok(DemandMode::Traces {
                streams: load_trace(dir)?,
                partition: self.trace_partition,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn file_round_trips_through_flat_text() {
        let mut config = ExperimentConfig::default();
        config.set("scheduler", "dqn").unwrap();
        config.set("hosts", "1,0,2,0").unwrap();
        config.set("hyperparams", "1,0,0,0,0").unwrap();
        config.set("seed", "99").unwrap();
        config.set("intervals", "36").unwrap();
        config.set("output", "/tmp/some-run").unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(&path, config.to_flat_text()).unwrap();
        let reread = ExperimentConfig::from_file(&path).unwrap();

        assert_eq!(reread.scheduler, "dqn");
        assert_eq!(reread.host_counts, vec![1, 0, 2, 0]);
        assert_eq!(reread.hyperparams.as_array(), [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(reread.seed, 99);
        assert_eq!(reread.intervals, 36);
        assert_eq!(reread.output, PathBuf::from("/tmp/some-run"));
        assert_eq!(reread.to_flat_text(), config.to_flat_text());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(&path, "# header\n\nseed = 3  # trailing\n").unwrap();
        let config = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(config.seed, 3);
    }

    #[test]
    fn parse_errors_carry_the_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(&path, "seed = 1\nnot a pair\n").unwrap();
        let err = ExperimentConfig::from_file(&path).unwrap_err();
        assert!(err.to_string().contains("row 2"), "got: {err}");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut config = ExperimentConfig::default();
        assert!(config.set("no_such_key", "1").is_err());
        assert!(config.set("intervals", "twelve").is_err());
        assert!(config.set("hyperparams", "1,2").is_err());
        assert!(config.set("trace_partition", "half").is_err());
    }

    #[test]
    fn validation_rejects_multi_agent_heuristics() {
        let mut config = ExperimentConfig::default();
        config.set("scheduler", "lr-mmt").unwrap();
        config.set("agents", "4").unwrap();
        assert!(config.validate().is_err());
        config.set("scheduler", "a3c").unwrap();
        config.validate().unwrap();
    }

    #[test]
    fn validation_rejects_empty_clusters() {
        let mut config = ExperimentConfig::default();
        config.set("hosts", "0,0,0,0").unwrap();
        assert!(config.validate().is_err());
    }
}
