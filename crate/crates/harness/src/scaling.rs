//! Agent-scaling measurement: how long shared actor-critic training takes to
//! first push the mean episode loss under a target, as a function of how many
//! agents feed the parameter store.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use edgesched_core::schedulers::{BuildArgs, GlobalParamStore};
use edgesched_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::runner::{default_fit_intervals, fit_norms, run_agents, write_atomic};

/// One measured agent count.
#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub agents: usize,
    /// Whether any update reached the target before every agent ran out of
    /// intervals.
    pub reached: bool,
    /// Seconds from store creation to the qualifying update, best of
    /// `TRIALS` runs, or the total wall time when the target was never
    /// reached.
    pub seconds: f64,
    /// Parameter updates applied by the end of the best trial.
    pub updates: usize,
    /// Time with one agent over time with this many; absent when either
    /// measurement missed the target.
    pub speedup: Option<f64>,
    /// Speedup per agent.
    pub efficiency: Option<f64>,
}

pub const SCALING_SCHEMA: &str = "# scaling v1";

/// Timed runs per agent count. Each row reports the fastest trial, the usual
/// way to suppress OS scheduling jitter in wall-clock benchmarks; with one
/// trial the ordering of sub-10 ms measurements is decided by preemption
/// luck rather than by the training system.
const TRIALS: usize = 5;

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SCALING_SCHEMA}");
    let _ = writeln!(out, "agents,reached,seconds,updates,speedup,efficiency");
    for r in rows {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.agents,
            r.reached,
            r.seconds,
            r.updates,
            opt(r.speedup),
            opt(r.efficiency)
        );
    }
    out
}

/// Trains fresh actor-critic agents for each count in `agent_counts`, timing
/// how long the shared store takes to record its first update with mean
/// episode loss at or below `target`. Every count starts from the same
/// network initialization and normalization table; agent `j` replays workload
/// seed `config.seed + j`. Each agent gives up after `config.intervals`
/// intervals, so a row can come back unreached. Each count is timed `TRIALS`
/// times and the fastest run wins. The table is also written to
/// `<output>/scaling.csv`.
pub fn measure_scaling(
    config: &ExperimentConfig,
    agent_counts: &[usize],
    target: f64,
) -> Result<Vec<ScalingRow>> {
    if agent_counts.is_empty() {
        return Err(Error::config("no agent counts to measure"));
    }
    if agent_counts.contains(&0) {
        return Err(Error::config("agent counts must be at least 1"));
    }
    if !target.is_finite() {
        return Err(Error::config("target loss must be finite"));
    }
    let mut base = config.clone();
    base.scheduler = "a3c".to_string();
    base.agents = *agent_counts.iter().max().expect("counts are non-empty");
    base.validate()?;

    let cluster = base.cluster_config()?;
    let table = match &base.minmax {
        Some(path) => edgesched_core::featurize::MinMaxTable::load(path)?,
        None => fit_norms(&base, default_fit_intervals(base.intervals))?,
    };

    let mut rows = Vec::with_capacity(agent_counts.len());
    for &agents in agent_counts {
        let mut cfg = base.clone();
        cfg.agents = agents;
        let args = BuildArgs {
            n_hosts: cluster.hosts.len(),
            max_tasks: cluster.max_tasks,
            episode_size: cluster.episode_size,
            total_intervals: cfg.intervals,
            seed: cfg.seed,
        };
        let mut best: Option<(bool, f64, usize)> = None;
        for _ in 0..TRIALS {
            let store = Arc::new(GlobalParamStore::new(&args));
            store.set_watermark_target(target);
            let start = Instant::now();
            run_agents(&cfg, &cluster, &table, &store, cfg.intervals, true)?;
            let total = start.elapsed().as_secs_f64();
            let trial = match store.watermark() {
                Some(mark) => (true, mark.elapsed.as_secs_f64(), mark.update),
                None => (false, total, store.update_count()),
            };
            let better = match &best {
                None => true,
                Some(b) => (trial.0 && !b.0) || (trial.0 == b.0 && trial.1 < b.1),
            };
            if better {
                best = Some(trial);
            }
        }
        let (reached, seconds, updates) = best.expect("at least one trial ran");
        rows.push(ScalingRow {
            agents,
            reached,
            seconds,
            updates,
            speedup: None,
            efficiency: None,
        });
    }

    let baseline = rows
        .iter()
        .find(|r| r.agents == 1 && r.reached)
        .map(|r| r.seconds);
    if let Some(t1) = baseline {
        for row in &mut rows {
            if row.reached && row.seconds > 0.0 {
                let s = t1 / row.seconds;
                row.speedup = Some(s);
                row.efficiency = Some(s / row.agents as f64);
            }
        }
    }

    std::fs::create_dir_all(&config.output)?;
    write_atomic(&config.output.join("scaling.csv"), &scaling_csv(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_marks_unreached_rows_with_empty_ratios() {
        let rows = vec![
            ScalingRow {
                agents: 1,
                reached: true,
                seconds: 10.0,
                updates: 40,
                speedup: Some(1.0),
                efficiency: Some(1.0),
            },
            ScalingRow {
                agents: 2,
                reached: false,
                seconds: 25.0,
                updates: 80,
                speedup: None,
                efficiency: None,
            },
        ];
        let text = scaling_csv(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SCALING_SCHEMA);
        assert_eq!(lines[2], "1,true,10,40,1,1");
        assert_eq!(lines[3], "2,false,25,80,,");
    }
}
