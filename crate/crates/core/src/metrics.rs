//! The five normalized interval metrics, their convex combination into the
//! scheduling loss, and end-of-run aggregates.

use crate::error::{Error, Result};
use crate::model::{Host, HyperParams};
use crate::simulator::IntervalOutcome;

/// The five normalized objectives for one interval, each in [0, 1].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntervalMetrics {
    /// Average energy consumption, weighted by host energy weights.
    pub aec: f64,
    /// Average response time of leaving tasks over the running maximum.
    pub art: f64,
    /// Average migration time per active task over the running maximum
    /// response time.
    pub amt: f64,
    /// Billed cost over the full-rate cost of the whole cluster.
    pub cost: f64,
    /// Mean SLA violation score of leaving tasks.
    pub slav: f64,
}

impl IntervalMetrics {
    pub fn as_array(&self) -> [f64; 5] {
        [self.aec, self.art, self.amt, self.cost, self.slav]
    }
}

/// Running maxima used to normalize time-valued metrics. Updated with each
/// interval's observations before that interval's metrics are computed, so
/// the maxima are never behind the values they normalize.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningNormalizers {
    pub max_response_time: f64,
    pub max_migration_time: f64,
}

impl RunningNormalizers {
    pub fn update(&mut self, outcome: &IntervalOutcome) {
        for done in &outcome.completed {
            self.max_response_time = self.max_response_time.max(done.response_time);
        }
        self.max_migration_time = self.max_migration_time.max(outcome.max_migration_time);
    }
}

/// Energy metric: weighted energy used over the weighted worst case of every
/// host at peak power for the whole interval.
pub fn aec(outcome: &IntervalOutcome, hosts: &[Host], interval_seconds: f64) -> Result<f64> {
    let mut used = 0.0;
    let mut max = 0.0;
    for (host, hi) in hosts.iter().zip(&outcome.per_host) {
        used += host.energy_weight * hi.energy_joules;
        max += host.energy_weight * host.power_curve.max_watts() * interval_seconds;
    }
    if max <= 0.0 {
        return Err(Error::invariant(
            "energy normalization is zero: all host energy weights are 0",
        ));
    }
    Ok((used / max).clamp(0.0, 1.0))
}

/// Response-time metric: mean response time of this interval's leaving tasks
/// over the largest response time seen so far. 0 when nothing leaves.
pub fn art(outcome: &IntervalOutcome, normalizers: &RunningNormalizers) -> f64 {
    if outcome.completed.is_empty() || normalizers.max_response_time <= 0.0 {
        return 0.0;
    }
    let mean = outcome
        .completed
        .iter()
        .map(|c| c.response_time)
        .sum::<f64>()
        / outcome.completed.len() as f64;
    (mean / normalizers.max_response_time).clamp(0.0, 1.0)
}

/// Migration-time metric: migration time averaged over all active tasks,
/// normalized by the running maximum response time. 0 when nothing migrates.
pub fn amt(outcome: &IntervalOutcome, normalizers: &RunningNormalizers) -> f64 {
    if outcome.migrations == 0
        || outcome.active_count == 0
        || normalizers.max_response_time <= 0.0
    {
        return 0.0;
    }
    let mean = outcome.total_migration_time / outcome.active_count as f64;
    (mean / normalizers.max_response_time).clamp(0.0, 1.0)
}

/// Cost metric: dollars billed this interval over the bill if every host ran
/// occupied the whole interval.
pub fn cost(outcome: &IntervalOutcome, hosts: &[Host], interval_seconds: f64) -> f64 {
    let billed: f64 = outcome.per_host.iter().map(|h| h.cost).sum();
    let full: f64 = hosts
        .iter()
        .map(|h| h.cost_per_hour * interval_seconds / 3600.0)
        .sum();
    if full <= 0.0 {
        return 0.0;
    }
    (billed / full).clamp(0.0, 1.0)
}

/// SLA-violation metric: mean over leaving tasks of the product of the
/// throttled-lifetime fraction and the migration-time fraction.
pub fn slav(outcome: &IntervalOutcome) -> f64 {
    if outcome.completed.is_empty() {
        return 0.0;
    }
    let sum: f64 = outcome
        .completed
        .iter()
        .map(|c| (c.throttle_fraction * c.migration_fraction).clamp(0.0, 1.0))
        .sum();
    (sum / outcome.completed.len() as f64).clamp(0.0, 1.0)
}

/// All five metrics for one interval. `normalizers` must already include this
/// interval's observations.
pub fn interval_metrics(
    outcome: &IntervalOutcome,
    hosts: &[Host],
    interval_seconds: f64,
    normalizers: &RunningNormalizers,
) -> Result<IntervalMetrics> {
    Ok(IntervalMetrics {
        aec: aec(outcome, hosts, interval_seconds)?,
        art: art(outcome, normalizers),
        amt: amt(outcome, normalizers),
        cost: cost(outcome, hosts, interval_seconds),
        slav: slav(outcome),
    })
}

/// Convex combination of the five metrics under the scheduling weights.
pub fn composite_loss(metrics: &IntervalMetrics, hyperparams: &HyperParams) -> f64 {
    metrics
        .as_array()
        .iter()
        .zip(hyperparams.as_array())
        .map(|(m, w)| m * w)
        .sum()
}

/// One row of a finished run, carrying the sums needed to aggregate exactly.
#[derive(Debug, Clone, Default)]
pub struct IntervalRecord {
    pub interval: usize,
    pub active: usize,
    pub arriving: usize,
    pub leaving: usize,
    pub deferred: usize,
    pub migrations: usize,
    pub migration_time: f64,
    pub energy_joules: f64,
    pub cost_usd: f64,
    pub mean_utilization: f64,
    /// Sum of response times of tasks that left this interval.
    pub response_sum: f64,
    /// Sum of completion times of tasks that left this interval.
    pub completion_sum: f64,
    /// How many leaving tasks finished within their expected completion time.
    pub within_expected: usize,
    /// Sum of per-task SLA violation scores of leaving tasks.
    pub sla_sum: f64,
    pub metrics: IntervalMetrics,
    pub loss: f64,
    pub penalty: f64,
    pub loss_pg: f64,
}

/// Whole-run summary derived from the per-interval records.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub intervals: usize,
    pub total_energy_joules: f64,
    pub total_cost_usd: f64,
    pub completed_tasks: usize,
    /// Mean response time per completed task, seconds.
    pub avg_response_time: f64,
    /// Mean completion time per completed task, seconds.
    pub avg_completion_time: f64,
    /// Fraction of completed tasks that met their expected completion time.
    pub within_expected_fraction: f64,
    /// Mean SLA violation score per completed task.
    pub sla_violation_fraction: f64,
    pub total_migrations: usize,
    pub migrations_per_interval: f64,
    pub migration_time_per_interval: f64,
    pub mean_utilization: f64,
    pub mean_loss: f64,
    pub mean_loss_pg: f64,
}

/// Folds per-interval records into run totals; averages over leaving tasks
/// are weighted by each interval's leaving count.
pub fn evaluation_aggregates(records: &[IntervalRecord]) -> Result<AggregateReport> {
    if records.is_empty() {
        return Err(Error::invariant("cannot aggregate an empty run"));
    }
    let n = records.len() as f64;
    let completed: usize = records.iter().map(|r| r.leaving).sum();
    let per_task = |sum: f64| if completed > 0 { sum / completed as f64 } else { 0.0 };
    let response_sum: f64 = records.iter().map(|r| r.response_sum).sum();
    let completion_sum: f64 = records.iter().map(|r| r.completion_sum).sum();
    let within: usize = records.iter().map(|r| r.within_expected).sum();
    let sla_sum: f64 = records.iter().map(|r| r.sla_sum).sum();
    let migrations: usize = records.iter().map(|r| r.migrations).sum();
    Ok(AggregateReport {
        intervals: records.len(),
        total_energy_joules: records.iter().map(|r| r.energy_joules).sum(),
        total_cost_usd: records.iter().map(|r| r.cost_usd).sum(),
        completed_tasks: completed,
        avg_response_time: per_task(response_sum),
        avg_completion_time: per_task(completion_sum),
        within_expected_fraction: per_task(within as f64),
        sla_violation_fraction: per_task(sla_sum),
        total_migrations: migrations,
        migrations_per_interval: migrations as f64 / n,
        migration_time_per_interval: records.iter().map(|r| r.migration_time).sum::<f64>() / n,
        mean_utilization: records.iter().map(|r| r.mean_utilization).sum::<f64>() / n,
        mean_loss: records.iter().map(|r| r.loss).sum::<f64>() / n,
        mean_loss_pg: records.iter().map(|r| r.loss_pg).sum::<f64>() / n,
    })
}
