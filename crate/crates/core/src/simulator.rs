//! Interval execution. Placements and migrations are applied at the interval
//! boundary; within an interval, demands are piecewise constant, hosts
//! throttle proportionally when over-subscribed, task progress advances by
//! the achieved-MIPS fraction, and each host's energy is integrated from its
//! measured power curve at the interval-mean utilization.

use crate::csm::{ConstrainedAction, Placement, TaskTable};
use crate::error::{Error, Result};
use crate::model::{Host, HostId, TaskId, TaskSets};

/// Power draw in watts at the given CPU utilization, linearly interpolated
/// between the host's eleven measured grid points (0%, 10%, ..., 100%).
pub fn interpolate_power(host: &Host, utilization: f64) -> Result<f64> {
    if !utilization.is_finite() || !(0.0..=1.0).contains(&utilization) {
        return Err(Error::invariant(format!(
            "utilization must lie in [0, 1], got {utilization}"
        )));
    }
    let curve = &host.power_curve.0;
    let x = utilization * 10.0;
    let i = x.floor() as usize;
    if i >= 10 {
        return Ok(curve[10]);
    }
    let t = x - i as f64;
    Ok(curve[i] + t * (curve[i + 1] - curve[i]))
}

/// Side effects of applying a constrained action.
#[derive(Debug, Clone, Default)]
pub struct ApplyReport {
    pub placed: usize,
    pub deferred: usize,
    pub migrations: usize,
    pub total_migration_time: f64,
    pub max_migration_time: f64,
}

/// Applies a resolved action: arriving tasks bind to their host (picking up
/// its response time), migrations are marked in flight with their copy time
/// charged (`ram / min(src, dst bandwidth)`), and deferred tasks accrue one
/// interval of wait. Migrating tasks keep executing on their source host
/// until the interval ends.
pub fn apply_action(
    tasks: &mut TaskTable,
    hosts: &[Host],
    action: &ConstrainedAction,
    interval_seconds: f64,
) -> Result<ApplyReport> {
    let mut report = ApplyReport::default();
    for p in &action.placements {
        let task = tasks
            .get_mut(&p.task)
            .ok_or_else(|| Error::invariant(format!("placement for unknown task {}", p.task)))?;
        match p.placement {
            Placement::Defer => {
                if task.assigned_host.is_some() {
                    return Err(Error::invariant(format!(
                        "cannot defer task {} that is already placed",
                        p.task
                    )));
                }
                task.wait_seconds += interval_seconds;
                report.deferred += 1;
            }
            Placement::Host(dest) => {
                let dest_host = hosts
                    .get(dest.0)
                    .ok_or_else(|| Error::invariant(format!("unknown host {dest}")))?;
                match task.assigned_host {
                    None => {
                        task.assigned_host = Some(dest);
                        task.response_time_accum += dest_host.response_time;
                        report.placed += 1;
                    }
                    Some(src) if src != dest => {
                        if task.in_migration {
                            return Err(Error::invariant(format!(
                                "task {} is already migrating",
                                p.task
                            )));
                        }
                        let src_host = hosts
                            .get(src.0)
                            .ok_or_else(|| Error::invariant(format!("unknown host {src}")))?;
                        let bw = src_host.net_bw.min(dest_host.net_bw);
                        if !(bw > 0.0) {
                            return Err(Error::invariant(format!(
                                "migration of {} over zero-bandwidth link",
                                p.task
                            )));
                        }
                        let copy_time = task.demands.ram_mb / bw;
                        task.in_migration = true;
                        task.migration_target = Some(dest);
                        task.migration_time_accum += copy_time;
                        report.migrations += 1;
                        report.total_migration_time += copy_time;
                        report.max_migration_time = report.max_migration_time.max(copy_time);
                    }
                    Some(_) => {}
                }
            }
        }
    }
    Ok(report)
}

/// Per-host summary of one interval.
#[derive(Debug, Clone)]
pub struct HostInterval {
    pub host: HostId,
    /// Interval-mean CPU utilization in [0, 1].
    pub mean_utilization: f64,
    pub energy_joules: f64,
    /// Dollars billed this interval; idle hosts bill nothing.
    pub cost: f64,
    pub occupied: bool,
}

/// A task that finished during the interval, with everything the metrics
/// layer needs to score it.
#[derive(Debug, Clone)]
pub struct CompletedTask {
    pub id: TaskId,
    /// Host round-trip component plus admission wait, in seconds.
    pub response_time: f64,
    /// Wait + execution + host round-trip, in seconds.
    pub completion_time: f64,
    pub within_expected: bool,
    /// Fraction of the task's lifetime spent short of its requested MIPS
    /// (including admission wait).
    pub throttle_fraction: f64,
    /// Migration copy time as a fraction of lifetime.
    pub migration_fraction: f64,
}

/// Everything observable about one executed interval.
#[derive(Debug, Clone)]
pub struct IntervalOutcome {
    pub per_host: Vec<HostInterval>,
    pub completed: Vec<CompletedTask>,
    pub migrations: usize,
    pub total_migration_time: f64,
    pub max_migration_time: f64,
    pub active_count: usize,
}

/// Executes one interval: computes per-host throttle factors, advances task
/// progress by the achieved fraction, detects completions (truncating their
/// wall time within the interval), integrates energy and billing, and lands
/// in-flight migrations at the interval boundary. Returns the outcome; the
/// caller removes completed tasks from the table.
pub fn run_interval(
    tasks: &mut TaskTable,
    hosts: &[Host],
    sets: &TaskSets,
    interval_seconds: f64,
    apply_report: &ApplyReport,
) -> Result<IntervalOutcome> {
    // Executing tasks grouped by host; migrating tasks run at their source.
    let mut demand_per_host = vec![0.0f64; hosts.len()];
    let mut residents: Vec<Vec<TaskId>> = vec![Vec::new(); hosts.len()];
    for id in &sets.active {
        let task = tasks
            .get(id)
            .ok_or_else(|| Error::invariant(format!("active task {id} missing from table")))?;
        if let Some(host) = task.assigned_host {
            if host.0 >= hosts.len() {
                return Err(Error::invariant(format!(
                    "task {id} assigned to unknown host {host}"
                )));
            }
            demand_per_host[host.0] += task.demands.cpu_mips;
            residents[host.0].push(*id);
        }
    }

    let mut completed = Vec::new();
    let mut per_host = Vec::with_capacity(hosts.len());
    for (h, host) in hosts.iter().enumerate() {
        let demand = demand_per_host[h];
        let factor = if demand > host.mips_capacity {
            host.mips_capacity / demand
        } else {
            1.0
        };
        let mut busy_mips_seconds = 0.0;
        for id in &residents[h] {
            let task = tasks.get_mut(id).expect("resident tasks exist");
            // A task demanding no CPU progresses at full rate.
            let rate = if task.demands.cpu_mips > 0.0 { factor } else { 1.0 };
            let remaining = task.remaining_work();
            let full_progress = interval_seconds * rate;
            let (wall, finished) = if full_progress >= remaining && rate > 0.0 {
                (remaining / rate, true)
            } else {
                (interval_seconds, false)
            };
            task.elapsed += wall * rate;
            task.exec_seconds += wall;
            if rate < 1.0 - 1e-12 {
                task.throttled_seconds += wall;
            }
            busy_mips_seconds += task.demands.cpu_mips * rate * wall;
            if finished {
                task.migration_target = None;
                task.in_migration = false;
                let lifetime = task.lifetime().max(1e-9);
                let completion_time = task.lifetime() + task.response_time_accum;
                completed.push(CompletedTask {
                    id: *id,
                    response_time: task.response_time_accum + task.wait_seconds,
                    completion_time,
                    within_expected: completion_time
                        <= task.expected_completion + task.response_time_accum + 1e-9,
                    throttle_fraction: ((task.throttled_seconds + task.wait_seconds) / lifetime)
                        .clamp(0.0, 1.0),
                    migration_fraction: (task.migration_time_accum / lifetime).clamp(0.0, 1.0),
                });
            }
        }
        let mean_utilization =
            (busy_mips_seconds / (host.mips_capacity * interval_seconds)).clamp(0.0, 1.0);
        let occupied = !residents[h].is_empty();
        per_host.push(HostInterval {
            host: HostId(h),
            mean_utilization,
            energy_joules: interpolate_power(host, mean_utilization)? * interval_seconds,
            cost: if occupied {
                host.cost_per_hour * interval_seconds / 3600.0
            } else {
                0.0
            },
            occupied,
        });
    }

    // Land in-flight migrations: from the next interval on, the task executes
    // at its destination.
    for id in &sets.active {
        let task = tasks.get_mut(id).expect("active tasks exist");
        if let Some(dest) = task.migration_target.take() {
            task.assigned_host = Some(dest);
        }
    }

    Ok(IntervalOutcome {
        per_host,
        completed,
        migrations: apply_report.migrations,
        total_migration_time: apply_report.total_migration_time,
        max_migration_time: apply_report.max_migration_time,
        active_count: sets.active.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csm::{Placement, TaskPlacement};
    use crate::model::{stock_host_types, Demands, Task, TaskId};

    fn stock_hosts() -> Vec<Host> {
        crate::model::expand_host_types(&stock_host_types(), &[1, 1, 1, 1])
    }

    fn placements(list: &[(u64, Placement)]) -> ConstrainedAction {
        ConstrainedAction {
            placements: list
                .iter()
                .map(|&(task, placement)| TaskPlacement {
                    task: TaskId(task),
                    placement,
                    chosen_rank: None,
                })
                .collect(),
        }
    }

    fn active_sets(ids: &[u64]) -> TaskSets {
        TaskSets {
            active: ids.iter().map(|&i| TaskId(i)).collect(),
            ..TaskSets::default()
        }
    }

    #[test]
    fn power_grid_points_are_exact_and_midpoints_linear() {
        let hosts = stock_hosts();
        let hitachi = &hosts[0];
        let depo = &hosts[1];
        assert_eq!(interpolate_power(hitachi, 0.0).unwrap(), 24.3);
        assert_eq!(interpolate_power(hitachi, 0.3).unwrap(), 36.6);
        assert_eq!(interpolate_power(hitachi, 1.0).unwrap(), 63.2);
        assert_eq!(interpolate_power(depo, 0.5).unwrap(), 112.0);
        let mid = interpolate_power(hitachi, 0.25).unwrap();
        assert!((mid - 35.15).abs() < 1e-12, "got {mid}");
        assert!(interpolate_power(hitachi, -0.1).is_err());
        assert!(interpolate_power(hitachi, 1.1).is_err());
        assert!(interpolate_power(hitachi, f64::NAN).is_err());
    }

    #[test]
    fn idle_hitachi_draws_7290_joules_per_interval() {
        let hosts = stock_hosts();
        let mut tasks = TaskTable::new();
        let sets = TaskSets::default();
        let outcome = run_interval(
            &mut tasks,
            &hosts,
            &sets,
            300.0,
            &ApplyReport::default(),
        )
        .unwrap();
        assert_eq!(outcome.per_host[0].energy_joules, 24.3 * 300.0);
        assert_eq!(outcome.per_host[0].cost, 0.0);
        assert!(!outcome.per_host[0].occupied);
    }

    #[test]
    fn oversubscribed_host_throttles_proportionally() {
        let hosts = stock_hosts();
        // Hitachi capacity is 3600; two tasks at 2160 each demand 4320,
        // so each achieves 5/6 of its request.
        let mut tasks = TaskTable::new();
        for id in [1u64, 2] {
            let mut t = Task::new(TaskId(id), 0, 1800.0);
            t.demands = Demands::new(2160.0, 100.0, 1.0, 1.0);
            t.assigned_host = Some(HostId(0));
            tasks.insert(TaskId(id), t);
        }
        let sets = active_sets(&[1, 2]);
        let outcome = run_interval(
            &mut tasks,
            &hosts,
            &sets,
            300.0,
            &ApplyReport::default(),
        )
        .unwrap();
        let t = &tasks[&TaskId(1)];
        assert!((t.elapsed - 250.0).abs() < 1e-9, "elapsed {}", t.elapsed);
        assert_eq!(t.throttled_seconds, 300.0);
        // Full utilization: the host runs flat out.
        assert!((outcome.per_host[0].mean_utilization - 1.0).abs() < 1e-12);
        assert_eq!(outcome.per_host[0].energy_joules, 63.2 * 300.0);
    }

    #[test]
    fn unthrottled_task_completes_in_ceil_duration_intervals() {
        let hosts = stock_hosts();
        let mut tasks = TaskTable::new();
        let mut t = Task::new(TaskId(1), 0, 1700.0);
        t.demands = Demands::new(1000.0, 100.0, 1.0, 1.0);
        t.assigned_host = Some(HostId(0));
        t.response_time_accum = 0.001;
        tasks.insert(TaskId(1), t);
        let sets = active_sets(&[1]);
        let mut finished_at = None;
        for interval in 1..=10 {
            let outcome = run_interval(
                &mut tasks,
                &hosts,
                &sets,
                300.0,
                &ApplyReport::default(),
            )
            .unwrap();
            if let Some(done) = outcome.completed.first() {
                finished_at = Some((interval, done.clone()));
                break;
            }
        }
        let (interval, done) = finished_at.expect("task completes");
        assert_eq!(interval, 6);
        assert!((done.completion_time - 1700.001).abs() < 1e-9);
        assert!(done.within_expected);
        assert_eq!(done.throttle_fraction, 0.0);
        // Partial final interval: 200 of 300 seconds used.
        let u = 1000.0 * 200.0 / (3600.0 * 300.0);
        let outcome_util = tasks.get(&TaskId(1)).map(|t| t.exec_seconds);
        assert_eq!(outcome_util, Some(1700.0));
        let _ = u;
    }

    #[test]
    fn partial_interval_completion_scales_mean_utilization() {
        let hosts = stock_hosts();
        let mut tasks = TaskTable::new();
        let mut t = Task::new(TaskId(1), 0, 150.0);
        t.demands = Demands::new(1800.0, 100.0, 1.0, 1.0);
        t.assigned_host = Some(HostId(0));
        tasks.insert(TaskId(1), t);
        let sets = active_sets(&[1]);
        let outcome = run_interval(
            &mut tasks,
            &hosts,
            &sets,
            300.0,
            &ApplyReport::default(),
        )
        .unwrap();
        // Half the interval at half capacity.
        let expected = 1800.0 * 150.0 / (3600.0 * 300.0);
        assert!((outcome.per_host[0].mean_utilization - expected).abs() < 1e-12);
        assert!(outcome.per_host[0].occupied);
        assert!(outcome.per_host[0].cost > 0.0);
    }

    #[test]
    fn migration_times_use_the_bottleneck_link() {
        let hosts = stock_hosts();
        let mut tasks = TaskTable::new();
        // DEPO -> R820: both 1000 MB/s links, 4000 MB footprint -> 4 s.
        let mut t = Task::new(TaskId(1), 0, 3000.0);
        t.demands = Demands::new(500.0, 4000.0, 1.0, 1.0);
        t.assigned_host = Some(HostId(1));
        tasks.insert(TaskId(1), t);
        // Hitachi -> R820: bottleneck is Hitachi's 100 MB/s -> 40 s.
        let mut t = Task::new(TaskId(2), 0, 3000.0);
        t.demands = Demands::new(500.0, 4000.0, 1.0, 1.0);
        t.assigned_host = Some(HostId(0));
        tasks.insert(TaskId(2), t);

        let action = placements(&[
            (1, Placement::Host(HostId(2))),
            (2, Placement::Host(HostId(2))),
        ]);
        let report = apply_action(&mut tasks, &hosts, &action, 300.0).unwrap();
        assert_eq!(report.migrations, 2);
        assert!((report.total_migration_time - 44.0).abs() < 1e-9);
        assert!((report.max_migration_time - 40.0).abs() < 1e-9);
        assert_eq!(tasks[&TaskId(1)].migration_time_accum, 4.0);

        // During the interval both tasks still execute at their sources.
        let sets = active_sets(&[1, 2]);
        let outcome = run_interval(&mut tasks, &hosts, &sets, 300.0, &report).unwrap();
        assert!(outcome.per_host[1].occupied);
        assert!(!outcome.per_host[2].occupied);
        // Afterwards they have landed.
        assert_eq!(tasks[&TaskId(1)].assigned_host, Some(HostId(2)));
        assert_eq!(tasks[&TaskId(2)].assigned_host, Some(HostId(2)));
        assert!(tasks[&TaskId(1)].in_migration);
    }

    #[test]
    fn new_placement_picks_up_host_response_time_and_deferral_waits() {
        let hosts = stock_hosts();
        let mut tasks = TaskTable::new();
        let mut t = Task::new(TaskId(1), 0, 900.0);
        t.demands = Demands::new(100.0, 100.0, 1.0, 1.0);
        tasks.insert(TaskId(1), t);
        let mut t = Task::new(TaskId(2), 0, 900.0);
        t.demands = Demands::new(100.0, 100.0, 1.0, 1.0);
        tasks.insert(TaskId(2), t);

        let action = placements(&[
            (1, Placement::Host(HostId(3))),
            (2, Placement::Defer),
        ]);
        let report = apply_action(&mut tasks, &hosts, &action, 300.0).unwrap();
        assert_eq!(report.placed, 1);
        assert_eq!(report.deferred, 1);
        assert_eq!(tasks[&TaskId(1)].response_time_accum, 0.010);
        assert_eq!(tasks[&TaskId(2)].wait_seconds, 300.0);
        assert_eq!(tasks[&TaskId(2)].assigned_host, None);
    }

    #[test]
    fn zero_demand_tasks_progress_at_full_rate() {
        let hosts = stock_hosts();
        let mut tasks = TaskTable::new();
        let mut t = Task::new(TaskId(1), 0, 300.0);
        t.demands = Demands::new(0.0, 50.0, 0.0, 0.0);
        t.assigned_host = Some(HostId(0));
        tasks.insert(TaskId(1), t);
        let sets = active_sets(&[1]);
        let outcome = run_interval(
            &mut tasks,
            &hosts,
            &sets,
            300.0,
            &ApplyReport::default(),
        )
        .unwrap();
        assert_eq!(outcome.completed.len(), 1);
        assert_eq!(outcome.per_host[0].mean_utilization, 0.0);
    }

    #[test]
    fn waiting_time_counts_against_the_sla() {
        let hosts = stock_hosts();
        let mut tasks = TaskTable::new();
        let mut t = Task::new(TaskId(1), 0, 300.0);
        t.demands = Demands::new(100.0, 2000.0, 1.0, 1.0);
        t.wait_seconds = 300.0;
        t.migration_time_accum = 20.0;
        t.assigned_host = Some(HostId(1));
        tasks.insert(TaskId(1), t);
        let sets = active_sets(&[1]);
        let outcome = run_interval(
            &mut tasks,
            &hosts,
            &sets,
            300.0,
            &ApplyReport::default(),
        )
        .unwrap();
        let done = &outcome.completed[0];
        // 300 s waiting out of a 600 s lifetime.
        assert!((done.throttle_fraction - 0.5).abs() < 1e-12);
        assert!((done.migration_fraction - 20.0 / 600.0).abs() < 1e-12);
        assert!(!done.within_expected);
        assert!((done.response_time - 300.0).abs() < 1e-12);
    }
}
