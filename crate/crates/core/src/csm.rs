//! Constraint resolution between a scheduler's preference output and the
//! cluster's capacities. A ranked action lists every host in preference order
//! per placeable task; resolution walks tasks in ascending id, commits each to
//! the first host with room for it on top of everything already committed,
//! and the penalty term quantifies both how deep into the rankings resolution
//! had to reach and how often the scheduler asked for migrations that are not
//! allowed.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::{is_suitable, Demands, Host, HostId, Task, TaskId, TaskSets};

pub type TaskTable = BTreeMap<TaskId, Task>;

/// One task's host preference list. Decision rows (migratable or arriving
/// tasks) are resolved into placements; advisory rows belong to continuing
/// tasks that are barred from migrating this interval and only feed the
/// penalty term.
#[derive(Debug, Clone)]
pub struct RankedRow {
    pub task: TaskId,
    /// Permutation of all host ids, most preferred first.
    pub hosts: Vec<HostId>,
    pub decision: bool,
}

/// Scheduler output prior to constraint resolution.
#[derive(Debug, Clone, Default)]
pub struct RankedAction {
    pub rows: Vec<RankedRow>,
}

/// Where a task ends up for the coming interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Host(HostId),
    /// No host had room; the task re-enters the arriving set next interval.
    Defer,
}

#[derive(Debug, Clone, Copy)]
pub struct TaskPlacement {
    pub task: TaskId,
    pub placement: Placement,
    /// Rank of the committed host within the task's preference list, when the
    /// task had a decision row.
    pub chosen_rank: Option<usize>,
}

/// Resolved, capacity-respecting action covering every ranked row.
#[derive(Debug, Clone, Default)]
pub struct ConstrainedAction {
    pub placements: Vec<TaskPlacement>,
}

impl ConstrainedAction {
    pub fn placement_of(&self, task: TaskId) -> Option<&TaskPlacement> {
        self.placements.iter().find(|p| p.task == task)
    }
}

/// Shared inputs of constraint resolution and the penalty term.
pub struct CsmContext<'a> {
    pub hosts: &'a [Host],
    pub tasks: &'a TaskTable,
    pub sets: &'a TaskSets,
}

impl<'a> CsmContext<'a> {
    fn task(&self, id: TaskId) -> Result<&'a Task> {
        self.tasks
            .get(&id)
            .ok_or_else(|| Error::invariant(format!("ranked row references unknown task {id}")))
    }
}

/// Per-host committed loads during resolution. Loads start from every
/// assigned task at its current host; a committed migration additionally
/// reserves the destination while the source keeps carrying the task for the
/// interval in flight.
struct HostLoads {
    loads: Vec<Demands>,
}

impl HostLoads {
    fn baseline(ctx: &CsmContext) -> Result<Self> {
        let mut loads = vec![Demands::default(); ctx.hosts.len()];
        for id in &ctx.sets.active {
            let task = ctx.task(*id)?;
            if let Some(host) = task.assigned_host {
                loads
                    .get_mut(host.0)
                    .ok_or_else(|| {
                        Error::invariant(format!("task {id} assigned to unknown host {host}"))
                    })?
                    .add(&task.demands);
            }
        }
        Ok(HostLoads { loads })
    }

    /// Suitability of `host` for `task` given current commitments. A task
    /// already occupying the host is not double-counted against itself.
    fn fits(&self, hosts: &[Host], task: &Task, host: HostId) -> bool {
        let mut load = self.loads[host.0];
        if task.assigned_host == Some(host) {
            load.sub(&task.demands);
        }
        is_suitable(&hosts[host.0], task, &load)
    }

    fn commit(&mut self, task: &Task, host: HostId) {
        if task.assigned_host != Some(host) {
            self.loads[host.0].add(&task.demands);
        }
    }
}

fn validate_rows(ranked: &RankedAction, ctx: &CsmContext) -> Result<()> {
    let n = ctx.hosts.len();
    let mut decision: BTreeSet<TaskId> = BTreeSet::new();
    let mut advisory: BTreeSet<TaskId> = BTreeSet::new();
    for row in &ranked.rows {
        if row.hosts.len() != n {
            return Err(Error::invariant(format!(
                "row for {} ranks {} hosts, cluster has {n}",
                row.task,
                row.hosts.len()
            )));
        }
        let distinct: BTreeSet<usize> = row.hosts.iter().map(|h| h.0).collect();
        if distinct.len() != n || row.hosts.iter().any(|h| h.0 >= n) {
            return Err(Error::invariant(format!(
                "row for {} is not a permutation of host ids",
                row.task
            )));
        }
        let inserted = if row.decision {
            decision.insert(row.task)
        } else {
            advisory.insert(row.task)
        };
        if !inserted {
            return Err(Error::invariant(format!("duplicate row for {}", row.task)));
        }
    }
    let mut placeable: BTreeSet<TaskId> = ctx.sets.migratable.clone();
    placeable.extend(ctx.sets.arriving.iter().copied());
    if decision != placeable {
        return Err(Error::invariant(
            "decision rows must cover exactly the migratable and arriving tasks".to_string(),
        ));
    }
    let pinned: BTreeSet<TaskId> = ctx
        .sets
        .active
        .iter()
        .filter(|id| !placeable.contains(id))
        .copied()
        .collect();
    if !advisory.is_subset(&pinned) {
        return Err(Error::invariant(
            "advisory rows must belong to continuing non-migratable tasks".to_string(),
        ));
    }
    Ok(())
}

/// Resolves a ranked action: decision rows are walked in ascending task id
/// and each task commits to the first host in its list with room left;
/// a continuing task with no suitable host stays put, an arriving task is
/// deferred. Advisory rows pass through as explicit stay-in-place placements.
pub fn constrain_action(ranked: &RankedAction, ctx: &CsmContext) -> Result<ConstrainedAction> {
    validate_rows(ranked, ctx)?;
    let mut loads = HostLoads::baseline(ctx)?;
    let mut rows: Vec<&RankedRow> = ranked.rows.iter().collect();
    rows.sort_by_key(|r| r.task);

    let mut placements = Vec::with_capacity(rows.len());
    for row in rows {
        let task = ctx.task(row.task)?;
        if !row.decision {
            let host = task.assigned_host.ok_or_else(|| {
                Error::invariant(format!("non-migratable task {} has no host", row.task))
            })?;
            placements.push(TaskPlacement {
                task: row.task,
                placement: Placement::Host(host),
                chosen_rank: None,
            });
            continue;
        }
        let chosen = row
            .hosts
            .iter()
            .enumerate()
            .find(|(_, h)| loads.fits(ctx.hosts, task, **h));
        let placement = match (chosen, task.assigned_host) {
            (Some((rank, &host)), _) => {
                loads.commit(task, host);
                TaskPlacement {
                    task: row.task,
                    placement: Placement::Host(host),
                    chosen_rank: Some(rank),
                }
            }
            // Nothing fits: continuing tasks hold their current host, whose
            // rank still counts toward the penalty.
            (None, Some(current)) => TaskPlacement {
                task: row.task,
                placement: Placement::Host(current),
                chosen_rank: Some(
                    row.hosts
                        .iter()
                        .position(|h| *h == current)
                        .expect("permutation contains every host"),
                ),
            },
            (None, None) => TaskPlacement {
                task: row.task,
                placement: Placement::Defer,
                chosen_rank: None,
            },
        };
        placements.push(placement);
    }
    Ok(ConstrainedAction { placements })
}

fn final_loads(constrained: &ConstrainedAction, ctx: &CsmContext) -> Result<HostLoads> {
    let mut loads = HostLoads::baseline(ctx)?;
    for p in &constrained.placements {
        if let Placement::Host(host) = p.placement {
            let task = ctx.task(p.task)?;
            loads.commit(task, host);
        }
    }
    Ok(loads)
}

/// Validates an action built directly by a scheduler (without ranked
/// resolution): placements must reference active tasks, every arriving task
/// must be covered, pinned tasks may not move, only unplaced tasks may defer,
/// and every host that received a new commitment must end the interval within
/// capacity on all four dimensions. Hosts that merely kept their existing
/// tasks are exempt, since demand drift can push a frozen placement past
/// capacity and throttling absorbs that.
pub fn validate_constrained(constrained: &ConstrainedAction, ctx: &CsmContext) -> Result<()> {
    let mut seen: BTreeSet<TaskId> = BTreeSet::new();
    let mut receiving: BTreeSet<usize> = BTreeSet::new();
    for p in &constrained.placements {
        if !seen.insert(p.task) {
            return Err(Error::invariant(format!(
                "duplicate placement for {}",
                p.task
            )));
        }
        if !ctx.sets.active.contains(&p.task) {
            return Err(Error::invariant(format!(
                "placement for {} which is not active",
                p.task
            )));
        }
        let task = ctx.task(p.task)?;
        let pinned = !ctx.sets.migratable.contains(&p.task) && !ctx.sets.arriving.contains(&p.task);
        match p.placement {
            Placement::Host(host) => {
                if host.0 >= ctx.hosts.len() {
                    return Err(Error::invariant(format!(
                        "placement for {} references unknown host {host}",
                        p.task
                    )));
                }
                if task.assigned_host != Some(host) {
                    if pinned {
                        return Err(Error::invariant(format!(
                            "action moves pinned task {}",
                            p.task
                        )));
                    }
                    receiving.insert(host.0);
                }
            }
            Placement::Defer => {
                if task.assigned_host.is_some() {
                    return Err(Error::invariant(format!(
                        "action defers already-placed task {}",
                        p.task
                    )));
                }
            }
        }
    }
    for id in &ctx.sets.arriving {
        if !seen.contains(id) {
            return Err(Error::invariant(format!(
                "arriving task {id} has no placement"
            )));
        }
    }
    let loads = final_loads(constrained, ctx)?;
    for h in receiving {
        let host = &ctx.hosts[h];
        let load = &loads.loads[h];
        let fits = load.cpu_mips <= host.mips_capacity
            && load.ram_mb <= host.ram_mb
            && load.net_bw <= host.net_bw
            && load.disk_bw <= host.disk_bw;
        if !fits {
            return Err(Error::invariant(format!(
                "action overfills host h{h} (committed cpu {:.1}/{:.1}, ram {:.1}/{:.1})",
                load.cpu_mips, host.mips_capacity, load.ram_mb, host.ram_mb
            )));
        }
    }
    Ok(())
}

/// The action-quality penalty: mean committed rank across placeable tasks
/// (normalized by active-set size times host count) plus the fraction of
/// active tasks whose advisory row resolves away from their pinned host, i.e.
/// migrations the scheduler wanted but could not have. Both addends are 0..1,
/// so the penalty lies in [0, 2]. An empty active set yields 0.
pub fn penalty(
    ranked: &RankedAction,
    constrained: &ConstrainedAction,
    ctx: &CsmContext,
) -> Result<f64> {
    let a = ctx.sets.active.len();
    if a == 0 {
        return Ok(0.0);
    }
    let n = ctx.hosts.len();

    let mut rank_sum = 0usize;
    for p in &constrained.placements {
        if let Some(k) = p.chosen_rank {
            rank_sum += k;
        }
    }

    let loads = final_loads(constrained, ctx)?;
    let mut blocked = 0usize;
    for row in &ranked.rows {
        if row.decision {
            continue;
        }
        let task = ctx.task(row.task)?;
        let current = task.assigned_host.ok_or_else(|| {
            Error::invariant(format!("non-migratable task {} has no host", row.task))
        })?;
        let resolved = row
            .hosts
            .iter()
            .find(|h| loads.fits(ctx.hosts, task, **h))
            .copied()
            .unwrap_or(current);
        if resolved != current {
            blocked += 1;
        }
    }

    Ok(rank_sum as f64 / (a * n) as f64 + blocked as f64 / a as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClusterConfig, Layer, PowerCurve};

    fn flat_host(id: usize, cpu: f64) -> Host {
        Host {
            id: HostId(id),
            name: format!("host{id}"),
            layer: Layer::Edge,
            cores: 1,
            mips_capacity: cpu,
            ram_mb: 1e9,
            net_bw: 1e9,
            disk_bw: 1e9,
            power_curve: PowerCurve::new([
                10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0,
            ])
            .unwrap(),
            cost_per_hour: 1.0,
            response_time: 0.001,
            energy_weight: 1.0,
        }
    }

    struct Fixture {
        hosts: Vec<Host>,
        tasks: TaskTable,
        sets: TaskSets,
    }

    impl Fixture {
        fn ctx(&self) -> CsmContext<'_> {
            CsmContext {
                hosts: &self.hosts,
                tasks: &self.tasks,
                sets: &self.sets,
            }
        }
    }

    /// Three hosts with 1000 MIPS each; tasks listed as (id, cpu demand,
    /// current host, migratable).
    fn fixture(tasks: &[(u64, f64, Option<usize>, bool)], arriving: &[u64]) -> Fixture {
        let hosts: Vec<Host> = (0..3).map(|i| flat_host(i, 1000.0)).collect();
        let mut table = TaskTable::new();
        let mut sets = TaskSets::default();
        for &(id, cpu, host, migratable) in tasks {
            let mut task = Task::new(TaskId(id), 0, 600.0);
            task.demands = Demands::new(cpu, 1.0, 1.0, 1.0);
            task.assigned_host = host.map(HostId);
            sets.active.insert(TaskId(id));
            if migratable {
                sets.migratable.insert(TaskId(id));
            }
            table.insert(TaskId(id), task);
        }
        for &id in arriving {
            sets.active.insert(TaskId(id));
            sets.arriving.insert(TaskId(id));
        }
        Fixture {
            hosts,
            tasks: table,
            sets,
        }
    }

    fn row(task: u64, hosts: &[usize], decision: bool) -> RankedRow {
        RankedRow {
            task: TaskId(task),
            hosts: hosts.iter().map(|&h| HostId(h)).collect(),
            decision,
        }
    }

    #[test]
    fn first_suitable_host_wins_in_rank_order() {
        let mut fx = fixture(&[(1, 400.0, None, false)], &[1]);
        // Host 0 is pre-filled beyond reach by a pinned resident task.
        let mut resident = Task::new(TaskId(9), 0, 600.0);
        resident.demands = Demands::new(900.0, 1.0, 1.0, 1.0);
        resident.assigned_host = Some(HostId(0));
        fx.tasks.insert(TaskId(9), resident);
        fx.sets.active.insert(TaskId(9));

        let ranked = RankedAction {
            rows: vec![row(1, &[0, 2, 1], true), row(9, &[0, 1, 2], false)],
        };
        let constrained = constrain_action(&ranked, &fx.ctx()).unwrap();
        let p = constrained.placement_of(TaskId(1)).unwrap();
        assert_eq!(p.placement, Placement::Host(HostId(2)));
        assert_eq!(p.chosen_rank, Some(1));
    }

    #[test]
    fn sequential_commitment_sends_the_second_task_elsewhere() {
        let fx = fixture(&[], &[1, 2]);
        let mut fx = fx;
        for id in [1u64, 2] {
            let mut task = Task::new(TaskId(id), 0, 600.0);
            task.demands = Demands::new(600.0, 1.0, 1.0, 1.0);
            fx.tasks.insert(TaskId(id), task);
        }
        let ranked = RankedAction {
            rows: vec![row(1, &[0, 1, 2], true), row(2, &[0, 1, 2], true)],
        };
        let constrained = constrain_action(&ranked, &fx.ctx()).unwrap();
        assert_eq!(
            constrained.placement_of(TaskId(1)).unwrap().placement,
            Placement::Host(HostId(0))
        );
        // 600 + 600 exceeds 1000, so task 2 falls through to its rank-1 host.
        assert_eq!(
            constrained.placement_of(TaskId(2)).unwrap().placement,
            Placement::Host(HostId(1))
        );
    }

    #[test]
    fn overfull_cluster_defers_new_and_keeps_continuing() {
        let mut fx = fixture(&[(1, 950.0, Some(0), true)], &[5]);
        for h in 1..3 {
            let id = 10 + h as u64;
            let mut task = Task::new(TaskId(id), 0, 600.0);
            task.demands = Demands::new(980.0, 1.0, 1.0, 1.0);
            task.assigned_host = Some(HostId(h));
            fx.tasks.insert(TaskId(id), task);
            fx.sets.active.insert(TaskId(id));
        }
        let mut new_task = Task::new(TaskId(5), 1, 600.0);
        new_task.demands = Demands::new(500.0, 1.0, 1.0, 1.0);
        fx.tasks.insert(TaskId(5), new_task);

        let ranked = RankedAction {
            rows: vec![
                row(1, &[1, 2, 0], true),
                row(5, &[0, 1, 2], true),
                row(11, &[1, 0, 2], false),
                row(12, &[2, 0, 1], false),
            ],
        };
        let constrained = constrain_action(&ranked, &fx.ctx()).unwrap();
        let p1 = constrained.placement_of(TaskId(1)).unwrap();
        assert_eq!(p1.placement, Placement::Host(HostId(0)));
        assert_eq!(p1.chosen_rank, Some(2));
        assert_eq!(
            constrained.placement_of(TaskId(5)).unwrap().placement,
            Placement::Defer
        );
    }

    #[test]
    fn penalty_matches_the_rank_sum_example() {
        // Two placeable tasks resolved at ranks 0 and 2 in a 3-host cluster
        // with |active| = 2 and no blocked migrations: (0+2)/(2*3) = 1/3.
        // Host 2 is too small for either task, so task 2 falls through to
        // its rank-2 choice after task 1 fills host 0.
        let mut fx = fixture(&[], &[1, 2]);
        fx.hosts[2] = flat_host(2, 500.0);
        for (id, cpu) in [(1u64, 600.0), (2u64, 600.0)] {
            let mut task = Task::new(TaskId(id), 0, 600.0);
            task.demands = Demands::new(cpu, 1.0, 1.0, 1.0);
            fx.tasks.insert(TaskId(id), task);
        }
        let ranked = RankedAction {
            rows: vec![row(1, &[0, 1, 2], true), row(2, &[0, 2, 1], true)],
        };
        let constrained = constrain_action(&ranked, &fx.ctx()).unwrap();
        assert_eq!(
            constrained.placement_of(TaskId(2)).unwrap().chosen_rank,
            Some(2)
        );
        let p = penalty(&ranked, &constrained, &fx.ctx()).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-12, "penalty {p}");
    }

    #[test]
    fn blocked_migration_adds_the_second_addend() {
        // Task 1 resolves at rank 0; pinned task 2 would rather be on host 1
        // (which has room), so it counts as a blocked migration:
        // 0/(2*3) + 1/2 = 1/2.
        let fx = fixture(
            &[(1, 100.0, Some(0), true), (2, 100.0, Some(0), false)],
            &[],
        );
        let ranked = RankedAction {
            rows: vec![row(1, &[0, 1, 2], true), row(2, &[1, 0, 2], false)],
        };
        let constrained = constrain_action(&ranked, &fx.ctx()).unwrap();
        let p = penalty(&ranked, &constrained, &fx.ctx()).unwrap();
        assert!((p - 0.5).abs() < 1e-12, "penalty {p}");
    }

    #[test]
    fn pinned_task_preferring_its_own_host_is_not_blocked() {
        let fx = fixture(&[(2, 100.0, Some(1), false)], &[]);
        let ranked = RankedAction {
            rows: vec![row(2, &[1, 0, 2], false)],
        };
        let constrained = constrain_action(&ranked, &fx.ctx()).unwrap();
        assert_eq!(
            constrained.placement_of(TaskId(2)).unwrap().placement,
            Placement::Host(HostId(1))
        );
        let p = penalty(&ranked, &constrained, &fx.ctx()).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn empty_active_set_yields_zero_penalty() {
        let fx = fixture(&[], &[]);
        let ranked = RankedAction::default();
        let constrained = constrain_action(&ranked, &fx.ctx()).unwrap();
        assert_eq!(penalty(&ranked, &constrained, &fx.ctx()).unwrap(), 0.0);
    }

    #[test]
    fn malformed_rankings_are_rejected() {
        let fx = fixture(&[], &[1]);
        let mut fx = fx;
        fx.tasks.insert(TaskId(1), Task::new(TaskId(1), 0, 600.0));
        // Not a permutation.
        let ranked = RankedAction {
            rows: vec![row(1, &[0, 0, 2], true)],
        };
        assert!(constrain_action(&ranked, &fx.ctx()).is_err());
        // Missing the arriving task's row.
        let ranked = RankedAction { rows: vec![] };
        assert!(constrain_action(&ranked, &fx.ctx()).is_err());
    }

    #[test]
    fn committed_actions_never_overfill_hosts() {
        // Randomized end-to-end check of the commit-order capacity guarantee.
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let config = ClusterConfig::desk_default();
        for case in 0..200 {
            let mut fx = fixture(&[], &[]);
            fx.hosts = config.hosts.clone();
            let n = fx.hosts.len();
            let mut rows = Vec::new();
            for id in 1..=10u64 {
                let mut task = Task::new(TaskId(id), 0, 600.0);
                task.demands = Demands::new(
                    rng.gen_range(50.0..2000.0),
                    rng.gen_range(100.0..4000.0),
                    rng.gen_range(0.0..30.0),
                    rng.gen_range(0.0..20.0),
                );
                fx.sets.active.insert(TaskId(id));
                fx.sets.arriving.insert(TaskId(id));
                fx.tasks.insert(TaskId(id), task);
                let mut order: Vec<HostId> = (0..n).map(HostId).collect();
                for i in (1..n).rev() {
                    order.swap(i, rng.gen_range(0..=i));
                }
                rows.push(RankedRow {
                    task: TaskId(id),
                    hosts: order,
                    decision: true,
                });
            }
            let ranked = RankedAction { rows };
            let constrained = constrain_action(&ranked, &fx.ctx()).unwrap();
            let loads = final_loads(&constrained, &fx.ctx()).unwrap();
            for (host, load) in fx.hosts.iter().zip(&loads.loads) {
                assert!(
                    load.cpu_mips <= host.mips_capacity + 1e-9
                        && load.ram_mb <= host.ram_mb + 1e-9
                        && load.net_bw <= host.net_bw + 1e-9
                        && load.disk_bw <= host.disk_bw + 1e-9,
                    "case {case}: host {} overfilled",
                    host.id
                );
            }
        }
    }
}
