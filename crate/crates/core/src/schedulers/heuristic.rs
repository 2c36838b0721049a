//! Non-learning policies: a uniform-random ranking baseline and the two
//! consolidation heuristics (overload detection + task selection + best-fit-
//! decreasing placement on power increase).

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::csm::{ConstrainedAction, Placement, RankedAction, RankedRow, TaskPlacement};
use crate::error::{Error, Result};
use crate::model::{Demands, Host, HostId, Task, TaskId};
use crate::schedulers::{Decision, DecisionContext, SchedulerPolicy};
use crate::simulator::interpolate_power;

/// How many past intervals the overload detectors look at.
const HISTORY_WINDOW: usize = 10;
/// Safety multiplier on the regression-extrapolated utilization.
const LR_SAFETY: f64 = 1.2;
/// Scale on the median absolute deviation when setting the overload
/// threshold.
const MAD_SCALE: f64 = 2.5;

/// Ranks hosts uniformly at random for every task row, covering the same
/// action space as the network policies: placeable tasks get decision rows,
/// pinned continuing tasks get advisory rows that only feed the penalty.
pub struct RandomScheduler {
    rng: ChaCha8Rng,
}

impl RandomScheduler {
    pub fn new(seed: u64) -> Self {
        RandomScheduler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl SchedulerPolicy for RandomScheduler {
    fn name(&self) -> &'static str {
        "random"
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<Decision> {
        let n = ctx.hosts.len();
        let mut rows = Vec::new();
        for entry in ctx.state.rows.iter().flatten() {
            let mut hosts: Vec<HostId> = (0..n).map(HostId).collect();
            hosts.shuffle(&mut self.rng);
            rows.push(RankedRow {
                task: entry.task,
                hosts,
                decision: entry.decision,
            });
        }
        Ok(Decision::Ranked(RankedAction { rows }))
    }
}

/// Per-host CPU load implied by the current assignments.
fn host_cpu_utilization(ctx: &DecisionContext) -> Result<Vec<f64>> {
    let mut cpu = vec![0.0; ctx.hosts.len()];
    for id in &ctx.sets.active {
        let task = ctx
            .tasks
            .get(id)
            .ok_or_else(|| Error::invariant(format!("active task {id} missing from table")))?;
        if let Some(h) = task.assigned_host {
            cpu[h.0] += task.demands.cpu_mips;
        }
    }
    Ok(cpu
        .iter()
        .zip(ctx.hosts)
        .map(|(load, host)| load / host.mips_capacity)
        .collect())
}

/// Sliding utilization and demand histories feeding the detectors.
#[derive(Default)]
struct Histories {
    host_util: Vec<VecDeque<f64>>,
    task_cpu: BTreeMap<TaskId, VecDeque<f64>>,
}

impl Histories {
    fn push(&mut self, ctx: &DecisionContext, utilization: &[f64]) {
        if self.host_util.len() != ctx.hosts.len() {
            self.host_util = vec![VecDeque::new(); ctx.hosts.len()];
        }
        for (hist, &u) in self.host_util.iter_mut().zip(utilization) {
            if hist.len() == HISTORY_WINDOW {
                hist.pop_front();
            }
            hist.push_back(u);
        }
        self.task_cpu.retain(|id, _| ctx.sets.active.contains(id));
        for id in &ctx.sets.active {
            let hist = self.task_cpu.entry(*id).or_default();
            if hist.len() == HISTORY_WINDOW {
                hist.pop_front();
            }
            hist.push_back(ctx.tasks[id].demands.cpu_mips);
        }
    }
}

/// Weighted local regression of the utilization history, extrapolated one
/// interval ahead. Tricube weights favor recent points.
fn local_regression_forecast(history: &VecDeque<f64>) -> f64 {
    let k = history.len();
    debug_assert!(k >= 2);
    let newest = (k - 1) as f64;
    let span = newest + 1.0;
    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swy = 0.0;
    let mut swxx = 0.0;
    let mut swxy = 0.0;
    for (i, &y) in history.iter().enumerate() {
        let x = i as f64;
        let u = (newest - x) / span;
        let w = (1.0 - u * u * u).powi(3);
        sw += w;
        swx += w * x;
        swy += w * y;
        swxx += w * x * x;
        swxy += w * x * y;
    }
    let denom = sw * swxx - swx * swx;
    if denom.abs() < 1e-12 {
        return *history.back().expect("non-empty history");
    }
    let slope = (sw * swxy - swx * swy) / denom;
    let intercept = (swy - slope * swx) / sw;
    intercept + slope * (newest + 1.0)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Median absolute deviation of a utilization history.
fn mad(history: &VecDeque<f64>) -> f64 {
    let mut values: Vec<f64> = history.iter().copied().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    let med = median(&values);
    let mut deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    deviations.sort_by(|a, b| a.total_cmp(b));
    median(&deviations)
}

/// Pearson correlation; histories shorter than two points or with zero
/// variance correlate at 0.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let a = &a[a.len() - n..];
    let b = &b[b.len() - n..];
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..n {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if va <= 1e-15 || vb <= 1e-15 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Committed 4-dimension loads used by the best-fit placement scan.
struct Commitments {
    loads: Vec<Demands>,
}

impl Commitments {
    fn baseline(ctx: &DecisionContext) -> Result<Self> {
        let mut loads = vec![Demands::default(); ctx.hosts.len()];
        for id in &ctx.sets.active {
            let task = &ctx.tasks[id];
            if let Some(h) = task.assigned_host {
                loads[h.0].add(&task.demands);
            }
        }
        Ok(Commitments { loads })
    }

    fn fits(&self, host: &Host, index: usize, task: &Task) -> bool {
        let load = &self.loads[index];
        load.cpu_mips + task.demands.cpu_mips <= host.mips_capacity
            && load.ram_mb + task.demands.ram_mb <= host.ram_mb
            && load.net_bw + task.demands.net_bw <= host.net_bw
            && load.disk_bw + task.demands.disk_bw <= host.disk_bw
    }

    fn commit(&mut self, index: usize, task: &Task) {
        self.loads[index].add(&task.demands);
    }
}

/// Best-fit-decreasing placement: work through tasks in descending CPU
/// demand; each goes to the suitable non-overloaded host with the smallest
/// power increase. A source host keeps carrying its migrating task for the
/// interval in flight, so nothing is subtracted from it. Returns the chosen
/// host per task (`None` when nothing fits).
fn place_bfd(
    ctx: &DecisionContext,
    candidates: &[TaskId],
    overloaded: &[bool],
    commitments: &mut Commitments,
) -> Result<BTreeMap<TaskId, Option<HostId>>> {
    let mut order: Vec<TaskId> = candidates.to_vec();
    order.sort_by(|a, b| {
        ctx.tasks[b]
            .demands
            .cpu_mips
            .total_cmp(&ctx.tasks[a].demands.cpu_mips)
            .then(a.cmp(b))
    });
    let mut out = BTreeMap::new();
    for id in order {
        let task = &ctx.tasks[&id];
        let mut best: Option<(f64, usize)> = None;
        for (h, host) in ctx.hosts.iter().enumerate() {
            if overloaded[h] || task.assigned_host == Some(HostId(h)) {
                continue;
            }
            if !commitments.fits(host, h, task) {
                continue;
            }
            let before = (commitments.loads[h].cpu_mips / host.mips_capacity).min(1.0);
            let after =
                ((commitments.loads[h].cpu_mips + task.demands.cpu_mips) / host.mips_capacity).min(1.0);
            let increase = interpolate_power(host, after)? - interpolate_power(host, before)?;
            if best.map_or(true, |(bi, _)| increase < bi) {
                best = Some((increase, h));
            }
        }
        if let Some((_, h)) = best {
            commitments.commit(h, task);
            out.insert(id, Some(HostId(h)));
        } else {
            out.insert(id, None);
        }
    }
    Ok(out)
}

/// Turns per-task moves into a full direct action covering every active and
/// arriving task.
fn assemble_direct(
    ctx: &DecisionContext,
    moves: &BTreeMap<TaskId, Option<HostId>>,
) -> Result<ConstrainedAction> {
    let mut placements = Vec::new();
    for id in &ctx.sets.active {
        let task = &ctx.tasks[id];
        let placement = match moves.get(id) {
            Some(Some(h)) => Placement::Host(*h),
            Some(None) => match task.assigned_host {
                Some(current) => Placement::Host(current),
                None => Placement::Defer,
            },
            None => match task.assigned_host {
                Some(current) => Placement::Host(current),
                None => {
                    return Err(Error::invariant(format!(
                        "unplaced task {id} missing from placement set"
                    )))
                }
            },
        };
        placements.push(TaskPlacement {
            task: *id,
            placement,
            chosen_rank: None,
        });
    }
    Ok(ConstrainedAction { placements })
}

fn residents_of(ctx: &DecisionContext, host: usize) -> Vec<TaskId> {
    ctx.sets
        .active
        .iter()
        .filter(|id| ctx.tasks[id].assigned_host == Some(HostId(host)))
        .copied()
        .collect()
}

/// Local-regression overload detection with minimum-migration-time task
/// selection.
pub struct LrMmtScheduler {
    histories: Histories,
}

impl LrMmtScheduler {
    pub fn new() -> Self {
        LrMmtScheduler {
            histories: Histories::default(),
        }
    }
}

impl Default for LrMmtScheduler {
    fn default() -> Self {
        Self::new()
    }
}

impl SchedulerPolicy for LrMmtScheduler {
    fn name(&self) -> &'static str {
        "lr-mmt"
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<Decision> {
        let utilization = host_cpu_utilization(ctx)?;
        self.histories.push(ctx, &utilization);

        let mut overloaded = vec![false; ctx.hosts.len()];
        let mut selected: Vec<TaskId> = Vec::new();
        for (h, host) in ctx.hosts.iter().enumerate() {
            let hist = &self.histories.host_util[h];
            if hist.len() < 2 {
                continue;
            }
            let mut predicted = local_regression_forecast(hist);
            if LR_SAFETY * predicted <= 1.0 {
                continue;
            }
            overloaded[h] = true;
            // Cheapest-to-move tasks leave first until the forecast clears.
            let mut movable: Vec<TaskId> = residents_of(ctx, h)
                .into_iter()
                .filter(|id| ctx.sets.migratable.contains(id))
                .collect();
            movable.sort_by(|a, b| {
                let ta = ctx.tasks[a].demands.ram_mb / host.net_bw;
                let tb = ctx.tasks[b].demands.ram_mb / host.net_bw;
                ta.total_cmp(&tb).then(a.cmp(b))
            });
            for id in movable {
                if LR_SAFETY * predicted <= 1.0 {
                    break;
                }
                predicted -= ctx.tasks[&id].demands.cpu_mips / host.mips_capacity;
                selected.push(id);
            }
        }

        let mut to_place = selected;
        to_place.extend(ctx.sets.arriving.iter().copied());
        let mut commitments = Commitments::baseline(ctx)?;
        let moves = place_bfd(ctx, &to_place, &overloaded, &mut commitments)?;
        Ok(Decision::Direct(assemble_direct(ctx, &moves)?))
    }
}

/// Median-absolute-deviation overload detection with maximum-correlation
/// task selection.
pub struct MadMcScheduler {
    histories: Histories,
}

impl MadMcScheduler {
    pub fn new() -> Self {
        MadMcScheduler {
            histories: Histories::default(),
        }
    }
}

impl Default for MadMcScheduler {
    fn default() -> Self {
        Self::new()
    }
}

impl MadMcScheduler {
    /// Picks the migratable resident whose demand history most correlates
    /// with the combined history of the other residents.
    fn select_max_correlation(&self, residents: &[TaskId], movable: &[TaskId]) -> Option<TaskId> {
        if movable.is_empty() {
            return None;
        }
        if residents.len() == 1 {
            return movable.first().copied();
        }
        let mut best: Option<(f64, TaskId)> = None;
        for id in movable {
            let own: Vec<f64> = self.histories.task_cpu[id].iter().copied().collect();
            let len = residents
                .iter()
                .filter(|r| *r != id)
                .map(|r| self.histories.task_cpu[r].len())
                .min()
                .unwrap_or(0)
                .min(own.len());
            let mut others = vec![0.0; len];
            for r in residents.iter().filter(|r| *r != id) {
                let hist = &self.histories.task_cpu[r];
                for (i, v) in hist.iter().skip(hist.len() - len).enumerate() {
                    others[i] += v;
                }
            }
            let corr = pearson(&own, &others);
            if best.map_or(true, |(bc, _)| corr > bc) {
                best = Some((corr, *id));
            }
        }
        best.map(|(_, id)| id)
    }
}

impl SchedulerPolicy for MadMcScheduler {
    fn name(&self) -> &'static str {
        "mad-mc"
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<Decision> {
        let utilization = host_cpu_utilization(ctx)?;
        self.histories.push(ctx, &utilization);

        let mut overloaded = vec![false; ctx.hosts.len()];
        let mut selected: Vec<TaskId> = Vec::new();
        for (h, host) in ctx.hosts.iter().enumerate() {
            let hist = &self.histories.host_util[h];
            if hist.len() < 2 {
                continue;
            }
            let threshold = 1.0 - MAD_SCALE * mad(hist);
            let mut current = utilization[h];
            if current < threshold {
                continue;
            }
            overloaded[h] = true;
            let mut residents = residents_of(ctx, h);
            let mut movable: Vec<TaskId> = residents
                .iter()
                .filter(|id| ctx.sets.migratable.contains(id))
                .copied()
                .collect();
            while current >= threshold {
                let Some(pick) = self.select_max_correlation(&residents, &movable) else {
                    break;
                };
                current -= ctx.tasks[&pick].demands.cpu_mips / host.mips_capacity;
                residents.retain(|id| *id != pick);
                movable.retain(|id| *id != pick);
                selected.push(pick);
            }
        }

        let mut to_place = selected;
        to_place.extend(ctx.sets.arriving.iter().copied());
        let mut commitments = Commitments::baseline(ctx)?;
        let moves = place_bfd(ctx, &to_place, &overloaded, &mut commitments)?;
        Ok(Decision::Direct(assemble_direct(ctx, &moves)?))
    }
}
