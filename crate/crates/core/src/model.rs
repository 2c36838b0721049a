//! Domain model for a discrete-interval edge-cloud datacenter: hosts with
//! four-dimensional capacities and measured power curves, tasks with
//! per-interval resource demands, and the task-set algebra that advances the
//! active/migratable/arriving/leaving sets from one scheduling interval to the
//! next.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HostId(pub usize);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

/// Datacenter layer a host belongs to. Edge nodes answer fast but are
/// resource-constrained; cloud nodes are the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Edge,
    Cloud,
}

impl Layer {
    /// Default network response time in seconds (edge 1 ms, cloud 10 ms).
    pub fn default_response_time(self) -> f64 {
        match self {
            Layer::Edge => 0.001,
            Layer::Cloud => 0.010,
        }
    }

    pub fn parse(s: &str) -> Result<Layer> {
        match s.trim().to_ascii_lowercase().as_str() {
            "edge" => Ok(Layer::Edge),
            "cloud" => Ok(Layer::Cloud),
            other => Err(Error::config(format!("unknown layer {other:?}"))),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Edge => write!(f, "edge"),
            Layer::Cloud => write!(f, "cloud"),
        }
    }
}

/// Resource demand (or committed load) along the four capacity dimensions.
/// Units: MIPS, MB, MB/s, MB/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Demands {
    pub cpu_mips: f64,
    pub ram_mb: f64,
    pub net_bw: f64,
    pub disk_bw: f64,
}

impl Demands {
    pub fn new(cpu_mips: f64, ram_mb: f64, net_bw: f64, disk_bw: f64) -> Self {
        Demands {
            cpu_mips,
            ram_mb,
            net_bw,
            disk_bw,
        }
    }

    pub fn add(&mut self, other: &Demands) {
        self.cpu_mips += other.cpu_mips;
        self.ram_mb += other.ram_mb;
        self.net_bw += other.net_bw;
        self.disk_bw += other.disk_bw;
    }

    pub fn sub(&mut self, other: &Demands) {
        self.cpu_mips -= other.cpu_mips;
        self.ram_mb -= other.ram_mb;
        self.net_bw -= other.net_bw;
        self.disk_bw -= other.disk_bw;
    }

    pub fn is_finite(&self) -> bool {
        self.cpu_mips.is_finite()
            && self.ram_mb.is_finite()
            && self.net_bw.is_finite()
            && self.disk_bw.is_finite()
    }
}

/// Measured power draw at 0%, 10%, ..., 100% CPU utilization, in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve(pub [f64; 11]);

impl PowerCurve {
    pub fn new(points: [f64; 11]) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::config(format!(
                    "power curve point {i} must be finite and non-negative, got {p}"
                )));
            }
        }
        for w in points.windows(2) {
            if w[1] < w[0] {
                return Err(Error::config(format!(
                    "power curve must be non-decreasing, got {} after {}",
                    w[1], w[0]
                )));
            }
        }
        Ok(PowerCurve(points))
    }

    pub fn max_watts(&self) -> f64 {
        self.0[10]
    }
}

/// A physical machine in the cluster. `mips_capacity` is the total across all
/// cores (per-core MIPS x core count).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Host {
    pub id: HostId,
    pub name: String,
    pub layer: Layer,
    pub cores: u32,
    pub mips_capacity: f64,
    pub ram_mb: f64,
    /// Network bandwidth in MB/s.
    pub net_bw: f64,
    /// Disk bandwidth in MB/s.
    pub disk_bw: f64,
    pub power_curve: PowerCurve,
    /// Price per hour while occupied, in dollars.
    pub cost_per_hour: f64,
    /// Network round-trip seconds added to the response time of tasks placed
    /// on this host.
    pub response_time: f64,
    /// Weight of this host in the energy metric.
    pub energy_weight: f64,
}

impl Host {
    pub fn capacity(&self) -> Demands {
        Demands::new(self.mips_capacity, self.ram_mb, self.net_bw, self.disk_bw)
    }
}

/// True when `task`'s demands fit on `host` on top of `current_load` in all
/// four dimensions (boundary-inclusive).
pub fn is_suitable(host: &Host, task: &Task, current_load: &Demands) -> bool {
    let d = &task.demands;
    current_load.cpu_mips + d.cpu_mips <= host.mips_capacity
        && current_load.ram_mb + d.ram_mb <= host.ram_mb
        && current_load.net_bw + d.net_bw <= host.net_bw
        && current_load.disk_bw + d.disk_bw <= host.disk_bw
}

/// One unit of work. Durations are in seconds of execution at the requested
/// MIPS rate; throttling stretches wall time accordingly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    /// Interval index at which the task entered the system.
    pub created_at: u64,
    /// Seconds of work at the requested rate until completion.
    pub total_duration: f64,
    /// Seconds of work completed so far.
    pub elapsed: f64,
    /// Expected completion time in seconds, fixed at admission.
    pub expected_completion: f64,
    /// Demands for the current interval; refreshed at every interval start.
    pub demands: Demands,
    pub assigned_host: Option<HostId>,
    /// Destination of an in-flight migration; the task executes on
    /// `assigned_host` until the interval ends, then moves here.
    pub migration_target: Option<HostId>,
    pub in_migration: bool,
    /// Host network round-trip component of the response time.
    pub response_time_accum: f64,
    /// Total seconds spent copying this task between hosts.
    pub migration_time_accum: f64,
    /// Seconds spent waiting for admission (deferred intervals).
    pub wait_seconds: f64,
    /// Wall seconds spent executing.
    pub exec_seconds: f64,
    /// Wall seconds during which achieved MIPS fell short of requested.
    pub throttled_seconds: f64,
}

impl Task {
    pub fn new(id: TaskId, created_at: u64, total_duration: f64) -> Self {
        Task {
            id,
            created_at,
            total_duration,
            elapsed: 0.0,
            expected_completion: total_duration,
            demands: Demands::default(),
            assigned_host: None,
            migration_target: None,
            in_migration: false,
            response_time_accum: 0.0,
            migration_time_accum: 0.0,
            wait_seconds: 0.0,
            exec_seconds: 0.0,
            throttled_seconds: 0.0,
        }
    }

    /// Wall seconds the task has spent in the system (waiting or executing).
    pub fn lifetime(&self) -> f64 {
        self.wait_seconds + self.exec_seconds
    }

    pub fn remaining_work(&self) -> f64 {
        (self.total_duration - self.elapsed).max(0.0)
    }
}

/// The four task sets that define a scheduling interval: everything active,
/// the subset that may migrate, the tasks that just arrived, and the tasks
/// that left at the end of the previous interval.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskSets {
    pub active: BTreeSet<TaskId>,
    pub migratable: BTreeSet<TaskId>,
    pub arriving: BTreeSet<TaskId>,
    pub leaving: BTreeSet<TaskId>,
}

impl TaskSets {
    /// Continuing tasks: active now and active in the previous interval.
    pub fn continuing(&self) -> BTreeSet<TaskId> {
        self.active.difference(&self.arriving).copied().collect()
    }
}

/// Advances the interval task sets: active becomes
/// `prev.active ∪ new_tasks \ completed`, migratable is the continuing subset
/// not currently being migrated, arriving echoes `new_tasks` and leaving
/// echoes `completed`.
pub fn advance_task_sets(
    prev: &TaskSets,
    completed: &BTreeSet<TaskId>,
    new_tasks: &BTreeSet<TaskId>,
    in_migration: &BTreeSet<TaskId>,
) -> Result<TaskSets> {
    if let Some(id) = completed.difference(&prev.active).next() {
        return Err(Error::invariant(format!(
            "completed task {id} was not active"
        )));
    }
    if let Some(id) = new_tasks.intersection(&prev.active).next() {
        return Err(Error::invariant(format!(
            "new task {id} is already active"
        )));
    }
    let mut active: BTreeSet<TaskId> = prev.active.difference(completed).copied().collect();
    active.extend(new_tasks.iter().copied());
    let migratable: BTreeSet<TaskId> = prev
        .active
        .difference(completed)
        .filter(|id| !in_migration.contains(id))
        .copied()
        .collect();
    Ok(TaskSets {
        active,
        migratable,
        arriving: new_tasks.clone(),
        leaving: completed.clone(),
    })
}

/// Weights of the five interval metrics in the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub energy: f64,
    pub response: f64,
    pub migration: f64,
    pub cost: f64,
    pub slav: f64,
}

impl HyperParams {
    /// Validates a weight vector: every weight non-negative and the sum close
    /// to 1. The tolerance is deliberately loose (|sum - 1| <= 0.1) because
    /// the stock weight vector below sums to 1.059 and is used as given,
    /// without renormalization.
    pub fn new(energy: f64, response: f64, migration: f64, cost: f64, slav: f64) -> Result<Self> {
        let weights = [energy, response, migration, cost, slav];
        for w in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::config(format!(
                    "loss weights must be finite and non-negative, got {w}"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 0.1 {
            return Err(Error::config(format!(
                "loss weights should sum to about 1, got {sum}"
            )));
        }
        Ok(HyperParams {
            energy,
            response,
            migration,
            cost,
            slav,
        })
    }

    /// The stock weight vector used throughout the evaluation runs.
    pub fn stock() -> Self {
        HyperParams {
            energy: 0.4,
            response: 0.16,
            migration: 0.174,
            cost: 0.135,
            slav: 0.19,
        }
    }

    /// All weight on one metric; index order is energy, response, migration,
    /// cost, slav.
    pub fn single(index: usize) -> Result<Self> {
        let mut w = [0.0; 5];
        if index >= 5 {
            return Err(Error::config(format!("metric index {index} out of range")));
        }
        w[index] = 1.0;
        HyperParams::new(w[0], w[1], w[2], w[3], w[4])
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.energy,
            self.response,
            self.migration,
            self.cost,
            self.slav,
        ]
    }
}

/// Static description of the cluster and the interval discretization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub hosts: Vec<Host>,
    /// Length of one scheduling interval in seconds.
    pub interval_seconds: f64,
    /// Hard cap on concurrently active tasks (also the row count of the
    /// scheduler's task matrices).
    pub max_tasks: usize,
    /// Intervals per learning episode.
    pub episode_size: usize,
    pub hyperparams: HyperParams,
}

impl ClusterConfig {
    pub fn new(
        hosts: Vec<Host>,
        interval_seconds: f64,
        max_tasks: usize,
        episode_size: usize,
        hyperparams: HyperParams,
    ) -> Result<Self> {
        if hosts.is_empty() {
            return Err(Error::config("cluster needs at least one host"));
        }
        for (i, h) in hosts.iter().enumerate() {
            if h.id.0 != i {
                return Err(Error::config(format!(
                    "host ids must be dense indices; host {i} has id {}",
                    h.id
                )));
            }
        }
        if !(interval_seconds > 0.0) {
            return Err(Error::config("interval_seconds must be positive"));
        }
        if max_tasks == 0 {
            return Err(Error::config("max_tasks must be at least 1"));
        }
        if episode_size == 0 {
            return Err(Error::config("episode_size must be at least 1"));
        }
        Ok(ClusterConfig {
            hosts,
            interval_seconds,
            max_tasks,
            episode_size,
            hyperparams,
        })
    }

    /// Desk-scale default: two machines of each stock type (8 hosts), 300 s
    /// intervals, at most 16 concurrent tasks, 12-interval episodes.
    pub fn desk_default() -> Self {
        let hosts = expand_host_types(&stock_host_types(), &[2, 2, 2, 2]);
        ClusterConfig::new(hosts, 300.0, 16, 12, HyperParams::stock())
            .expect("desk default config is valid")
    }

    pub fn host(&self, id: HostId) -> Result<&Host> {
        self.hosts
            .get(id.0)
            .ok_or_else(|| Error::invariant(format!("host {id} does not exist")))
    }
}

/// One row of the host-table file: a machine model plus how many instances of
/// it the cluster contains.
#[derive(Debug, Clone)]
pub struct HostType {
    pub name: String,
    pub layer: Layer,
    pub cores: u32,
    /// Per-core MIPS; host capacity is `mips_per_core * cores`.
    pub mips_per_core: f64,
    pub ram_mb: f64,
    pub net_bw: f64,
    pub disk_bw: f64,
    pub cost_per_hour: f64,
    pub power_curve: PowerCurve,
    pub response_time: Option<f64>,
    pub energy_weight: f64,
}

impl HostType {
    fn instantiate(&self, id: usize) -> Host {
        Host {
            id: HostId(id),
            name: self.name.clone(),
            layer: self.layer,
            cores: self.cores,
            mips_capacity: self.mips_per_core * self.cores as f64,
            ram_mb: self.ram_mb,
            net_bw: self.net_bw,
            disk_bw: self.disk_bw,
            power_curve: self.power_curve.clone(),
            cost_per_hour: self.cost_per_hour,
            response_time: self
                .response_time
                .unwrap_or_else(|| self.layer.default_response_time()),
            energy_weight: self.energy_weight,
        }
    }
}

/// The four stock machine models (two edge, two cloud) with measured power
/// curves.
pub fn stock_host_types() -> Vec<HostType> {
    let mk = |name: &str,
              layer: Layer,
              cores: u32,
              mips: f64,
              ram_gb: f64,
              net: f64,
              disk: f64,
              cost: f64,
              curve: [f64; 11]| HostType {
        name: name.to_string(),
        layer,
        cores,
        mips_per_core: mips,
        ram_mb: ram_gb * 1024.0,
        net_bw: net,
        disk_bw: disk,
        cost_per_hour: cost,
        power_curve: PowerCurve::new(curve).expect("stock curve is valid"),
        response_time: None,
        energy_weight: 1.0,
    };
    vec![
        mk(
            "Hitachi HA 8000",
            Layer::Edge,
            2,
            1800.0,
            8.0,
            100.0,
            76.0,
            0.11,
            [
                24.3, 30.4, 33.7, 36.6, 39.6, 42.2, 45.6, 51.8, 55.7, 60.8, 63.2,
            ],
        ),
        mk(
            "DEPO Race X340H",
            Layer::Edge,
            4,
            2000.0,
            16.0,
            1000.0,
            49.0,
            0.23,
            [
                83.2, 88.2, 94.3, 101.0, 107.0, 112.0, 117.0, 120.0, 124.0, 128.0, 131.0,
            ],
        ),
        mk(
            "Dell PowerEdge R820",
            Layer::Cloud,
            32,
            2000.0,
            48.0,
            1000.0,
            49.0,
            3.47,
            [
                110.0, 149.0, 167.0, 188.0, 218.0, 237.0, 268.0, 307.0, 358.0, 414.0, 446.0,
            ],
        ),
        mk(
            "Dell PowerEdge C6320",
            Layer::Cloud,
            64,
            2660.0,
            64.0,
            1500.0,
            1024.0,
            6.94,
            [
                210.0, 371.0, 449.0, 522.0, 589.0, 647.0, 705.0, 802.0, 924.0, 1071.0, 1229.0,
            ],
        ),
    ]
}

/// Expands host types into a host list, `counts[i]` instances of type `i`,
/// with dense ids in type order.
pub fn expand_host_types(types: &[HostType], counts: &[usize]) -> Vec<Host> {
    let mut hosts = Vec::new();
    for (ty, &count) in types.iter().zip(counts) {
        for _ in 0..count {
            hosts.push(ty.instantiate(hosts.len()));
        }
    }
    hosts
}

const HOST_TABLE_COLUMNS: [&str; 20] = [
    "name", "layer", "cores", "mips", "ram_mb", "net_bw", "disk_bw", "cost_per_hr", "p0", "p10",
    "p20", "p30", "p40", "p50", "p60", "p70", "p80", "p90", "p100", "count",
];

/// Loads a host-table CSV (columns: name, layer, cores, mips, ram_mb, net_bw,
/// disk_bw, cost_per_hr, p0..p100, count, optional energy_weight and
/// response_time) and expands it into a host list.
pub fn load_host_table(path: &Path) -> Result<Vec<Host>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: display.clone(),
            row: 0,
            msg: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: display.clone(),
            row: 0,
            msg: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let mut required = Vec::with_capacity(HOST_TABLE_COLUMNS.len());
    for name in HOST_TABLE_COLUMNS {
        match col(name) {
            Some(idx) => required.push(idx),
            None => {
                return Err(Error::Parse {
                    path: display,
                    row: 0,
                    msg: format!("missing column {name:?}"),
                })
            }
        }
    }
    let weight_col = col("energy_weight");
    let response_col = col("response_time");

    let mut types = Vec::new();
    let mut counts = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            row,
            msg: e.to_string(),
        })?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let num = |idx: usize, name: &str| -> Result<f64> {
            let raw = field(idx);
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                row,
                msg: format!("{name}: not a number: {raw:?}"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation {
                    path: display.clone(),
                    row,
                    msg: format!("{name}: must be finite and non-negative, got {v}"),
                });
            }
            Ok(v)
        };
        let mut curve = [0.0; 11];
        for (k, slot) in curve.iter_mut().enumerate() {
            *slot = num(required[8 + k], HOST_TABLE_COLUMNS[8 + k])?;
        }
        let count = num(required[19], "count")? as usize;
        types.push(HostType {
            name: field(required[0]).to_string(),
            layer: Layer::parse(field(required[1]))?,
            cores: num(required[2], "cores")? as u32,
            mips_per_core: num(required[3], "mips")?,
            ram_mb: num(required[4], "ram_mb")?,
            net_bw: num(required[5], "net_bw")?,
            disk_bw: num(required[6], "disk_bw")?,
            cost_per_hour: num(required[7], "cost_per_hr")?,
            power_curve: PowerCurve::new(curve).map_err(|e| Error::Validation {
                path: display.clone(),
                row,
                msg: e.to_string(),
            })?,
            response_time: match response_col {
                Some(idx) if !field(idx).is_empty() => Some(num(idx, "response_time")?),
                _ => None,
            },
            energy_weight: match weight_col {
                Some(idx) if !field(idx).is_empty() => num(idx, "energy_weight")?,
                _ => 1.0,
            },
        });
        counts.push(count);
    }
    if types.is_empty() {
        return Err(Error::Validation {
            path: display,
            row: 0,
            msg: "host table has no rows".to_string(),
        });
    }
    Ok(expand_host_types(&types, &counts))
}

/// Writes a host table for the given types and counts in the format
/// `load_host_table` reads.
pub fn write_host_table(path: &Path, types: &[HostType], counts: &[usize]) -> Result<()> {
    use std::io::Write;
    let mut out = std::fs::File::create(path)?;
    writeln!(
        out,
        "{},energy_weight,response_time",
        HOST_TABLE_COLUMNS.join(",")
    )?;
    for (ty, count) in types.iter().zip(counts) {
        let curve: Vec<String> = ty.power_curve.0.iter().map(|p| p.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            ty.name,
            ty.layer,
            ty.cores,
            ty.mips_per_core,
            ty.ram_mb,
            ty.net_bw,
            ty.disk_bw,
            ty.cost_per_hour,
            curve.join(","),
            count,
            ty.energy_weight,
            ty.response_time
                .map(|r| r.to_string())
                .unwrap_or_default(),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[u64]) -> BTreeSet<TaskId> {
        ids.iter().map(|&i| TaskId(i)).collect()
    }

    fn test_host(mips: f64, ram: f64, net: f64, disk: f64) -> Host {
        Host {
            id: HostId(0),
            name: "test".to_string(),
            layer: Layer::Edge,
            cores: 1,
            mips_capacity: mips,
            ram_mb: ram,
            net_bw: net,
            disk_bw: disk,
            power_curve: PowerCurve::new([
                10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0, 18.0, 19.0, 20.0,
            ])
            .unwrap(),
            cost_per_hour: 0.1,
            response_time: 0.001,
            energy_weight: 1.0,
        }
    }

    #[test]
    fn set_algebra_follows_union_minus_leaving() {
        let prev = TaskSets {
            active: set(&[1, 2, 3]),
            migratable: set(&[1, 2, 3]),
            arriving: set(&[3]),
            leaving: BTreeSet::new(),
        };
        let next =
            advance_task_sets(&prev, &set(&[2]), &set(&[4]), &BTreeSet::new()).unwrap();
        assert_eq!(next.active, set(&[1, 3, 4]));
        assert_eq!(next.migratable, set(&[1, 3]));
        assert_eq!(next.arriving, set(&[4]));
        assert_eq!(next.leaving, set(&[2]));
    }

    #[test]
    fn migrating_tasks_are_excluded_from_migratable() {
        let prev = TaskSets {
            active: set(&[1, 2]),
            migratable: set(&[1, 2]),
            arriving: BTreeSet::new(),
            leaving: BTreeSet::new(),
        };
        let next =
            advance_task_sets(&prev, &BTreeSet::new(), &set(&[5]), &set(&[2])).unwrap();
        assert_eq!(next.active, set(&[1, 2, 5]));
        assert_eq!(next.migratable, set(&[1]));
    }

    #[test]
    fn advancing_rejects_unknown_completions_and_duplicate_arrivals() {
        let prev = TaskSets {
            active: set(&[1]),
            ..TaskSets::default()
        };
        assert!(advance_task_sets(&prev, &set(&[9]), &BTreeSet::new(), &BTreeSet::new()).is_err());
        assert!(advance_task_sets(&prev, &BTreeSet::new(), &set(&[1]), &BTreeSet::new()).is_err());
    }

    #[test]
    fn suitability_is_boundary_inclusive() {
        let host = test_host(2000.0, 4000.0, 100.0, 50.0);
        let mut task = Task::new(TaskId(1), 0, 600.0);
        task.demands = Demands::new(500.0, 1000.0, 10.0, 5.0);
        let load = Demands::new(1500.0, 3000.0, 90.0, 45.0);
        assert!(is_suitable(&host, &task, &load));
        let over = Demands::new(1500.1, 3000.0, 90.0, 45.0);
        assert!(!is_suitable(&host, &task, &over));
    }

    #[test]
    fn suitability_checks_every_dimension() {
        let host = test_host(2000.0, 4000.0, 100.0, 50.0);
        let mut task = Task::new(TaskId(1), 0, 600.0);
        for dim in 0..4 {
            task.demands = Demands::new(1.0, 1.0, 1.0, 1.0);
            let mut load = Demands::default();
            match dim {
                0 => load.cpu_mips = 2000.0,
                1 => load.ram_mb = 4000.0,
                2 => load.net_bw = 100.0,
                _ => load.disk_bw = 50.0,
            }
            assert!(!is_suitable(&host, &task, &load), "dimension {dim}");
        }
    }

    #[test]
    fn power_curve_rejects_decreasing_points() {
        let mut pts = [0.0; 11];
        for (i, p) in pts.iter_mut().enumerate() {
            *p = i as f64;
        }
        assert!(PowerCurve::new(pts).is_ok());
        pts[5] = 3.0;
        assert!(PowerCurve::new(pts).is_err());
    }

    #[test]
    fn stock_hyperparams_are_accepted_as_given() {
        let hp = HyperParams::stock();
        let sum: f64 = hp.as_array().iter().sum();
        assert!((sum - 1.059).abs() < 1e-12);
        assert!(HyperParams::new(hp.energy, hp.response, hp.migration, hp.cost, hp.slav).is_ok());
        assert!(HyperParams::new(-0.1, 0.5, 0.2, 0.2, 0.2).is_err());
        assert!(HyperParams::new(0.5, 0.5, 0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn desk_cluster_has_eight_hosts_with_scaled_capacity() {
        let config = ClusterConfig::desk_default();
        assert_eq!(config.hosts.len(), 8);
        assert_eq!(config.hosts[0].mips_capacity, 3600.0);
        assert_eq!(config.hosts[2].mips_capacity, 8000.0);
        assert_eq!(config.hosts[4].mips_capacity, 64000.0);
        assert_eq!(config.hosts[6].mips_capacity, 170240.0);
        assert_eq!(config.hosts[0].response_time, 0.001);
        assert_eq!(config.hosts[6].response_time, 0.010);
        assert_eq!(config.hosts[1].power_curve.max_watts(), 63.2);
    }

    #[test]
    fn host_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hosts.csv");
        let types = stock_host_types();
        write_host_table(&path, &types, &[2, 1, 1, 3]).unwrap();
        let hosts = load_host_table(&path).unwrap();
        assert_eq!(hosts.len(), 7);
        assert_eq!(hosts[0].name, "Hitachi HA 8000");
        assert_eq!(hosts[0].mips_capacity, 3600.0);
        assert_eq!(hosts[1].id, HostId(1));
        assert_eq!(hosts[6].power_curve.0[10], 1229.0);
        assert_eq!(hosts[2].layer, Layer::Edge);
        assert_eq!(hosts[3].layer, Layer::Cloud);
    }

    #[test]
    fn host_table_reports_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hosts.csv");
        std::fs::write(
            &path,
            "name,layer,cores,mips,ram_mb,net_bw,disk_bw,cost_per_hr,\
             p0,p10,p20,p30,p40,p50,p60,p70,p80,p90,p100,count\n\
             bad,edge,2,oops,8192,100,76,0.11,1,2,3,4,5,6,7,8,9,10,11,2\n",
        )
        .unwrap();
        let err = load_host_table(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "unexpected error: {msg}");
    }

    proptest! {
        #[test]
        fn set_algebra_replays_from_scratch(
            events in proptest::collection::vec(
                (proptest::collection::btree_set(0u64..40, 0..4),
                 proptest::collection::btree_set(0u64..40, 0..4)),
                1..20,
            )
        ) {
            // Replay the same event stream through advance_task_sets and
            // through a direct set-algebra fold; the results must agree at
            // every step.
            let mut sets = TaskSets::default();
            let mut oracle_active: BTreeSet<TaskId> = BTreeSet::new();
            let mut next_fresh = 1000u64;
            for (complete_raw, arrive_raw) in events {
                let completed: BTreeSet<TaskId> = complete_raw
                    .iter()
                    .map(|&i| TaskId(i))
                    .filter(|id| sets.active.contains(id))
                    .collect();
                let mut arriving: BTreeSet<TaskId> = arrive_raw
                    .iter()
                    .map(|&i| TaskId(i))
                    .filter(|id| !sets.active.contains(id))
                    .collect();
                arriving.insert(TaskId(next_fresh));
                next_fresh += 1;
                sets = advance_task_sets(&sets, &completed, &arriving, &BTreeSet::new()).unwrap();
                for id in &completed {
                    oracle_active.remove(id);
                }
                oracle_active.extend(arriving.iter().copied());
                prop_assert_eq!(&sets.active, &oracle_active);
                prop_assert!(sets.migratable.is_subset(&sets.active));
                prop_assert!(sets.migratable.intersection(&sets.arriving).next().is_none());
                prop_assert!(sets.leaving.intersection(&sets.active).next().is_none());
            }
        }

        #[test]
        fn reducing_load_never_breaks_suitability(
            cap in 100.0f64..5000.0,
            demand in 0.0f64..2000.0,
            load in 0.0f64..5000.0,
            shrink in 0.0f64..1.0,
        ) {
            let host = test_host(cap, cap, cap, cap);
            let mut task = Task::new(TaskId(0), 0, 300.0);
            task.demands = Demands::new(demand, demand, demand, demand);
            let full = Demands::new(load, load, load, load);
            let reduced = Demands::new(load * shrink, load * shrink, load * shrink, load * shrink);
            if is_suitable(&host, &task, &full) {
                prop_assert!(is_suitable(&host, &task, &reduced));
            }
        }
    }
}
