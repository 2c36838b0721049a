//! Scheduler input construction: per-interval feature matrices for hosts,
//! continuing tasks, and arriving tasks, standardized feature-wise into
//! [0, 1] against ranges fitted on a sample run.

use std::fmt::Write as _;
use std::path::Path;

use crate::csm::TaskTable;
use crate::error::{Error, Result};
use crate::model::{Host, TaskId, TaskSets};
use crate::simulator::interpolate_power;

/// Columns of one host row: cpu/ram/net/disk utilization, the four
/// capacities, idle/peak/current power draw, cost rate, response time, and
/// assigned task count.
pub const HOST_FEATURES: usize = 14;
/// Columns of one arriving-task row: cpu, ram, net, disk demands.
pub const DEMAND_FEATURES: usize = 4;

/// Binding of an actor output row to a task. `decision` rows (migratable or
/// arriving tasks) expect a host ranking; the rest are pinned to their host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowEntry {
    pub task: TaskId,
    pub decision: bool,
}

/// Unstandardized features for one interval. Only real rows are present;
/// padding happens after standardization.
#[derive(Debug, Clone)]
pub struct RawState {
    pub host_rows: Vec<Vec<f64>>,
    /// Continuing tasks ascending by id; features are the four demands
    /// followed by a one-hot of the current host.
    pub continuing: Vec<(RowEntry, Vec<f64>)>,
    /// Arriving tasks ascending by id; features are the four demands.
    pub arriving: Vec<(RowEntry, Vec<f64>)>,
}

/// Extracts raw features from the current cluster state. Host utilizations
/// reflect the placements carried over from the previous interval.
pub fn build_raw_state(
    hosts: &[Host],
    tasks: &TaskTable,
    sets: &TaskSets,
    max_tasks: usize,
) -> Result<RawState> {
    if sets.active.len() > max_tasks {
        return Err(Error::invariant(format!(
            "{} active tasks exceed the {} row budget",
            sets.active.len(),
            max_tasks
        )));
    }
    let n = hosts.len();
    let mut load = vec![[0.0f64; 4]; n];
    let mut counts = vec![0usize; n];
    for id in &sets.active {
        let task = tasks
            .get(id)
            .ok_or_else(|| Error::invariant(format!("active task {id} missing from table")))?;
        if let Some(h) = task.assigned_host {
            if h.0 >= n {
                return Err(Error::invariant(format!(
                    "task {id} references deleted host {h}"
                )));
            }
            load[h.0][0] += task.demands.cpu_mips;
            load[h.0][1] += task.demands.ram_mb;
            load[h.0][2] += task.demands.net_bw;
            load[h.0][3] += task.demands.disk_bw;
            counts[h.0] += 1;
        }
    }

    let mut host_rows = Vec::with_capacity(n);
    for (h, host) in hosts.iter().enumerate() {
        let cpu_util = load[h][0] / host.mips_capacity;
        let row = vec![
            cpu_util,
            load[h][1] / host.ram_mb,
            load[h][2] / host.net_bw,
            load[h][3] / host.disk_bw,
            host.mips_capacity,
            host.ram_mb,
            host.net_bw,
            host.disk_bw,
            host.power_curve.0[0],
            host.power_curve.max_watts(),
            interpolate_power(host, cpu_util.clamp(0.0, 1.0))?,
            host.cost_per_hour,
            host.response_time,
            counts[h] as f64,
        ];
        host_rows.push(row);
    }

    let mut continuing = Vec::new();
    for id in &sets.continuing() {
        let task = &tasks[id];
        let h = task.assigned_host.ok_or_else(|| {
            Error::invariant(format!("continuing task {id} has no assigned host"))
        })?;
        if h.0 >= n {
            return Err(Error::invariant(format!(
                "task {id} references deleted host {h}"
            )));
        }
        let mut row = vec![
            task.demands.cpu_mips,
            task.demands.ram_mb,
            task.demands.net_bw,
            task.demands.disk_bw,
        ];
        let mut one_hot = vec![0.0; n];
        one_hot[h.0] = 1.0;
        row.extend(one_hot);
        continuing.push((
            RowEntry {
                task: *id,
                decision: sets.migratable.contains(id),
            },
            row,
        ));
    }

    let mut arriving = Vec::new();
    for id in &sets.arriving {
        let task = &tasks[id];
        arriving.push((
            RowEntry {
                task: *id,
                decision: true,
            },
            vec![
                task.demands.cpu_mips,
                task.demands.ram_mb,
                task.demands.net_bw,
                task.demands.disk_bw,
            ],
        ));
    }

    Ok(RawState {
        host_rows,
        continuing,
        arriving,
    })
}

/// Per-feature ranges fitted on a sample run; frozen afterwards so training
/// and evaluation share one normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxTable {
    pub n_hosts: usize,
    /// (min, max) per host-feature column.
    pub host: Vec<(f64, f64)>,
    /// (min, max) per continuing-task column (demands + one-hot width).
    pub continuing: Vec<(f64, f64)>,
    /// (min, max) per arriving-task column.
    pub arriving: Vec<(f64, f64)>,
}

fn fold_ranges(ranges: &mut [(f64, f64)], row: &[f64]) -> Result<()> {
    if ranges.len() != row.len() {
        return Err(Error::invariant(format!(
            "feature row width {} does not match fitted width {}",
            row.len(),
            ranges.len()
        )));
    }
    for (range, &v) in ranges.iter_mut().zip(row) {
        range.0 = range.0.min(v);
        range.1 = range.1.max(v);
    }
    Ok(())
}

/// Scans raw states column-wise for each feature's min and max. Padding rows
/// are never included, so absent tasks cannot drag ranges to zero.
pub fn fit_minmax(samples: &[RawState]) -> Result<MinMaxTable> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invariant("cannot fit feature ranges on an empty sample"))?;
    let n = first.host_rows.len();
    let empty = (f64::INFINITY, f64::NEG_INFINITY);
    let mut table = MinMaxTable {
        n_hosts: n,
        host: vec![empty; HOST_FEATURES],
        continuing: vec![empty; DEMAND_FEATURES + n],
        arriving: vec![empty; DEMAND_FEATURES],
    };
    for state in samples {
        for row in &state.host_rows {
            fold_ranges(&mut table.host, row)?;
        }
        for (_, row) in &state.continuing {
            fold_ranges(&mut table.continuing, row)?;
        }
        for (_, row) in &state.arriving {
            fold_ranges(&mut table.arriving, row)?;
        }
    }
    // Columns never observed (e.g. no task ever continued) collapse to a
    // degenerate range, which standardizes everything to 0.
    for range in table
        .host
        .iter_mut()
        .chain(&mut table.continuing)
        .chain(&mut table.arriving)
    {
        if range.0 > range.1 {
            *range = (0.0, 0.0);
        }
    }
    Ok(table)
}

/// Maps a raw value into [0, 1] against its fitted range; a degenerate range
/// maps everything to 0.
pub fn standardize(value: f64, range: (f64, f64)) -> f64 {
    let (min, max) = range;
    if max <= min {
        return 0.0;
    }
    ((value - min) / (max - min)).clamp(0.0, 1.0)
}

/// Fixed-shape standardized scheduler input for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrices {
    pub n_hosts: usize,
    pub max_tasks: usize,
    /// n_hosts x HOST_FEATURES, row-major.
    pub host: Vec<f64>,
    /// max_tasks x (DEMAND_FEATURES + n_hosts), row-major, zero-padded.
    pub continuing: Vec<f64>,
    /// max_tasks x DEMAND_FEATURES, row-major, zero-padded.
    pub arriving: Vec<f64>,
    /// Actor-row binding: continuing tasks first, then arriving tasks, then
    /// `None` padding up to max_tasks.
    pub rows: Vec<Option<RowEntry>>,
}

impl StateMatrices {
    pub fn input_width(n_hosts: usize, max_tasks: usize) -> usize {
        n_hosts * HOST_FEATURES + max_tasks * (DEMAND_FEATURES + n_hosts) + max_tasks * DEMAND_FEATURES
    }

    /// Concatenates host, continuing, and arriving matrices into the flat
    /// network input.
    pub fn flattened(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::input_width(self.n_hosts, self.max_tasks));
        out.extend_from_slice(&self.host);
        out.extend_from_slice(&self.continuing);
        out.extend_from_slice(&self.arriving);
        out
    }
}

/// Standardizes a raw state and pads it to the fixed network shape.
pub fn build_state(raw: &RawState, table: &MinMaxTable, max_tasks: usize) -> Result<StateMatrices> {
    let n = table.n_hosts;
    if raw.host_rows.len() != n {
        return Err(Error::invariant(format!(
            "state has {} hosts but the feature table was fitted on {}",
            raw.host_rows.len(),
            n
        )));
    }
    if raw.continuing.len() + raw.arriving.len() > max_tasks {
        return Err(Error::invariant(format!(
            "{} task rows exceed the {} row budget",
            raw.continuing.len() + raw.arriving.len(),
            max_tasks
        )));
    }

    let mut host = Vec::with_capacity(n * HOST_FEATURES);
    for row in &raw.host_rows {
        if row.len() != HOST_FEATURES {
            return Err(Error::invariant("host feature row has the wrong width"));
        }
        for (v, range) in row.iter().zip(&table.host) {
            host.push(standardize(*v, *range));
        }
    }

    let cont_width = DEMAND_FEATURES + n;
    let mut continuing = vec![0.0; max_tasks * cont_width];
    let mut rows = Vec::with_capacity(max_tasks);
    for (i, (entry, row)) in raw.continuing.iter().enumerate() {
        if row.len() != cont_width {
            return Err(Error::invariant("continuing feature row has the wrong width"));
        }
        for (j, (v, range)) in row.iter().zip(&table.continuing).enumerate() {
            continuing[i * cont_width + j] = standardize(*v, *range);
        }
        rows.push(Some(*entry));
    }

    let mut arriving = vec![0.0; max_tasks * DEMAND_FEATURES];
    for (i, (entry, row)) in raw.arriving.iter().enumerate() {
        if row.len() != DEMAND_FEATURES {
            return Err(Error::invariant("arriving feature row has the wrong width"));
        }
        let slot = raw.continuing.len() + i;
        for (j, (v, range)) in row.iter().zip(&table.arriving).enumerate() {
            arriving[slot * DEMAND_FEATURES + j] = standardize(*v, *range);
        }
        rows.push(Some(*entry));
    }
    rows.resize(max_tasks, None);

    Ok(StateMatrices {
        n_hosts: n,
        max_tasks,
        host,
        continuing,
        arriving,
        rows,
    })
}

impl MinMaxTable {
    /// Flat text form: a version header, then one `section index min max`
    /// line per feature. Floats print in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "minmax v1 hosts={}", self.n_hosts);
        for (name, ranges) in [
            ("host", &self.host),
            ("continuing", &self.continuing),
            ("arriving", &self.arriving),
        ] {
            for (i, (min, max)) in ranges.iter().enumerate() {
                let _ = writeln!(out, "{name} {i} {min} {max}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invariant("empty feature-range file"))?;
        let n_hosts: usize = header
            .strip_prefix("minmax v1 hosts=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::invariant(format!("bad feature-range header: {header}")))?;
        let mut table = MinMaxTable {
            n_hosts,
            host: vec![(0.0, 0.0); HOST_FEATURES],
            continuing: vec![(0.0, 0.0); DEMAND_FEATURES + n_hosts],
            arriving: vec![(0.0, 0.0); DEMAND_FEATURES],
        };
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::invariant(format!("bad feature-range line: {line}")));
            }
            let idx: usize = parts[1]
                .parse()
                .map_err(|_| Error::invariant(format!("bad feature index: {line}")))?;
            let min: f64 = parts[2]
                .parse()
                .map_err(|_| Error::invariant(format!("bad feature min: {line}")))?;
            let max: f64 = parts[3]
                .parse()
                .map_err(|_| Error::invariant(format!("bad feature max: {line}")))?;
            let ranges = match parts[0] {
                "host" => &mut table.host,
                "continuing" => &mut table.continuing,
                "arriving" => &mut table.arriving,
                other => {
                    return Err(Error::invariant(format!(
                        "unknown feature section {other}"
                    )))
                }
            };
            let slot = ranges
                .get_mut(idx)
                .ok_or_else(|| Error::invariant(format!("feature index out of range: {line}")))?;
            *slot = (min, max);
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expand_host_types, stock_host_types, Demands, HostId, Task, TaskSets};
    use proptest::prelude::*;

    fn fixture() -> (Vec<Host>, TaskTable, TaskSets) {
        let hosts = expand_host_types(&stock_host_types(), &[2, 1, 0, 0]);
        let mut tasks = TaskTable::new();
        let mut t = Task::new(TaskId(1), 0, 1800.0);
        t.demands = Demands::new(900.0, 2000.0, 10.0, 5.0);
        t.assigned_host = Some(HostId(2));
        tasks.insert(TaskId(1), t);
        let mut t = Task::new(TaskId(2), 1, 1800.0);
        t.demands = Demands::new(450.0, 1000.0, 5.0, 2.0);
        tasks.insert(TaskId(2), t);
        let sets = TaskSets {
            active: [TaskId(1), TaskId(2)].into_iter().collect(),
            arriving: [TaskId(2)].into_iter().collect(),
            migratable: [TaskId(1)].into_iter().collect(),
            ..TaskSets::default()
        };
        (hosts, tasks, sets)
    }

    #[test]
    fn standardize_matches_the_piecewise_definition() {
        assert_eq!(standardize(5.0, (3.0, 3.0)), 0.0);
        assert_eq!(standardize(2.0, (2.0, 10.0)), 0.0);
        assert_eq!(standardize(10.0, (2.0, 10.0)), 1.0);
        assert_eq!(standardize(12.0, (2.0, 10.0)), 1.0);
        assert_eq!(standardize(6.0, (2.0, 10.0)), 0.5);
    }

    #[test]
    fn raw_state_exposes_utilization_one_hot_and_counts() {
        let (hosts, tasks, sets) = fixture();
        let raw = build_raw_state(&hosts, &tasks, &sets, 4).unwrap();
        assert_eq!(raw.host_rows.len(), 3);
        // Task 1 sits on the DEPO host: 900 of 8000 MIPS, 2000 of 16384 MB.
        let depo = &raw.host_rows[2];
        assert!((depo[0] - 900.0 / 8000.0).abs() < 1e-12);
        assert!((depo[1] - 2000.0 / 16384.0).abs() < 1e-12);
        assert_eq!(depo[13], 1.0);
        assert_eq!(raw.host_rows[0][13], 0.0);
        // Idle and peak power come straight from the curve.
        assert_eq!(depo[8], 83.2);
        assert_eq!(depo[9], 131.0);

        assert_eq!(raw.continuing.len(), 1);
        let (entry, row) = &raw.continuing[0];
        assert_eq!(entry.task, TaskId(1));
        assert!(entry.decision);
        assert_eq!(&row[..4], &[900.0, 2000.0, 10.0, 5.0]);
        let one_hot_sum: f64 = row[4..].iter().sum();
        assert_eq!(one_hot_sum, 1.0);
        assert_eq!(row[4 + 2], 1.0);

        assert_eq!(raw.arriving.len(), 1);
        assert_eq!(raw.arriving[0].0.task, TaskId(2));
    }

    #[test]
    fn fit_observes_ranges_and_build_standardizes_cell_by_cell() {
        let (hosts, tasks, sets) = fixture();
        let raw = build_raw_state(&hosts, &tasks, &sets, 4).unwrap();
        let mut second = raw.clone();
        second.continuing[0].1[0] = 300.0;
        let table = fit_minmax(&[raw.clone(), second]).unwrap();
        assert_eq!(table.continuing[0], (300.0, 900.0));

        let state = build_state(&raw, &table, 4).unwrap();
        assert_eq!(state.host.len(), 3 * HOST_FEATURES);
        assert_eq!(state.continuing.len(), 4 * (DEMAND_FEATURES + 3));
        assert_eq!(state.arriving.len(), 4 * DEMAND_FEATURES);
        // cpu demand 900 in range (300, 900) -> 1.
        assert_eq!(state.continuing[0], 1.0);
        // Constant features collapse to 0.
        assert_eq!(state.host[4], 0.0);
        // Row binding: continuing task first, then the arriving one.
        assert_eq!(
            state.rows[0],
            Some(RowEntry {
                task: TaskId(1),
                decision: true
            })
        );
        assert_eq!(
            state.rows[1],
            Some(RowEntry {
                task: TaskId(2),
                decision: true
            })
        );
        assert_eq!(state.rows[2], None);
        assert_eq!(state.rows.len(), 4);
        // Padding rows stay zero.
        assert!(state.continuing[(DEMAND_FEATURES + 3)..2 * (DEMAND_FEATURES + 3)]
            .iter()
            .all(|&v| v == 0.0));
        // Arriving slot is offset past the continuing rows.
        assert!(state.arriving[..DEMAND_FEATURES].iter().all(|&v| v == 0.0));
        assert!(state.arriving[DEMAND_FEATURES] > 0.0 || table.arriving[0].0 == table.arriving[0].1);
    }

    #[test]
    fn empty_system_with_degenerate_table_is_all_zero() {
        let hosts = expand_host_types(&stock_host_types(), &[1, 0, 0, 0]);
        let tasks = TaskTable::new();
        let sets = TaskSets::default();
        let raw = build_raw_state(&hosts, &tasks, &sets, 4).unwrap();
        let table = fit_minmax(&[raw.clone()]).unwrap();
        let state = build_state(&raw, &table, 4).unwrap();
        assert!(state.flattened().iter().all(|&v| v == 0.0));
        assert_eq!(
            state.flattened().len(),
            StateMatrices::input_width(1, 4)
        );
        assert!(state.rows.iter().all(Option::is_none));
    }

    #[test]
    fn deleted_host_reference_is_rejected() {
        let (mut hosts, tasks, sets) = fixture();
        hosts.truncate(2);
        let err = build_raw_state(&hosts, &tasks, &sets, 4).unwrap_err();
        assert!(err.to_string().contains("deleted host"));
    }

    #[test]
    fn build_state_is_deterministic() {
        let (hosts, tasks, sets) = fixture();
        let raw = build_raw_state(&hosts, &tasks, &sets, 4).unwrap();
        let table = fit_minmax(&[raw.clone()]).unwrap();
        let a = build_state(&raw, &table, 4).unwrap();
        let b = build_state(&raw, &table, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn minmax_table_round_trips_through_text() {
        let (hosts, tasks, sets) = fixture();
        let raw = build_raw_state(&hosts, &tasks, &sets, 4).unwrap();
        let table = fit_minmax(&[raw]).unwrap();
        let text = table.to_text();
        let back = MinMaxTable::from_text(&text).unwrap();
        assert_eq!(table, back);
        assert!(MinMaxTable::from_text("garbage").is_err());
    }

    #[test]
    fn fitting_an_empty_sample_fails() {
        assert!(fit_minmax(&[]).is_err());
    }

    proptest! {
        #[test]
        fn standardize_stays_in_unit_interval(
            v in -1e9f64..1e9,
            min in -1e6f64..1e6,
            span in 0.0f64..1e6,
        ) {
            let out = standardize(v, (min, min + span));
            prop_assert!((0.0..=1.0).contains(&out));
        }
    }
}
