//! Workload generation: stochastic task arrivals (normally distributed count
//! and duration), per-interval resource demands driven either by recorded
//! usage traces or by a seeded random walk, and a deterministic 75/25
//! train/test split over trace ids.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{Demands, Task, TaskId};

/// One sample of a recorded usage trace. Bandwidth fields are MB/s; samples
/// within a trace are spaced one interval (300 s) apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub timestamp: f64,
    pub cpu_cores: f64,
    pub cpu_usage_mips: f64,
    pub ram_mb: f64,
    pub net_rx: f64,
    pub net_tx: f64,
    pub disk_read: f64,
    pub disk_write: f64,
}

impl TraceRecord {
    /// The four-dimensional demand this sample represents.
    pub fn demands(&self) -> Demands {
        Demands::new(
            self.cpu_usage_mips,
            self.ram_mb,
            self.net_rx + self.net_tx,
            self.disk_read + self.disk_write,
        )
    }
}

/// A named sequence of trace records, usually one file's worth.
#[derive(Debug, Clone)]
pub struct TraceStream {
    pub id: String,
    pub records: Vec<TraceRecord>,
}

const TRACE_COLUMNS: [&str; 8] = [
    "timestamp",
    "cpu_cores",
    "cpu_usage_mips",
    "ram_mb",
    "net_rx",
    "net_tx",
    "disk_read",
    "disk_write",
];

/// Expected spacing between consecutive trace samples, in seconds.
pub const TRACE_SPACING: f64 = 300.0;

fn detect_delimiter(first_line: &str) -> u8 {
    let semis = first_line.matches(';').count();
    let commas = first_line.matches(',').count();
    if semis > commas {
        b';'
    } else {
        b','
    }
}

fn load_trace_file(path: &Path) -> Result<TraceStream> {
    let display = path.display().to_string();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| display.clone());
    let raw = std::fs::read_to_string(path)?;
    let first_line = raw.lines().next().unwrap_or("");
    let delimiter = detect_delimiter(first_line);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: display.clone(),
            row: 1,
            msg: e.to_string(),
        })?
        .clone();
    let mut cols = [0usize; 8];
    for (k, name) in TRACE_COLUMNS.iter().enumerate() {
        cols[k] = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                path: display.clone(),
                row: 1,
                msg: format!("missing column {name:?}"),
            })?;
    }

    let mut records = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            row,
            msg: e.to_string(),
        })?;
        let mut values = [0.0f64; 8];
        for (k, slot) in values.iter_mut().enumerate() {
            let raw = record.get(cols[k]).unwrap_or("");
            *slot = raw.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                row,
                msg: format!("{}: not a number: {raw:?}", TRACE_COLUMNS[k]),
            })?;
            if !slot.is_finite() || *slot < 0.0 {
                return Err(Error::Validation {
                    path: display.clone(),
                    row,
                    msg: format!(
                        "{}: must be finite and non-negative, got {}",
                        TRACE_COLUMNS[k], slot
                    ),
                });
            }
        }
        if let Some(prev) = records.last() {
            let prev: &TraceRecord = prev;
            let gap = values[0] - prev.timestamp;
            if (gap - TRACE_SPACING).abs() > 1e-6 {
                return Err(Error::Validation {
                    path: display.clone(),
                    row,
                    msg: format!("samples must be {TRACE_SPACING} s apart, got a gap of {gap} s"),
                });
            }
        }
        records.push(TraceRecord {
            timestamp: values[0],
            cpu_cores: values[1],
            cpu_usage_mips: values[2],
            ram_mb: values[3],
            net_rx: values[4],
            net_tx: values[5],
            disk_read: values[6],
            disk_write: values[7],
        });
    }
    if records.is_empty() {
        return Err(Error::Validation {
            path: display,
            row: 0,
            msg: "trace has no samples".to_string(),
        });
    }
    Ok(TraceStream { id, records })
}

/// Loads trace streams from a single delimited file or from every `*.csv` /
/// `*.txt` file in a directory, keyed by file stem and sorted by id. The
/// field delimiter (comma or semicolon) is detected from the header line of
/// each file.
pub fn load_trace(path: &Path) -> Result<Vec<TraceStream>> {
    let mut streams = Vec::new();
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("csv") | Some("txt")
                )
            })
            .collect();
        files.sort();
        for file in files {
            streams.push(load_trace_file(&file)?);
        }
    } else {
        streams.push(load_trace_file(path)?);
    }
    if streams.is_empty() {
        return Err(Error::Validation {
            path: path.display().to_string(),
            row: 0,
            msg: "no trace files found".to_string(),
        });
    }
    streams.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(streams)
}

/// Which side of the 75/25 trace split a run draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Test,
    All,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic 75/25 split by hash of the trace id; stable across runs and
/// platforms.
pub fn partition_of(trace_id: &str) -> Partition {
    if fnv1a(trace_id.as_bytes()) % 100 < 75 {
        Partition::Train
    } else {
        Partition::Test
    }
}

/// Arrival process parameters: a normal draw (rounded, clamped at zero) for
/// the number of new tasks per interval and a normal draw (clamped to at
/// least one interval) for each task's duration.
#[derive(Debug, Clone, Copy)]
pub struct ArrivalModel {
    pub mean_new_tasks: f64,
    pub std_new_tasks: f64,
    pub mean_duration: f64,
    pub std_duration: f64,
}

impl Default for ArrivalModel {
    fn default() -> Self {
        ArrivalModel {
            mean_new_tasks: 12.0,
            std_new_tasks: 5.0,
            mean_duration: 1800.0,
            std_duration: 300.0,
        }
    }
}

/// Bounds and step sizes of the synthetic random-walk demand model.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticParams {
    pub cpu_init: (f64, f64),
    pub cpu_step: f64,
    pub cpu_range: (f64, f64),
    pub ram_init: (f64, f64),
    pub ram_step: f64,
    pub ram_range: (f64, f64),
    pub net_init: (f64, f64),
    pub net_step: f64,
    pub net_range: (f64, f64),
    pub disk_init: (f64, f64),
    pub disk_step: f64,
    pub disk_range: (f64, f64),
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            cpu_init: (100.0, 600.0),
            cpu_step: 50.0,
            cpu_range: (0.0, 900.0),
            ram_init: (200.0, 3000.0),
            ram_step: 150.0,
            ram_range: (50.0, 6000.0),
            net_init: (1.0, 40.0),
            net_step: 4.0,
            net_range: (0.0, 80.0),
            disk_init: (1.0, 15.0),
            disk_step: 2.0,
            disk_range: (0.0, 40.0),
        }
    }
}

/// Where per-interval demands come from.
#[derive(Debug, Clone)]
pub enum DemandMode {
    /// Seeded random walk per task.
    Synthetic(SyntheticParams),
    /// Recorded traces, assigned to tasks round-robin in id order.
    Traces {
        streams: Vec<TraceStream>,
        partition: Partition,
    },
}

enum Source {
    Walk {
        rng: ChaCha8Rng,
        current: Demands,
        last_interval: u64,
    },
    Trace {
        stream: usize,
    },
}

/// Seeded generator owning task admission and per-task demand evolution.
/// With a fixed seed the produced task stream and every demand sequence are
/// identical across runs.
pub struct WorkloadGenerator {
    arrival: ArrivalModel,
    interval_seconds: f64,
    seed: u64,
    rng: ChaCha8Rng,
    next_id: u64,
    synthetic: Option<SyntheticParams>,
    trace_pool: Vec<TraceStream>,
    rr_cursor: usize,
    sources: BTreeMap<TaskId, Source>,
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over seed + salt; gives every task an
    // independent, reproducible stream.
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(salt.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl WorkloadGenerator {
    pub fn new(
        seed: u64,
        arrival: ArrivalModel,
        interval_seconds: f64,
        mode: DemandMode,
    ) -> Result<Self> {
        if arrival.std_new_tasks < 0.0 || arrival.std_duration < 0.0 {
            return Err(Error::config("arrival deviations must be non-negative"));
        }
        let (synthetic, trace_pool) = match mode {
            DemandMode::Synthetic(params) => (Some(params), Vec::new()),
            DemandMode::Traces { streams, partition } => {
                let pool: Vec<TraceStream> = streams
                    .into_iter()
                    .filter(|s| match partition {
                        Partition::All => true,
                        p => partition_of(&s.id) == p,
                    })
                    .collect();
                if pool.is_empty() {
                    return Err(Error::config(
                        "no trace streams left after partition filtering",
                    ));
                }
                (None, pool)
            }
        };
        Ok(WorkloadGenerator {
            arrival,
            interval_seconds,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 1,
            synthetic,
            trace_pool,
            rr_cursor: 0,
            sources: BTreeMap::new(),
        })
    }

    /// Admits new tasks for `interval`: the count is a rounded normal draw
    /// clamped at zero and capped by the free slots, durations are normal
    /// draws clamped to at least one interval. Initial demands are sampled
    /// immediately.
    pub fn generate_new_tasks(
        &mut self,
        interval: u64,
        occupied_slots: usize,
        max_tasks: usize,
    ) -> Result<Vec<Task>> {
        let room = max_tasks.saturating_sub(occupied_slots);
        let drawn = Normal::new(self.arrival.mean_new_tasks, self.arrival.std_new_tasks)
            .map_err(|e| Error::config(format!("arrival count distribution: {e}")))?
            .sample(&mut self.rng)
            .round()
            .max(0.0) as usize;
        let count = drawn.min(room);
        let duration_dist = Normal::new(self.arrival.mean_duration, self.arrival.std_duration)
            .map_err(|e| Error::config(format!("duration distribution: {e}")))?;
        let mut tasks = Vec::with_capacity(count);
        for _ in 0..count {
            let id = TaskId(self.next_id);
            self.next_id += 1;
            let duration = duration_dist
                .sample(&mut self.rng)
                .max(self.interval_seconds);
            let mut task = Task::new(id, interval, duration);
            self.register(&task)?;
            task.demands = self.sample_demand(&task, interval)?;
            tasks.push(task);
        }
        Ok(tasks)
    }

    fn register(&mut self, task: &Task) -> Result<()> {
        let source = if let Some(params) = self.synthetic {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, task.id.0));
            let current = Demands::new(
                rng.gen_range(params.cpu_init.0..=params.cpu_init.1),
                rng.gen_range(params.ram_init.0..=params.ram_init.1),
                rng.gen_range(params.net_init.0..=params.net_init.1),
                rng.gen_range(params.disk_init.0..=params.disk_init.1),
            );
            Source::Walk {
                rng,
                current,
                last_interval: task.created_at,
            }
        } else {
            let stream = self.rr_cursor % self.trace_pool.len();
            self.rr_cursor += 1;
            Source::Trace { stream }
        };
        self.sources.insert(task.id, source);
        Ok(())
    }

    /// The task's demand for `interval_index`. Trace-bound tasks read the
    /// sample at `interval_index - created_at`, holding the last sample once
    /// the trace is exhausted; synthetic tasks advance their random walk.
    /// Idempotent within an interval.
    pub fn sample_demand(&mut self, task: &Task, interval_index: u64) -> Result<Demands> {
        let params = self.synthetic;
        let source = self
            .sources
            .get_mut(&task.id)
            .ok_or_else(|| Error::invariant(format!("unknown task {}", task.id)))?;
        match source {
            Source::Trace { stream } => {
                let records = &self.trace_pool[*stream].records;
                let offset = (interval_index.saturating_sub(task.created_at) as usize)
                    .min(records.len() - 1);
                Ok(records[offset].demands())
            }
            Source::Walk {
                rng,
                current,
                last_interval,
            } => {
                let params = params.expect("walk source implies synthetic params");
                while *last_interval < interval_index {
                    let step = |rng: &mut ChaCha8Rng, v: f64, sd: f64, range: (f64, f64)| {
                        let noise = Normal::new(0.0, sd).expect("std is non-negative");
                        (v + noise.sample(rng)).clamp(range.0, range.1)
                    };
                    current.cpu_mips = step(rng, current.cpu_mips, params.cpu_step, params.cpu_range);
                    current.ram_mb = step(rng, current.ram_mb, params.ram_step, params.ram_range);
                    current.net_bw = step(rng, current.net_bw, params.net_step, params.net_range);
                    current.disk_bw =
                        step(rng, current.disk_bw, params.disk_step, params.disk_range);
                    *last_interval += 1;
                }
                Ok(*current)
            }
        }
    }

    /// Drops per-task demand state once a task has left the system.
    pub fn forget(&mut self, id: TaskId) {
        self.sources.remove(&id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn write_trace(dir: &Path, name: &str, delimiter: char, rows: &[[f64; 8]]) -> PathBuf {
        let path = dir.join(name);
        let mut out = String::new();
        out.push_str(
            &TRACE_COLUMNS
                .join(&delimiter.to_string())
                .to_string(),
        );
        out.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(&delimiter.to_string()));
            out.push('\n');
        }
        std::fs::write(&path, out).unwrap();
        path
    }

    fn sample_rows() -> Vec<[f64; 8]> {
        vec![
            [0.0, 1.0, 250.0, 1024.0, 2.0, 3.0, 1.0, 0.5],
            [300.0, 1.0, 300.0, 1100.0, 2.5, 3.5, 1.2, 0.6],
            [600.0, 1.0, 280.0, 1050.0, 2.2, 3.2, 1.1, 0.4],
        ]
    }

    fn synthetic_generator(seed: u64) -> WorkloadGenerator {
        WorkloadGenerator::new(
            seed,
            ArrivalModel::default(),
            300.0,
            DemandMode::Synthetic(SyntheticParams::default()),
        )
        .unwrap()
    }

    #[test]
    fn comma_and_semicolon_files_parse_identically() {
        let dir = tempfile::tempdir().unwrap();
        let rows = sample_rows();
        let a = write_trace(dir.path(), "a.csv", ',', &rows);
        let b = write_trace(dir.path(), "b.csv", ';', &rows);
        let sa = load_trace(&a).unwrap();
        let sb = load_trace(&b).unwrap();
        assert_eq!(sa[0].records, sb[0].records);
        assert_eq!(sa[0].records.len(), 3);
        assert_eq!(sa[0].records[1].demands().net_bw, 6.0);
    }

    #[test]
    fn directory_loading_collects_sorted_streams() {
        let dir = tempfile::tempdir().unwrap();
        let rows = sample_rows();
        write_trace(dir.path(), "vm2.csv", ',', &rows);
        write_trace(dir.path(), "vm1.csv", ';', &rows);
        let streams = load_trace(dir.path()).unwrap();
        assert_eq!(streams.len(), 2);
        assert_eq!(streams[0].id, "vm1");
        assert_eq!(streams[1].id, "vm2");
    }

    #[test]
    fn malformed_rows_are_rejected_with_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "timestamp,cpu_cores,cpu_usage_mips,ram_mb,net_rx,net_tx,disk_read,disk_write\n\
             0,1,250,1024,2,3,1,0.5\n\
             300,1,oops,1024,2,3,1,0.5\n",
        )
        .unwrap();
        let msg = load_trace(&path).unwrap_err().to_string();
        assert!(msg.contains("row 3"), "unexpected error: {msg}");

        std::fs::write(
            &path,
            "timestamp,cpu_cores,cpu_usage_mips,ram_mb,net_rx,net_tx,disk_read,disk_write\n\
             0,1,250,-9,2,3,1,0.5\n",
        )
        .unwrap();
        let msg = load_trace(&path).unwrap_err().to_string();
        assert!(msg.contains("row 2"), "unexpected error: {msg}");

        std::fs::write(
            &path,
            "timestamp,cpu_cores,ram_mb,net_rx,net_tx,disk_read,disk_write\n0,1,1024,2,3,1,0.5\n",
        )
        .unwrap();
        let msg = load_trace(&path).unwrap_err().to_string();
        assert!(msg.contains("cpu_usage_mips"), "unexpected error: {msg}");
    }

    #[test]
    fn uneven_sample_spacing_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = sample_rows();
        rows[2][0] = 700.0;
        let path = write_trace(dir.path(), "gap.csv", ',', &rows);
        let msg = load_trace(&path).unwrap_err().to_string();
        assert!(msg.contains("row 4"), "unexpected error: {msg}");
    }

    #[test]
    fn split_is_deterministic_and_roughly_75_25() {
        let mut train = 0;
        for i in 0..1000 {
            let id = format!("vm{i}");
            let p = partition_of(&id);
            assert_eq!(p, partition_of(&id));
            if p == Partition::Train {
                train += 1;
            }
        }
        assert!((700..=800).contains(&train), "train count {train}");
    }

    #[test]
    fn admission_respects_room_and_zero_variance_draws() {
        let arrival = ArrivalModel {
            mean_new_tasks: 12.0,
            std_new_tasks: 0.0,
            mean_duration: 1800.0,
            std_duration: 0.0,
        };
        let mut gen = WorkloadGenerator::new(
            7,
            arrival,
            300.0,
            DemandMode::Synthetic(SyntheticParams::default()),
        )
        .unwrap();
        let tasks = gen.generate_new_tasks(1, 0, 100).unwrap();
        assert_eq!(tasks.len(), 12);
        assert!(tasks.iter().all(|t| t.total_duration == 1800.0));
        let tasks = gen.generate_new_tasks(2, 95, 100).unwrap();
        assert_eq!(tasks.len(), 5);
    }

    #[test]
    fn durations_never_undershoot_one_interval() {
        let arrival = ArrivalModel {
            mean_new_tasks: 8.0,
            std_new_tasks: 0.0,
            mean_duration: 200.0,
            std_duration: 100.0,
        };
        let mut gen = WorkloadGenerator::new(
            3,
            arrival,
            300.0,
            DemandMode::Synthetic(SyntheticParams::default()),
        )
        .unwrap();
        for interval in 1..20 {
            for task in gen.generate_new_tasks(interval, 0, 100).unwrap() {
                assert!(task.total_duration >= 300.0);
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces_tasks_and_demand_walks() {
        let mut a = synthetic_generator(42);
        let mut b = synthetic_generator(42);
        for interval in 1..10 {
            let ta = a.generate_new_tasks(interval, 0, 30).unwrap();
            let tb = b.generate_new_tasks(interval, 0, 30).unwrap();
            assert_eq!(ta.len(), tb.len());
            for (x, y) in ta.iter().zip(&tb) {
                assert_eq!(x.id, y.id);
                assert_eq!(x.total_duration, y.total_duration);
                assert_eq!(x.demands, y.demands);
                let dx = a.sample_demand(x, interval + 3).unwrap();
                let dy = b.sample_demand(y, interval + 3).unwrap();
                assert_eq!(dx, dy);
            }
        }
    }

    #[test]
    fn walks_stay_in_range_and_are_idempotent_within_an_interval() {
        let mut gen = synthetic_generator(11);
        let tasks = gen.generate_new_tasks(1, 0, 10).unwrap();
        let task = &tasks[0];
        let params = SyntheticParams::default();
        for interval in 1..50 {
            let d = gen.sample_demand(task, interval).unwrap();
            let again = gen.sample_demand(task, interval).unwrap();
            assert_eq!(d, again);
            assert!(d.cpu_mips >= params.cpu_range.0 && d.cpu_mips <= params.cpu_range.1);
            assert!(d.ram_mb >= params.ram_range.0 && d.ram_mb <= params.ram_range.1);
        }
    }

    #[test]
    fn trace_bound_tasks_follow_their_stream_and_hold_the_last_sample() {
        let dir = tempfile::tempdir().unwrap();
        let rows = sample_rows();
        write_trace(dir.path(), "vm1.csv", ',', &rows);
        let streams = load_trace(dir.path()).unwrap();
        let arrival = ArrivalModel {
            mean_new_tasks: 2.0,
            std_new_tasks: 0.0,
            ..ArrivalModel::default()
        };
        let mut gen = WorkloadGenerator::new(
            5,
            arrival,
            300.0,
            DemandMode::Traces {
                streams,
                partition: Partition::All,
            },
        )
        .unwrap();
        let tasks = gen.generate_new_tasks(4, 0, 10).unwrap();
        assert_eq!(tasks.len(), 2);
        let t = &tasks[0];
        assert_eq!(t.demands.cpu_mips, 250.0);
        assert_eq!(gen.sample_demand(t, 5).unwrap().cpu_mips, 300.0);
        assert_eq!(gen.sample_demand(t, 6).unwrap().cpu_mips, 280.0);
        // Exhausted: the last sample holds from here on.
        assert_eq!(gen.sample_demand(t, 7).unwrap().cpu_mips, 280.0);
        assert_eq!(gen.sample_demand(t, 400).unwrap().cpu_mips, 280.0);
    }
}
