//! Artifact formats: versioned CSVs for interval records, timings and
//! training events, the aggregate report, and cross-run comparison tables.
//!
//! Numbers are written with Rust's shortest round-trip float formatting and
//! read back with exact parsing, so a rewritten file is byte-identical and a
//! parsed record is bit-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use edgesched_core::metrics::{
    evaluation_aggregates, AggregateReport, IntervalMetrics, IntervalRecord,
};
use edgesched_core::schedulers::TrainingEvent;
use edgesched_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::runner::TimingRow;

/// Schema tags written as the first line of each CSV. Bump the version when
/// the column set changes; readers reject files they do not understand.
pub const INTERVALS_SCHEMA: &str = "# intervals v1";
pub const TIMING_SCHEMA: &str = "# timing v1";
pub const TRAINING_SCHEMA: &str = "# training v1";

const INTERVALS_HEADER: &str = "interval,active,arriving,leaving,deferred,migrations,\
migration_time,energy_joules,cost_usd,mean_utilization,response_sum,completion_sum,\
within_expected,sla_sum,aec,art,amt,cost,slav,loss,penalty,loss_pg";
const TIMING_HEADER: &str = "interval,decide_seconds,wall_seconds,decide_fraction";
const TRAINING_HEADER: &str = "update,lr,mean_episode_loss,mean_penalty";

pub fn intervals_csv(records: &[IntervalRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{INTERVALS_SCHEMA}");
    let _ = writeln!(out, "{INTERVALS_HEADER}");
    for r in records {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.interval,
            r.active,
            r.arriving,
            r.leaving,
            r.deferred,
            r.migrations,
            r.migration_time,
            r.energy_joules,
            r.cost_usd,
            r.mean_utilization,
            r.response_sum,
            r.completion_sum,
            r.within_expected,
            r.sla_sum,
            m.aec,
            m.art,
            m.amt,
            m.cost,
            m.slav,
            r.loss,
            r.penalty,
            r.loss_pg
        );
    }
    out
}

pub fn timing_csv(timings: &[TimingRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TIMING_SCHEMA}");
    let _ = writeln!(out, "{TIMING_HEADER}");
    for t in timings {
        let fraction = if t.wall_seconds > 0.0 {
            t.decide_seconds / t.wall_seconds
        } else {
            0.0
        };
        let _ = writeln!(
            out,
            "{},{},{},{}",
            t.interval, t.decide_seconds, t.wall_seconds, fraction
        );
    }
    out
}

pub fn training_csv(events: &[TrainingEvent]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TRAINING_SCHEMA}");
    let _ = writeln!(out, "{TRAINING_HEADER}");
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.update, e.lr, e.mean_episode_loss, e.mean_penalty
        );
    }
    out
}

pub fn aggregate_text(a: &AggregateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "intervals = {}", a.intervals);
    let _ = writeln!(out, "total_energy_joules = {}", a.total_energy_joules);
    let _ = writeln!(out, "total_cost_usd = {}", a.total_cost_usd);
    let _ = writeln!(out, "completed_tasks = {}", a.completed_tasks);
    let _ = writeln!(out, "avg_response_time = {}", a.avg_response_time);
    let _ = writeln!(out, "avg_completion_time = {}", a.avg_completion_time);
    let _ = writeln!(
        out,
        "within_expected_fraction = {}",
        a.within_expected_fraction
    );
    let _ = writeln!(
        out,
        "sla_violation_fraction = {}",
        a.sla_violation_fraction
    );
    let _ = writeln!(out, "total_migrations = {}", a.total_migrations);
    let _ = writeln!(
        out,
        "migrations_per_interval = {}",
        a.migrations_per_interval
    );
    let _ = writeln!(
        out,
        "migration_time_per_interval = {}",
        a.migration_time_per_interval
    );
    let _ = writeln!(out, "mean_utilization = {}", a.mean_utilization);
    let _ = writeln!(out, "mean_loss = {}", a.mean_loss);
    let _ = writeln!(out, "mean_loss_pg = {}", a.mean_loss_pg);
    out
}

struct CsvLines<'a> {
    path: String,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> CsvLines<'a> {
    fn new(text: &'a str, path: &Path) -> Self {
        CsvLines {
            path: path.display().to_string(),
            lines: text.lines().enumerate(),
        }
    }

    fn err(&self, row: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            row,
            msg: msg.into(),
        }
    }

    /// Checks the schema tag and header, consuming them.
    fn expect_prefix(&mut self, schema: &str, header: &str) -> Result<()> {
        match self.lines.next() {
            Some((_, line)) if line == schema => {}
            Some((i, line)) => {
                return Err(self.err(i + 1, format!("expected {schema:?}, got {line:?}")))
            }
            None => return Err(self.err(0, "empty file")),
        }
        match self.lines.next() {
            Some((_, line)) if line == header => Ok(()),
            Some((i, line)) => Err(self.err(i + 1, format!("expected {header:?}, got {line:?}"))),
            None => Err(self.err(0, "missing header")),
        }
    }
}

fn parse_field<T: std::str::FromStr>(
    lines: &CsvLines,
    row: usize,
    name: &str,
    raw: &str,
) -> Result<T> {
    raw.parse()
        .map_err(|_| lines.err(row, format!("{name}: cannot parse {raw:?}")))
}

/// Reads an interval CSV produced by [`intervals_csv`], verifying the schema
/// version and column names.
pub fn parse_intervals_csv(text: &str, path: &Path) -> Result<Vec<IntervalRecord>> {
    let mut lines = CsvLines::new(text, path);
    lines.expect_prefix(INTERVALS_SCHEMA, INTERVALS_HEADER)?;
    let names: Vec<&str> = INTERVALS_HEADER.split(',').collect();
    let mut records = Vec::new();
    while let Some((i, line)) = lines.lines.next() {
        let row = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(lines.err(
                row,
                format!("expected {} fields, got {}", names.len(), fields.len()),
            ));
        }
        let f = |k: usize| fields[k];
        records.push(IntervalRecord {
            interval: parse_field(&lines, row, names[0], f(0))?,
            active: parse_field(&lines, row, names[1], f(1))?,
            arriving: parse_field(&lines, row, names[2], f(2))?,
            leaving: parse_field(&lines, row, names[3], f(3))?,
            deferred: parse_field(&lines, row, names[4], f(4))?,
            migrations: parse_field(&lines, row, names[5], f(5))?,
            migration_time: parse_field(&lines, row, names[6], f(6))?,
            energy_joules: parse_field(&lines, row, names[7], f(7))?,
            cost_usd: parse_field(&lines, row, names[8], f(8))?,
            mean_utilization: parse_field(&lines, row, names[9], f(9))?,
            response_sum: parse_field(&lines, row, names[10], f(10))?,
            completion_sum: parse_field(&lines, row, names[11], f(11))?,
            within_expected: parse_field(&lines, row, names[12], f(12))?,
            sla_sum: parse_field(&lines, row, names[13], f(13))?,
            metrics: IntervalMetrics {
                aec: parse_field(&lines, row, names[14], f(14))?,
                art: parse_field(&lines, row, names[15], f(15))?,
                amt: parse_field(&lines, row, names[16], f(16))?,
                cost: parse_field(&lines, row, names[17], f(17))?,
                slav: parse_field(&lines, row, names[18], f(18))?,
            },
            loss: parse_field(&lines, row, names[19], f(19))?,
            penalty: parse_field(&lines, row, names[20], f(20))?,
            loss_pg: parse_field(&lines, row, names[21], f(21))?,
        });
    }
    Ok(records)
}

/// One run in a comparison: its directory name, the scheduler that produced
/// it, and aggregates recomputed from its interval records.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub run: String,
    pub scheduler: String,
    pub aggregate: AggregateReport,
}

/// Loads each run directory (its `config.txt` and `intervals.csv`) and
/// recomputes the aggregates, so the comparison reflects the records rather
/// than whatever `aggregate.txt` claims.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Vec<ComparisonRow>> {
    if dirs.is_empty() {
        return Err(Error::config("nothing to compare: no run directories"));
    }
    let mut rows = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let config = ExperimentConfig::from_file(&dir.join("config.txt"))?;
        let csv_path = dir.join("intervals.csv");
        let text = std::fs::read_to_string(&csv_path)?;
        let records = parse_intervals_csv(&text, &csv_path)?;
        let aggregate = evaluation_aggregates(&records)?;
        let run = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        rows.push(ComparisonRow {
            run,
            scheduler: config.scheduler,
            aggregate,
        });
    }
    Ok(rows)
}

const COMPARISON_HEADER: [&str; 12] = [
    "run",
    "scheduler",
    "intervals",
    "energy_joules",
    "cost_usd",
    "completed",
    "avg_response_s",
    "avg_completion_s",
    "within_expected",
    "slav_fraction",
    "migrations",
    "mean_loss",
];

fn comparison_cells(row: &ComparisonRow) -> [String; 12] {
    let a = &row.aggregate;
    [
        row.run.clone(),
        row.scheduler.clone(),
        a.intervals.to_string(),
        format!("{:.1}", a.total_energy_joules),
        format!("{:.4}", a.total_cost_usd),
        a.completed_tasks.to_string(),
        format!("{:.4}", a.avg_response_time),
        format!("{:.1}", a.avg_completion_time),
        format!("{:.4}", a.within_expected_fraction),
        format!("{:.6}", a.sla_violation_fraction),
        a.total_migrations.to_string(),
        format!("{:.6}", a.mean_loss),
    ]
}

/// Renders the comparison as a column-aligned text table.
pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut grid: Vec<[String; 12]> = vec![COMPARISON_HEADER.map(str::to_string)];
    grid.extend(rows.iter().map(comparison_cells));
    let mut widths = [0usize; 12];
    for line in &grid {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for line in &grid {
        let mut rendered = String::new();
        for (k, cell) in line.iter().enumerate() {
            if k > 0 {
                rendered.push_str("  ");
            }
            let _ = write!(rendered, "{cell:>width$}", width = widths[k]);
        }
        out.push_str(rendered.trim_end());
        out.push('\n');
    }
    out
}

/// The same comparison as machine-readable CSV.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# comparison v1");
    let _ = writeln!(out, "{}", COMPARISON_HEADER.join(","));
    for row in rows {
        let _ = writeln!(out, "{}", comparison_cells(row).join(","));
    }
    out
}
