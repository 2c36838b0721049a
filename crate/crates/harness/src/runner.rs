//! Runs experiments end to end: the per-interval loop that feeds the
//! scheduler and advances the simulation, feature-range fitting, multi-agent
//! training, and atomic artifact emission.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use edgesched_core::csm::{constrain_action, penalty, validate_constrained, CsmContext, TaskTable};
use edgesched_core::featurize::{build_raw_state, build_state, fit_minmax, MinMaxTable, RawState};
use edgesched_core::metrics::{
    composite_loss, evaluation_aggregates, interval_metrics, AggregateReport, IntervalRecord,
    RunningNormalizers,
};
use edgesched_core::model::{advance_task_sets, ClusterConfig, TaskId, TaskSets};
use edgesched_core::schedulers::{
    build_scheduler, A3cScheduler, BuildArgs, Decision, DecisionContext, GlobalParamStore,
    SchedulerPolicy, TrainingEvent,
};
use edgesched_core::simulator::{apply_action, run_interval};
use edgesched_core::workload::WorkloadGenerator;
use edgesched_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::report;

/// Wall-clock measurements for one interval. Kept apart from the simulation
/// records so those stay bit-reproducible across runs.
#[derive(Debug, Clone)]
pub struct TimingRow {
    pub interval: usize,
    /// Seconds the policy spent in `decide`.
    pub decide_seconds: f64,
    /// Seconds the whole interval took, scheduling and simulation included.
    pub wall_seconds: f64,
}

/// Output of one simulated trajectory.
pub struct ReplicaRun {
    pub records: Vec<IntervalRecord>,
    pub timings: Vec<TimingRow>,
    /// Unstandardized states, collected only when range fitting asked for
    /// them.
    pub raw_states: Vec<RawState>,
}

/// Everything a finished experiment hands back to callers, mirroring what was
/// written into the output directory.
pub struct RunSummary {
    pub records: Vec<IntervalRecord>,
    pub timings: Vec<TimingRow>,
    pub training: Vec<TrainingEvent>,
    pub aggregate: AggregateReport,
}

/// Drives one scheduler through `intervals` scheduling rounds.
///
/// Each round: admit arrivals, advance the task sets, refresh demands, build
/// the state, deliver the previous round's loss, decide, resolve the decision
/// against the constraint module, apply it, simulate the interval, and record
/// the realized metrics. With `table` absent (range fitting) the state is
/// standardized against a throwaway table fitted on the first interval; pass
/// `collect_raw` to get the unstandardized states back. `stop` is polled
/// before each interval and ends the run early when it returns true.
pub(crate) fn run_replica(
    cluster: &ClusterConfig,
    scheduler: &mut dyn SchedulerPolicy,
    generator: &mut WorkloadGenerator,
    table: Option<&MinMaxTable>,
    intervals: usize,
    collect_raw: bool,
    stop: Option<&dyn Fn() -> bool>,
) -> Result<ReplicaRun> {
    let mut tasks = TaskTable::new();
    let mut sets = TaskSets::default();
    let mut normalizers = RunningNormalizers::default();
    let mut completed_prev: BTreeSet<TaskId> = BTreeSet::new();
    let mut feedback = (0.0, 0.0);
    let mut bootstrap: Option<MinMaxTable> = None;

    let mut records = Vec::with_capacity(intervals);
    let mut timings = Vec::with_capacity(intervals);
    let mut raw_states = Vec::new();

    for i in 1..=intervals {
        if stop.is_some_and(|f| f()) {
            break;
        }
        let wall_start = Instant::now();

        // Tasks that finished last interval leave the table; their demand
        // streams are dropped.
        for id in &completed_prev {
            tasks.remove(id);
            generator.forget(*id);
        }

        // Admission: the surviving tasks occupy row slots, arrivals fill the
        // rest up to the row budget.
        let occupied = sets.active.len() - completed_prev.len();
        let new_tasks = generator.generate_new_tasks(i as u64, occupied, cluster.max_tasks)?;
        let mut new_ids: BTreeSet<TaskId> = BTreeSet::new();
        for task in new_tasks {
            new_ids.insert(task.id);
            tasks.insert(task.id, task);
        }

        // Migrations that landed at the end of last interval sit out this
        // round's migratable set, then become movable again.
        let landed: BTreeSet<TaskId> = tasks
            .values()
            .filter(|t| t.in_migration)
            .map(|t| t.id)
            .collect();
        sets = advance_task_sets(&sets, &completed_prev, &new_ids, &landed)?;
        for id in &landed {
            tasks.get_mut(id).expect("landed tasks are active").in_migration = false;
        }
        completed_prev.clear();

        // Deferred tasks hold no host; they re-enter the arriving pool and
        // are decided like fresh arrivals.
        let unplaced: Vec<TaskId> = sets
            .active
            .iter()
            .filter(|id| {
                tasks.get(id).expect("active tasks are in the table").assigned_host.is_none()
                    && !sets.arriving.contains(id)
            })
            .copied()
            .collect();
        for id in unplaced {
            sets.migratable.remove(&id);
            sets.arriving.insert(id);
        }

        // Every active task gets this interval's demands.
        let ids: Vec<TaskId> = sets.active.iter().copied().collect();
        for id in ids {
            let snapshot = tasks
                .get(&id)
                .expect("active tasks are in the table")
                .clone();
            let demands = generator.sample_demand(&snapshot, i as u64)?;
            tasks
                .get_mut(&id)
                .expect("active tasks are in the table")
                .demands = demands;
        }

        let raw = build_raw_state(&cluster.hosts, &tasks, &sets, cluster.max_tasks)?;
        if collect_raw {
            raw_states.push(raw.clone());
        }
        let state_table = match table {
            Some(t) => t,
            None => {
                if bootstrap.is_none() {
                    bootstrap = Some(fit_minmax(std::slice::from_ref(&raw))?);
                }
                bootstrap.as_ref().expect("bootstrap table was just fitted")
            }
        };
        let state = build_state(&raw, state_table, cluster.max_tasks)?;

        let ctx = DecisionContext {
            interval: i,
            hosts: &cluster.hosts,
            tasks: &tasks,
            sets: &sets,
            state: &state,
        };
        scheduler.observe(feedback.0, feedback.1);

        let decide_start = Instant::now();
        let decision = scheduler.decide(&ctx)?;
        let decide_seconds = decide_start.elapsed().as_secs_f64();

        let csm_ctx = CsmContext {
            hosts: &cluster.hosts,
            tasks: &tasks,
            sets: &sets,
        };
        let (constrained, interval_penalty) = match decision {
            Decision::Ranked(ranked) => {
                let constrained = constrain_action(&ranked, &csm_ctx)?;
                let p = penalty(&ranked, &constrained, &csm_ctx)?;
                (constrained, p)
            }
            Decision::Direct(direct) => {
                validate_constrained(&direct, &csm_ctx)?;
                (direct, 0.0)
            }
        };
        scheduler.record_commit(&ctx, &constrained)?;

        let report = apply_action(
            &mut tasks,
            &cluster.hosts,
            &constrained,
            cluster.interval_seconds,
        )?;
        let outcome = run_interval(
            &mut tasks,
            &cluster.hosts,
            &sets,
            cluster.interval_seconds,
            &report,
        )?;
        // The maxima must see this interval before its metrics are formed.
        normalizers.update(&outcome);
        let metrics = interval_metrics(
            &outcome,
            &cluster.hosts,
            cluster.interval_seconds,
            &normalizers,
        )?;
        let loss = composite_loss(&metrics, &cluster.hyperparams);
        let loss_pg = loss + interval_penalty;

        records.push(IntervalRecord {
            interval: i,
            active: sets.active.len(),
            arriving: sets.arriving.len(),
            leaving: outcome.completed.len(),
            deferred: report.deferred,
            migrations: outcome.migrations,
            migration_time: outcome.total_migration_time,
            energy_joules: outcome.per_host.iter().map(|h| h.energy_joules).sum(),
            cost_usd: outcome.per_host.iter().map(|h| h.cost).sum(),
            mean_utilization: outcome
                .per_host
                .iter()
                .map(|h| h.mean_utilization)
                .sum::<f64>()
                / outcome.per_host.len() as f64,
            response_sum: outcome
                .completed
                .iter()
                .fold(0.0, |acc, c| acc + c.response_time),
            completion_sum: outcome
                .completed
                .iter()
                .fold(0.0, |acc, c| acc + c.completion_time),
            within_expected: outcome.completed.iter().filter(|c| c.within_expected).count(),
            sla_sum: outcome.completed.iter().fold(0.0, |acc, c| {
                acc + (c.throttle_fraction * c.migration_fraction).clamp(0.0, 1.0)
            }),
            metrics,
            loss,
            penalty: interval_penalty,
            loss_pg,
        });

        completed_prev = outcome.completed.iter().map(|c| c.id).collect();
        feedback = (loss, interval_penalty);
        timings.push(TimingRow {
            interval: i,
            decide_seconds,
            wall_seconds: wall_start.elapsed().as_secs_f64(),
        });
    }

    Ok(ReplicaRun {
        records,
        timings,
        raw_states,
    })
}

fn build_args(config: &ExperimentConfig, cluster: &ClusterConfig) -> BuildArgs {
    BuildArgs {
        n_hosts: cluster.hosts.len(),
        max_tasks: cluster.max_tasks,
        episode_size: cluster.episode_size,
        total_intervals: config.intervals,
        seed: config.seed,
    }
}

fn generator_for(config: &ExperimentConfig, cluster: &ClusterConfig, seed: u64) -> Result<WorkloadGenerator> {
    WorkloadGenerator::new(
        seed,
        config.arrival,
        cluster.interval_seconds,
        config.demand_mode()?,
    )
}

/// Fits the feature normalization table from a sample run driven by the
/// regression heuristic. The sample shares the experiment's cluster, workload
/// seed and arrival process, so the resulting ranges cover what the real run
/// will see; with a fixed seed the table is reproducible.
pub fn fit_norms(config: &ExperimentConfig, sample_intervals: usize) -> Result<MinMaxTable> {
    if sample_intervals == 0 {
        return Err(Error::config("range fitting needs at least one interval"));
    }
    let cluster = config.cluster_config()?;
    let args = build_args(config, &cluster);
    let mut scheduler = build_scheduler("lr-mmt", &args)?;
    let mut generator = generator_for(config, &cluster, config.seed)?;
    let run = run_replica(
        &cluster,
        scheduler.as_mut(),
        &mut generator,
        None,
        sample_intervals,
        true,
        None,
    )?;
    fit_minmax(&run.raw_states)
}

/// Intervals the on-the-fly range fitting samples: the full horizon, capped
/// at one simulated day.
pub fn default_fit_intervals(intervals: usize) -> usize {
    intervals.min(288).max(1)
}

fn load_or_fit_table(config: &ExperimentConfig) -> Result<MinMaxTable> {
    match &config.minmax {
        Some(path) => MinMaxTable::load(path),
        None => fit_norms(config, default_fit_intervals(config.intervals)),
    }
}

/// Runs the configured experiment and writes all artifacts into the output
/// directory: the per-interval CSV, the wall-clock timing CSV, the training
/// log, the aggregate report, the effective config, the normalization table
/// and the scheduler checkpoint. Files land atomically (written aside, then
/// renamed) once the run has finished.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let cluster = config.cluster_config()?;
    let table = load_or_fit_table(config)?;
    let args = build_args(config, &cluster);

    if config.agents <= 1 {
        let mut scheduler = build_scheduler(&config.scheduler, &args)?;
        let mut generator = generator_for(config, &cluster, config.seed)?;
        let run = run_replica(
            &cluster,
            scheduler.as_mut(),
            &mut generator,
            Some(&table),
            config.intervals,
            false,
            None,
        )?;
        let training = scheduler.drain_training_events();
        finish_run(config, &table, scheduler.as_ref(), run, training)
    } else {
        let store = Arc::new(GlobalParamStore::new(&args));
        let mut runs = run_agents(config, &cluster, &table, &store, config.intervals, false)?;
        let training = store.drain_events();
        // The first agent's trajectory is the reported one; the training log
        // pools every agent's updates in commit order.
        let run = runs.swap_remove(0);
        let checkpointer = A3cScheduler::new(store, config.seed);
        finish_run(config, &table, &checkpointer, run, training)
    }
}

/// Spawns one actor-critic agent per replica, all sharing `store`, and joins
/// them. Agent `j` draws its workload from `seed + j`, so the first agent
/// sees the same task stream as a single-agent run. With `stop_on_watermark`
/// every agent ends its run early once the store records a qualifying update.
pub(crate) fn run_agents(
    config: &ExperimentConfig,
    cluster: &ClusterConfig,
    table: &MinMaxTable,
    store: &Arc<GlobalParamStore>,
    intervals: usize,
    stop_on_watermark: bool,
) -> Result<Vec<ReplicaRun>> {
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(config.agents);
        for j in 0..config.agents {
            let store = Arc::clone(store);
            let handle = scope.spawn(move || -> Result<ReplicaRun> {
                let mut scheduler = A3cScheduler::new(Arc::clone(&store), config.seed + j as u64);
                let mut generator = generator_for(config, cluster, config.seed + j as u64)?;
                let stop_fn = || store.watermark().is_some();
                let stop: Option<&dyn Fn() -> bool> = if stop_on_watermark {
                    Some(&stop_fn)
                } else {
                    None
                };
                run_replica(
                    cluster,
                    &mut scheduler,
                    &mut generator,
                    Some(table),
                    intervals,
                    false,
                    stop,
                )
            });
            handles.push(handle);
        }
        let mut runs = Vec::with_capacity(handles.len());
        for handle in handles {
            let run = handle
                .join()
                .map_err(|_| Error::invariant("an agent thread panicked"))??;
            runs.push(run);
        }
        Ok(runs)
    })
}

fn finish_run(
    config: &ExperimentConfig,
    table: &MinMaxTable,
    scheduler: &dyn SchedulerPolicy,
    run: ReplicaRun,
    training: Vec<TrainingEvent>,
) -> Result<RunSummary> {
    let aggregate = evaluation_aggregates(&run.records)?;
    write_artifacts(config, table, scheduler, &run, &training, &aggregate)?;
    Ok(RunSummary {
        records: run.records,
        timings: run.timings,
        training,
        aggregate,
    })
}

/// Writes `text` to `path` atomically: the bytes land in a sibling temp file
/// which is renamed over the target.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_artifacts(
    config: &ExperimentConfig,
    table: &MinMaxTable,
    scheduler: &dyn SchedulerPolicy,
    run: &ReplicaRun,
    training: &[TrainingEvent],
    aggregate: &AggregateReport,
) -> Result<()> {
    let out = &config.output;
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("intervals.csv"), &report::intervals_csv(&run.records))?;
    write_atomic(&out.join("timing.csv"), &report::timing_csv(&run.timings))?;
    write_atomic(&out.join("training.csv"), &report::training_csv(training))?;
    write_atomic(&out.join("aggregate.txt"), &report::aggregate_text(aggregate))?;
    write_atomic(&out.join("config.txt"), &config.to_flat_text())?;
    write_atomic(&out.join("minmax.txt"), &table.to_text())?;

    // Checkpoints are produced by the policy itself; stage them in a scratch
    // directory so they too appear in the output atomically.
    let staging = out.join(".checkpoint-staging");
    std::fs::create_dir_all(&staging)?;
    scheduler.save_checkpoint(&staging)?;
    for entry in std::fs::read_dir(&staging)? {
        let path = entry?.path();
        if let Some(name) = path.file_name() {
            std::fs::rename(&path, out.join(name))?;
        }
    }
    std::fs::remove_dir_all(&staging)?;
    Ok(())
}
