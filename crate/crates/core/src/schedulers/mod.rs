//! Pluggable scheduling policies: a random baseline, two consolidation
//! heuristics, two single-agent learners, and the asynchronous actor-critic
//! scheduler.

pub mod a3c;
pub mod dqn;
pub mod heuristic;
pub mod reinforce;

use std::path::Path;
use std::sync::Arc;

use crate::csm::{ConstrainedAction, Placement, RankedAction, TaskTable};
use crate::error::{Error, Result};
use crate::featurize::StateMatrices;
use crate::model::{Host, HostId, TaskSets};

pub use a3c::{A3cScheduler, GlobalParamStore};
pub use dqn::DqnScheduler;
pub use heuristic::{LrMmtScheduler, MadMcScheduler, RandomScheduler};
pub use reinforce::ReinforceScheduler;

/// Everything a policy may look at when deciding an interval.
pub struct DecisionContext<'a> {
    /// 1-based interval index.
    pub interval: usize,
    pub hosts: &'a [Host],
    pub tasks: &'a TaskTable,
    pub sets: &'a TaskSets,
    /// Standardized fixed-shape input; `state.rows` binds actor rows to tasks.
    pub state: &'a StateMatrices,
}

/// A policy either emits host rankings to be resolved by the constraint
/// module, or a concrete assignment it computed itself.
#[derive(Debug, Clone)]
pub enum Decision {
    Ranked(RankedAction),
    Direct(ConstrainedAction),
}

/// One learner update, as logged to the training CSV.
#[derive(Debug, Clone)]
pub struct TrainingEvent {
    pub update: usize,
    pub lr: f64,
    pub mean_episode_loss: f64,
    pub mean_penalty: f64,
}

pub trait SchedulerPolicy: Send {
    fn name(&self) -> &'static str;

    /// Delivers the loss and penalty realized from the previous interval's
    /// decision, before this interval's `decide`.
    fn observe(&mut self, _loss: f64, _penalty: f64) {}

    fn decide(&mut self, ctx: &DecisionContext) -> Result<Decision>;

    /// Delivers the constraint-resolved commitment of this interval's
    /// decision; learners record log-probabilities and trigger updates here.
    fn record_commit(&mut self, _ctx: &DecisionContext, _action: &ConstrainedAction) -> Result<()> {
        Ok(())
    }

    /// Updates performed since the last drain, for the training log.
    fn drain_training_events(&mut self) -> Vec<TrainingEvent> {
        Vec::new()
    }

    fn save_checkpoint(&self, _dir: &Path) -> Result<()> {
        Ok(())
    }
}

/// Committed (actor row, host) pairs of a resolved action: one entry per
/// decision row that ended on a host. Deferred tasks carry no probability
/// mass, so they are excluded.
pub fn committed_rows(
    state: &StateMatrices,
    action: &ConstrainedAction,
) -> Vec<(usize, HostId)> {
    let mut out = Vec::new();
    for (row, entry) in state.rows.iter().enumerate() {
        let Some(entry) = entry else { continue };
        if !entry.decision {
            continue;
        }
        if let Some(p) = action.placement_of(entry.task) {
            if let Placement::Host(h) = p.placement {
                out.push((row, h));
            }
        }
    }
    out
}

/// Construction parameters shared by every registry-built policy.
#[derive(Debug, Clone)]
pub struct BuildArgs {
    pub n_hosts: usize,
    pub max_tasks: usize,
    pub episode_size: usize,
    pub total_intervals: usize,
    pub seed: u64,
}

pub const SCHEDULER_NAMES: &[&str] = &["random", "lr-mmt", "mad-mc", "reinforce", "dqn", "a3c"];

/// Builds a single-agent policy by name. The asynchronous scheduler comes
/// back with a private one-agent parameter store; multi-agent training
/// constructs the store and agents itself.
pub fn build_scheduler(name: &str, args: &BuildArgs) -> Result<Box<dyn SchedulerPolicy>> {
    match name {
        "random" => Ok(Box::new(RandomScheduler::new(args.seed))),
        "lr-mmt" => Ok(Box::new(LrMmtScheduler::new())),
        "mad-mc" => Ok(Box::new(MadMcScheduler::new())),
        "reinforce" => Ok(Box::new(ReinforceScheduler::new(args))),
        "dqn" => Ok(Box::new(DqnScheduler::new(args))),
        "a3c" => {
            let store = Arc::new(GlobalParamStore::new(args));
            Ok(Box::new(A3cScheduler::new(store, args.seed)))
        }
        other => Err(Error::config(format!(
            "unknown scheduler {other:?}; available: {}",
            SCHEDULER_NAMES.join(", ")
        ))),
    }
}
