//! Asynchronous advantage actor-critic on the recurrent residual network.
//!
//! Each agent runs its own simulated datacenter on a local parameter
//! snapshot, accumulates one episode of gradients by backpropagation through
//! time, and pushes them to a shared store. The store applies updates under
//! a lock, adapts the learning rate on reward plateaus, and hands back a
//! fresh snapshot.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::csm::ConstrainedAction;
use crate::error::Result;
use crate::model::HostId;
use crate::nn::policy_to_ranking;
use crate::nn::r2n2::{backward, forward, ForwardRecord, Hidden, R2n2Params, StepSeed};
use crate::schedulers::{
    committed_rows, BuildArgs, Decision, DecisionContext, SchedulerPolicy, TrainingEvent,
};

const INITIAL_LR: f64 = 1e-2;
const LR_SHRINK: f64 = 10.0;
const PLATEAU_WINDOW: usize = 10;
const PLATEAU_THRESHOLD: f64 = 0.1;
const GRAD_CLIP: f64 = 10.0;
const DENSE1_WIDTH: usize = 128;
const HIDDEN_WIDTH: usize = 64;

/// One committed step of an episode, as consumed by `a3c_accumulate`.
pub struct EpisodeStep {
    pub record: ForwardRecord,
    pub committed: Vec<(usize, HostId)>,
    /// Penalized loss delivered at the start of this step's interval.
    pub loss_pg: f64,
}

/// Episode gradients. For step i the advantage is the penalized loss plus
/// the critic's prediction at step i+1 (zero past the last step), treated as
/// a constant. Each step contributes
///   advantage * grad log pi(committed)  +  grad (advantage - value_i)^2
/// and the step gradients sum over the episode via backpropagation through
/// time.
pub fn a3c_accumulate(params: &R2n2Params, steps: &[EpisodeStep]) -> Result<R2n2Params> {
    let mut seeds = Vec::with_capacity(steps.len());
    for (i, step) in steps.iter().enumerate() {
        let next_value = steps.get(i + 1).map_or(0.0, |s| s.record.value);
        let advantage = step.loss_pg + next_value;
        let mut seed = StepSeed::zeros(params);
        for &(row, host) in &step.committed {
            for k in 0..params.n_hosts {
                let indicator = if k == host.0 { 1.0 } else { 0.0 };
                seed.d_logits.set(
                    row,
                    k,
                    advantage * (indicator - step.record.policy.get(row, k)),
                );
            }
        }
        seed.d_value = -2.0 * (advantage - step.record.value);
        seeds.push(seed);
    }
    let records: Vec<ForwardRecord> = steps.iter().map(|s| s.record.clone()).collect();
    backward(params, &records, &seeds)
}

/// First time the shared parameters reached a target mean episode loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Watermark {
    pub elapsed: Duration,
    pub update: usize,
}

struct StoreInner {
    params: R2n2Params,
    lr: f64,
    update_count: usize,
    rewards: VecDeque<f64>,
    events: Vec<TrainingEvent>,
    watermark_target: Option<f64>,
    watermark: Option<Watermark>,
}

/// Shared parameters plus the update rule. Agents interact through
/// `snapshot` and `apply`; everything else is instrumentation.
pub struct GlobalParamStore {
    inner: Mutex<StoreInner>,
    episode_size: usize,
    start: Instant,
}

impl GlobalParamStore {
    pub fn new(args: &BuildArgs) -> Self {
        Self::with_network(
            R2n2Params::init(
                args.n_hosts,
                args.max_tasks,
                DENSE1_WIDTH,
                HIDDEN_WIDTH,
                args.seed,
            ),
            args.episode_size,
        )
    }

    /// Store around an explicit network, for tests and checkpoint restarts.
    pub fn with_network(params: R2n2Params, episode_size: usize) -> Self {
        GlobalParamStore {
            inner: Mutex::new(StoreInner {
                params,
                lr: INITIAL_LR,
                update_count: 0,
                rewards: VecDeque::new(),
                events: Vec::new(),
                watermark_target: None,
                watermark: None,
            }),
            episode_size,
            start: Instant::now(),
        }
    }

    pub fn episode_size(&self) -> usize {
        self.episode_size
    }

    pub fn snapshot(&self) -> R2n2Params {
        self.inner.lock().unwrap().params.clone()
    }

    pub fn lr(&self) -> f64 {
        self.inner.lock().unwrap().lr
    }

    pub fn update_count(&self) -> usize {
        self.inner.lock().unwrap().update_count
    }

    /// Marks the mean episode loss at or below which `watermark` is set.
    pub fn set_watermark_target(&self, target: f64) {
        self.inner.lock().unwrap().watermark_target = Some(target);
    }

    pub fn watermark(&self) -> Option<Watermark> {
        self.inner.lock().unwrap().watermark
    }

    pub fn drain_events(&self) -> Vec<TrainingEvent> {
        std::mem::take(&mut self.inner.lock().unwrap().events)
    }

    /// Applies one episode's gradients under the lock and returns a fresh
    /// snapshot. Gradients are clipped to a global norm of `GRAD_CLIP`, the
    /// step is `params -= lr * grads`, and the reward (negated mean episode
    /// loss) feeds the plateau detector: when the net change in reward over
    /// the last `PLATEAU_WINDOW` updates stays under `PLATEAU_THRESHOLD`,
    /// the learning rate divides by `LR_SHRINK` and the window restarts.
    pub fn apply(
        &self,
        grads: &R2n2Params,
        mean_episode_loss: f64,
        mean_penalty: f64,
    ) -> R2n2Params {
        let mut inner = self.inner.lock().unwrap();
        let norm = grads.l2_norm();
        let scale = if norm > GRAD_CLIP { GRAD_CLIP / norm } else { 1.0 };
        let lr_used = inner.lr;
        inner.params.axpy(-lr_used * scale, grads);
        inner.update_count += 1;

        let update = inner.update_count;
        inner.events.push(TrainingEvent {
            update,
            lr: lr_used,
            mean_episode_loss,
            mean_penalty,
        });
        if let Some(target) = inner.watermark_target {
            if inner.watermark.is_none() && mean_episode_loss <= target {
                inner.watermark = Some(Watermark {
                    elapsed: self.start.elapsed(),
                    update,
                });
            }
        }

        inner.rewards.push_back(-mean_episode_loss);
        if inner.rewards.len() > PLATEAU_WINDOW {
            inner.rewards.pop_front();
        }
        if inner.rewards.len() == PLATEAU_WINDOW {
            let net_change = inner.rewards.back().unwrap() - inner.rewards.front().unwrap();
            if net_change.abs() < PLATEAU_THRESHOLD {
                inner.lr /= LR_SHRINK;
                inner.rewards.clear();
            }
        }
        inner.params.clone()
    }
}

pub struct A3cScheduler {
    store: Arc<GlobalParamStore>,
    local: R2n2Params,
    hidden: Hidden,
    episode_size: usize,
    pending: Option<ForwardRecord>,
    episode: Vec<EpisodeStep>,
    penalties: Vec<f64>,
    last_loss_pg: f64,
    last_penalty: f64,
}

impl A3cScheduler {
    /// `_seed` is accepted for registry uniformity; the actor itself is
    /// deterministic given its snapshot, so nothing consumes it yet.
    pub fn new(store: Arc<GlobalParamStore>, _seed: u64) -> Self {
        let local = store.snapshot();
        let hidden = Hidden::zeros(&local);
        let episode_size = store.episode_size();
        A3cScheduler {
            store,
            local,
            hidden,
            episode_size,
            pending: None,
            episode: Vec::new(),
            penalties: Vec::new(),
            last_loss_pg: 0.0,
            last_penalty: 0.0,
        }
    }

    pub fn hidden(&self) -> &Hidden {
        &self.hidden
    }

    fn update(&mut self) -> Result<()> {
        let steps = std::mem::take(&mut self.episode);
        let grads = a3c_accumulate(&self.local, &steps)?;
        let n = steps.len() as f64;
        let mean_loss = steps.iter().map(|s| s.loss_pg).sum::<f64>() / n;
        let mean_penalty = self.penalties.drain(..).sum::<f64>() / n;
        self.local = self.store.apply(&grads, mean_loss, mean_penalty);
        self.hidden = Hidden::zeros(&self.local);
        Ok(())
    }
}

impl SchedulerPolicy for A3cScheduler {
    fn name(&self) -> &'static str {
        "a3c"
    }

    fn observe(&mut self, loss: f64, penalty: f64) {
        self.last_loss_pg = loss + penalty;
        self.last_penalty = penalty;
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<Decision> {
        let (policy, _, next_hidden, record) = forward(&self.local, ctx.state, &self.hidden)?;
        let ranked = policy_to_ranking(&policy, &ctx.state.rows);
        self.hidden = next_hidden;
        self.pending = Some(record);
        Ok(Decision::Ranked(ranked))
    }

    fn record_commit(&mut self, ctx: &DecisionContext, action: &ConstrainedAction) -> Result<()> {
        let record = self
            .pending
            .take()
            .ok_or_else(|| crate::Error::invariant("commit without a pending decision"))?;
        self.episode.push(EpisodeStep {
            record,
            committed: committed_rows(ctx.state, action),
            loss_pg: self.last_loss_pg,
        });
        self.penalties.push(self.last_penalty);
        if self.episode.len() == self.episode_size {
            self.update()?;
        }
        Ok(())
    }

    fn drain_training_events(&mut self) -> Vec<TrainingEvent> {
        self.store.drain_events()
    }

    fn save_checkpoint(&self, dir: &std::path::Path) -> Result<()> {
        self.store.snapshot().save(&dir.join("a3c-params.json"))
    }
}
