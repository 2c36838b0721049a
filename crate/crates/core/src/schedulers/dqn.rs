//! Value-based baseline: a dense network maps the interval state to one row
//! of action values per actor row, explored with per-row epsilon-greedy and
//! trained from a replay buffer with double estimation (online argmax,
//! target evaluation).

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csm::{ConstrainedAction, RankedAction, RankedRow};
use crate::error::Result;
use crate::featurize::StateMatrices;
use crate::model::HostId;
use crate::nn::linalg::Matrix;
use crate::nn::mlp::{backward_mlp, forward_mlp, MlpParams};
use crate::schedulers::{
    committed_rows, BuildArgs, Decision, DecisionContext, SchedulerPolicy, TrainingEvent,
};

const LEARNING_RATE: f64 = 1e-3;
const DISCOUNT: f64 = 0.9;
const REPLAY_CAPACITY: usize = 2048;
const BATCH_SIZE: usize = 32;
const TARGET_SYNC_EVERY: usize = 50;
const GRAD_CLIP: f64 = 10.0;
const HIDDEN_WIDTH: usize = 64;
const EPSILON_START: f64 = 1.0;
const EPSILON_END: f64 = 0.05;

struct Transition {
    state: StateMatrices,
    actions: Vec<(usize, HostId)>,
    reward: f64,
    next_state: StateMatrices,
}

struct Pending {
    state: StateMatrices,
    actions: Vec<(usize, HostId)>,
}

pub struct DqnScheduler {
    online: MlpParams,
    target: MlpParams,
    rng: ChaCha8Rng,
    replay: VecDeque<Transition>,
    pending: Option<Pending>,
    last_loss_pg: f64,
    last_penalty: f64,
    eps_start: f64,
    eps_end: f64,
    /// Interval count over which epsilon decays linearly.
    explore_horizon: usize,
    train_steps: usize,
    episode_size: usize,
    commits_seen: usize,
    loss_window: Vec<f64>,
    penalty_window: Vec<f64>,
    update_count: usize,
    events: Vec<TrainingEvent>,
}

impl DqnScheduler {
    pub fn new(args: &BuildArgs) -> Self {
        Self::with_exploration(args, EPSILON_START, EPSILON_END)
    }

    /// Same scheduler with a pinned exploration schedule; `start == end`
    /// holds epsilon constant.
    pub fn with_exploration(args: &BuildArgs, eps_start: f64, eps_end: f64) -> Self {
        let online = MlpParams::init(args.n_hosts, args.max_tasks, HIDDEN_WIDTH, args.seed);
        let target = online.clone();
        DqnScheduler {
            online,
            target,
            rng: ChaCha8Rng::seed_from_u64(args.seed ^ 0x51c4_5a17),
            replay: VecDeque::new(),
            pending: None,
            last_loss_pg: 0.0,
            last_penalty: 0.0,
            eps_start,
            eps_end,
            explore_horizon: (args.total_intervals / 2).max(1),
            train_steps: 0,
            episode_size: args.episode_size,
            commits_seen: 0,
            loss_window: Vec::new(),
            penalty_window: Vec::new(),
            update_count: 0,
            events: Vec::new(),
        }
    }

    pub fn action_values(&self, state: &StateMatrices) -> Result<Matrix> {
        Ok(forward_mlp(&self.online, state)?.0)
    }

    fn epsilon(&self, interval: usize) -> f64 {
        let progress = (interval.saturating_sub(1) as f64 / self.explore_horizon as f64).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * progress
    }

    /// Hosts in descending value order, ties toward the lower id.
    fn greedy_order(q_row: &[f64]) -> Vec<HostId> {
        let mut order: Vec<usize> = (0..q_row.len()).collect();
        order.sort_by(|&a, &b| {
            q_row[b]
                .partial_cmp(&q_row[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.into_iter().map(HostId).collect()
    }

    /// One minibatch of double-estimation updates over committed rows:
    /// y_row = reward + discount * Q_target(next, row, argmax_k Q_online(next, row, k)).
    fn train(&mut self) -> Result<()> {
        if self.replay.len() < BATCH_SIZE {
            return Ok(());
        }
        let mut grads = self.online.zeros_like();
        for _ in 0..BATCH_SIZE {
            let t = &self.replay[self.rng.gen_range(0..self.replay.len())];
            let (q_next_online, _) = forward_mlp(&self.online, &t.next_state)?;
            let (q_next_target, _) = forward_mlp(&self.target, &t.next_state)?;
            let (q, record) = forward_mlp(&self.online, &t.state)?;
            let mut d_out = Matrix::zeros(q.rows, q.cols);
            for &(row, host) in &t.actions {
                let next_row = q_next_online.row(row);
                let mut best = 0;
                for k in 1..next_row.len() {
                    if next_row[k] > next_row[best] {
                        best = k;
                    }
                }
                let y = t.reward + DISCOUNT * q_next_target.get(row, best);
                let err = q.get(row, host.0) - y;
                d_out.set(row, host.0, 2.0 * err / BATCH_SIZE as f64);
            }
            backward_mlp(&self.online, &mut grads, &record, &d_out)?;
        }
        let norm = grads.l2_norm();
        let scale = if norm > GRAD_CLIP { GRAD_CLIP / norm } else { 1.0 };
        self.online.axpy(-LEARNING_RATE * scale, &grads);
        self.train_steps += 1;
        if self.train_steps % TARGET_SYNC_EVERY == 0 {
            self.target = self.online.clone();
        }
        Ok(())
    }
}

impl SchedulerPolicy for DqnScheduler {
    fn name(&self) -> &'static str {
        "dqn"
    }

    fn observe(&mut self, loss: f64, penalty: f64) {
        self.last_loss_pg = loss + penalty;
        self.last_penalty = penalty;
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<Decision> {
        // The loss observed just before this call prices the previous
        // interval's commitment, which completes that transition.
        if let Some(p) = self.pending.take() {
            if !p.actions.is_empty() {
                if self.replay.len() == REPLAY_CAPACITY {
                    self.replay.pop_front();
                }
                self.replay.push_back(Transition {
                    state: p.state,
                    actions: p.actions,
                    reward: -self.last_loss_pg,
                    next_state: ctx.state.clone(),
                });
            }
            self.train()?;
        }

        let (q, _) = forward_mlp(&self.online, ctx.state)?;
        let eps = self.epsilon(ctx.interval);
        let mut rows = Vec::new();
        for (r, entry) in ctx.state.rows.iter().enumerate() {
            let Some(entry) = entry else { continue };
            let hosts = if entry.decision && self.rng.gen_bool(eps) {
                let mut order: Vec<HostId> = (0..q.cols).map(HostId).collect();
                order.shuffle(&mut self.rng);
                order
            } else {
                Self::greedy_order(q.row(r))
            };
            rows.push(RankedRow {
                task: entry.task,
                hosts,
                decision: entry.decision,
            });
        }
        self.pending = Some(Pending {
            state: ctx.state.clone(),
            actions: Vec::new(),
        });
        Ok(Decision::Ranked(RankedAction { rows }))
    }

    fn record_commit(&mut self, ctx: &DecisionContext, action: &ConstrainedAction) -> Result<()> {
        if let Some(p) = self.pending.as_mut() {
            p.actions = committed_rows(ctx.state, action);
        }
        self.commits_seen += 1;
        self.loss_window.push(self.last_loss_pg);
        self.penalty_window.push(self.last_penalty);
        if self.commits_seen % self.episode_size == 0 {
            self.update_count += 1;
            let n = self.loss_window.len() as f64;
            self.events.push(TrainingEvent {
                update: self.update_count,
                lr: LEARNING_RATE,
                mean_episode_loss: self.loss_window.drain(..).sum::<f64>() / n,
                mean_penalty: self.penalty_window.drain(..).sum::<f64>() / n,
            });
        }
        Ok(())
    }

    fn drain_training_events(&mut self) -> Vec<TrainingEvent> {
        std::mem::take(&mut self.events)
    }

    fn save_checkpoint(&self, dir: &std::path::Path) -> Result<()> {
        self.online.save(&dir.join("dqn-params.json"))
    }
}
