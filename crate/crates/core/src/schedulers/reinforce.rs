//! Monte-Carlo policy-gradient baseline: a dense-only actor, synchronous
//! single-agent updates at episode boundaries, no critic, no recurrence.

use crate::csm::ConstrainedAction;
use crate::error::Result;
use crate::model::HostId;
use crate::nn::linalg::Matrix;
use crate::nn::mlp::{backward_mlp, forward_mlp, MlpParams, MlpRecord};
use crate::nn::{policy_to_ranking, softmax_rows};
use crate::schedulers::{
    committed_rows, BuildArgs, Decision, DecisionContext, SchedulerPolicy, TrainingEvent,
};

const LEARNING_RATE: f64 = 1e-2;
const GRAD_CLIP: f64 = 10.0;
const HIDDEN_WIDTH: usize = 64;

struct Step {
    record: MlpRecord,
    policy: Matrix,
    committed: Vec<(usize, HostId)>,
    loss_pg: f64,
    penalty: f64,
}

pub struct ReinforceScheduler {
    params: MlpParams,
    episode_size: usize,
    pending: Option<(MlpRecord, Matrix)>,
    episode: Vec<Step>,
    last_loss_pg: f64,
    last_penalty: f64,
    update_count: usize,
    events: Vec<TrainingEvent>,
}

impl ReinforceScheduler {
    pub fn new(args: &BuildArgs) -> Self {
        ReinforceScheduler {
            params: MlpParams::init(args.n_hosts, args.max_tasks, HIDDEN_WIDTH, args.seed),
            episode_size: args.episode_size,
            pending: None,
            episode: Vec::new(),
            last_loss_pg: 0.0,
            last_penalty: 0.0,
            update_count: 0,
            events: Vec::new(),
        }
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    /// Applies one episode update: returns are suffix sums of the losses,
    /// the baseline is their mean, and the step objective
    /// log-probability x (return - baseline) is descended.
    fn update(&mut self) -> Result<()> {
        let steps = std::mem::take(&mut self.episode);
        let mut returns = vec![0.0; steps.len()];
        let mut acc = 0.0;
        for (i, step) in steps.iter().enumerate().rev() {
            acc += step.loss_pg;
            returns[i] = acc;
        }
        let baseline = returns.iter().sum::<f64>() / returns.len() as f64;

        let mut grads = self.params.zeros_like();
        for (step, g) in steps.iter().zip(&returns) {
            let coeff = g - baseline;
            if step.committed.is_empty() || coeff == 0.0 {
                continue;
            }
            let mut d_logits = Matrix::zeros(self.params.max_tasks, self.params.n_hosts);
            for &(row, host) in &step.committed {
                for k in 0..self.params.n_hosts {
                    let indicator = if k == host.0 { 1.0 } else { 0.0 };
                    d_logits.set(row, k, coeff * (indicator - step.policy.get(row, k)));
                }
            }
            backward_mlp(&self.params, &mut grads, &step.record, &d_logits)?;
        }
        let norm = grads.l2_norm();
        let scale = if norm > GRAD_CLIP { GRAD_CLIP / norm } else { 1.0 };
        self.params.axpy(-LEARNING_RATE * scale, &grads);

        self.update_count += 1;
        let n = steps.len() as f64;
        self.events.push(TrainingEvent {
            update: self.update_count,
            lr: LEARNING_RATE,
            mean_episode_loss: steps.iter().map(|s| s.loss_pg).sum::<f64>() / n,
            mean_penalty: steps.iter().map(|s| s.penalty).sum::<f64>() / n,
        });
        Ok(())
    }
}

impl SchedulerPolicy for ReinforceScheduler {
    fn name(&self) -> &'static str {
        "reinforce"
    }

    fn observe(&mut self, loss: f64, penalty: f64) {
        self.last_loss_pg = loss + penalty;
        self.last_penalty = penalty;
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<Decision> {
        let (logits, record) = forward_mlp(&self.params, ctx.state)?;
        let policy = softmax_rows(&logits);
        let ranked = policy_to_ranking(&policy, &ctx.state.rows);
        self.pending = Some((record, policy));
        Ok(Decision::Ranked(ranked))
    }

    fn record_commit(&mut self, ctx: &DecisionContext, action: &ConstrainedAction) -> Result<()> {
        let (record, policy) = self
            .pending
            .take()
            .ok_or_else(|| crate::Error::invariant("commit without a pending decision"))?;
        self.episode.push(Step {
            record,
            policy,
            committed: committed_rows(ctx.state, action),
            loss_pg: self.last_loss_pg,
            penalty: self.last_penalty,
        });
        if self.episode.len() == self.episode_size {
            self.update()?;
        }
        Ok(())
    }

    fn drain_training_events(&mut self) -> Vec<TrainingEvent> {
        std::mem::take(&mut self.events)
    }

    fn save_checkpoint(&self, dir: &std::path::Path) -> Result<()> {
        self.params.save(&dir.join("reinforce-params.json"))
    }
}
