//! Neural network substrate: dense and gated recurrent layers with manual
//! reverse-mode gradients, the recurrent actor-critic network, and the
//! dense-only network for the simpler learners.

pub mod layers;
pub mod linalg;
pub mod mlp;
pub mod r2n2;

use crate::csm::{RankedAction, RankedRow};
use crate::featurize::RowEntry;
use crate::model::HostId;
use linalg::Matrix;

/// Numerically stable row softmax (max subtraction per row).
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    softmax_rows_with_logsumexp(logits).0
}

/// Row softmax plus each row's log-sum-exp, so callers can form exact
/// log-probabilities as `logit - logsumexp`.
pub fn softmax_rows_with_logsumexp(logits: &Matrix) -> (Matrix, Vec<f64>) {
    let mut probs = Matrix::zeros(logits.rows, logits.cols);
    let mut lse = Vec::with_capacity(logits.rows);
    for r in 0..logits.rows {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (c, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            probs.set(r, c, e);
            sum += e;
        }
        for c in 0..logits.cols {
            probs.set(r, c, probs.get(r, c) / sum);
        }
        lse.push(max + sum.ln());
    }
    (probs, lse)
}

/// Converts the policy matrix into per-task host rankings by descending
/// probability, ties broken by ascending host id. Only rows bound to a task
/// appear; pinned continuing tasks come through as advisory rows.
pub fn policy_to_ranking(policy: &Matrix, rows: &[Option<RowEntry>]) -> RankedAction {
    let mut out = Vec::new();
    for (r, entry) in rows.iter().enumerate() {
        let Some(entry) = entry else { continue };
        let mut hosts: Vec<usize> = (0..policy.cols).collect();
        hosts.sort_by(|&a, &b| {
            policy
                .get(r, b)
                .partial_cmp(&policy.get(r, a))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        out.push(RankedRow {
            task: entry.task,
            hosts: hosts.into_iter().map(HostId).collect(),
            decision: entry.decision,
        });
    }
    RankedAction { rows: out }
}
