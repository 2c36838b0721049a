//! Dense-only network used by the non-recurrent learners: two tanh layers
//! and a linear head shaped like the actor output (one row of host scores
//! per task slot).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::StateMatrices;
use crate::nn::layers::DenseParams;
use crate::nn::linalg::{axpy, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub n_hosts: usize,
    pub max_tasks: usize,
    pub input_width: usize,
    pub hidden_width: usize,
    pub l1: DenseParams,
    pub l2: DenseParams,
    pub head: DenseParams,
}

#[derive(Debug, Clone)]
pub struct MlpRecord {
    pub input: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
}

impl MlpParams {
    pub fn init(n_hosts: usize, max_tasks: usize, hidden_width: usize, seed: u64) -> Self {
        let input_width = StateMatrices::input_width(n_hosts, max_tasks);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MlpParams {
            n_hosts,
            max_tasks,
            input_width,
            hidden_width,
            l1: DenseParams::init(hidden_width, input_width, &mut rng),
            l2: DenseParams::init(hidden_width, hidden_width, &mut rng),
            head: DenseParams::init(max_tasks * n_hosts, hidden_width, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            n_hosts: self.n_hosts,
            max_tasks: self.max_tasks,
            input_width: self.input_width,
            hidden_width: self.hidden_width,
            l1: DenseParams::zeros(self.hidden_width, self.input_width),
            l2: DenseParams::zeros(self.hidden_width, self.hidden_width),
            head: DenseParams::zeros(self.max_tasks * self.n_hosts, self.hidden_width),
        }
    }

    fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.l1.w.data,
            &self.l1.b,
            &self.l2.w.data,
            &self.l2.b,
            &self.head.w.data,
            &self.head.b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.l1.w.data,
            &mut self.l1.b,
            &mut self.l2.w.data,
            &mut self.l2.b,
            &mut self.head.w.data,
            &mut self.head.b,
        ]
    }

    pub fn axpy(&mut self, scale: f64, other: &Self) {
        let theirs = other.tensors();
        for (mine, other) in self.tensors_mut().into_iter().zip(theirs) {
            axpy(mine, scale, other);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .into_iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Forward pass: returns the head output as a max_tasks x n_hosts matrix
/// (policy logits or action values, depending on the learner).
pub fn forward_mlp(params: &MlpParams, state: &StateMatrices) -> Result<(Matrix, MlpRecord)> {
    let input = state.flattened();
    if input.len() != params.input_width {
        return Err(Error::invariant(format!(
            "state width {} does not match network input width {}",
            input.len(),
            params.input_width
        )));
    }
    let a1 = params.l1.forward_tanh(&input);
    let a2 = params.l2.forward_tanh(&a1);
    let out = params.head.linear(&a2);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical { layer: "mlp-head" });
    }
    let record = MlpRecord { input, a1, a2 };
    Ok((
        Matrix {
            rows: params.max_tasks,
            cols: params.n_hosts,
            data: out,
        },
        record,
    ))
}

/// Backward pass from a gradient at the head output; accumulates into
/// `grads`.
pub fn backward_mlp(
    params: &MlpParams,
    grads: &mut MlpParams,
    record: &MlpRecord,
    d_out: &Matrix,
) -> Result<()> {
    if d_out.rows != params.max_tasks || d_out.cols != params.n_hosts {
        return Err(Error::invariant("output gradient has the wrong shape"));
    }
    let da2 = params
        .head
        .backward_linear(&mut grads.head, &record.a2, &d_out.data);
    let da1 = params
        .l2
        .backward_tanh(&mut grads.l2, &record.a1, &record.a2, &da2);
    params
        .l1
        .backward_tanh(&mut grads.l1, &record.input, &record.a1, &da1);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::linalg::dot;
    use rand::Rng;

    fn tiny_state(rng: &mut impl Rng) -> StateMatrices {
        StateMatrices {
            n_hosts: 2,
            max_tasks: 2,
            host: (0..2 * crate::featurize::HOST_FEATURES)
                .map(|_| rng.gen_range(0.0..1.0))
                .collect(),
            continuing: (0..2 * (crate::featurize::DEMAND_FEATURES + 2))
                .map(|_| rng.gen_range(0.0..1.0))
                .collect(),
            arriving: (0..2 * crate::featurize::DEMAND_FEATURES)
                .map(|_| rng.gen_range(0.0..1.0))
                .collect(),
            rows: vec![None; 2],
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let params = MlpParams::init(2, 2, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let state = tiny_state(&mut rng);
        let d = Matrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));

        let (_, record) = forward_mlp(&params, &state).unwrap();
        let mut grads = params.zeros_like();
        backward_mlp(&params, &mut grads, &record, &d).unwrap();

        let objective = |p: &MlpParams| -> f64 {
            let (out, _) = forward_mlp(p, &state).unwrap();
            dot(&out.data, &d.data)
        };
        let eps = 1e-5;
        let flat_grads: Vec<f64> = grads
            .tensors()
            .into_iter()
            .flat_map(|t| t.to_vec())
            .collect();
        let mut idx = 0;
        for t in 0..6 {
            for k in 0..params.tensors()[t].len() {
                let mut plus = params.clone();
                plus.tensors_mut()[t][k] += eps;
                let mut minus = params.clone();
                minus.tensors_mut()[t][k] -= eps;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                let analytic = flat_grads[idx];
                let denom = fd.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    ((fd - analytic) / denom).abs() < 1e-4,
                    "tensor {t} entry {k}"
                );
                idx += 1;
            }
        }
    }

    #[test]
    fn mlp_round_trips_through_json() {
        let params = MlpParams::init(3, 4, 8, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlp.json");
        params.save(&path).unwrap();
        assert_eq!(MlpParams::load(&path).unwrap(), params);
    }
}
