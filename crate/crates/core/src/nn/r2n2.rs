//! The recurrent actor-critic network: two tanh dense layers, three gated
//! recurrent layers with identity skip connections, an actor head emitting
//! one host-logit row per task slot, and a scalar critic head.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::StateMatrices;
use crate::nn::layers::{DenseParams, GruCache, GruParams};
use crate::nn::linalg::{add_assign, axpy, dot, Matrix};
use crate::nn::softmax_rows_with_logsumexp;

/// All parameters of the network. Gradients reuse this type (same shapes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2n2Params {
    pub n_hosts: usize,
    pub max_tasks: usize,
    pub input_width: usize,
    pub dense1_width: usize,
    pub hidden_width: usize,
    pub dense1: DenseParams,
    pub dense2: DenseParams,
    pub gru: Vec<GruParams>,
    pub actor: DenseParams,
    pub critic: DenseParams,
}

/// Recurrent state: one hidden vector per recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Hidden {
    pub layers: Vec<Vec<f64>>,
}

impl Hidden {
    pub fn zeros(params: &R2n2Params) -> Self {
        Hidden {
            layers: vec![vec![0.0; params.hidden_width]; params.gru.len()],
        }
    }
}

/// Activations of one forward pass, kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub input: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub gru_caches: Vec<GruCache>,
    pub gru_outputs: Vec<Vec<f64>>,
    pub logits: Matrix,
    /// Per-row log-sum-exp of the logits, so log-probabilities are exact.
    pub logsumexp: Vec<f64>,
    pub policy: Matrix,
    pub value: f64,
}

impl ForwardRecord {
    /// log pi(host k | task row r).
    pub fn log_prob(&self, row: usize, host: usize) -> f64 {
        self.logits.get(row, host) - self.logsumexp[row]
    }
}

/// Gradient seed for one step of an episode, expressed at the network
/// outputs: d(objective)/d(logits) and d(objective)/d(value).
#[derive(Debug, Clone)]
pub struct StepSeed {
    pub d_logits: Matrix,
    pub d_value: f64,
}

impl StepSeed {
    pub fn zeros(params: &R2n2Params) -> Self {
        StepSeed {
            d_logits: Matrix::zeros(params.max_tasks, params.n_hosts),
            d_value: 0.0,
        }
    }
}

fn check_finite(values: &[f64], layer: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { layer })
    }
}

impl R2n2Params {
    /// Fresh network with weights uniform in ±1/sqrt(fan_in) and zero biases.
    pub fn init(
        n_hosts: usize,
        max_tasks: usize,
        dense1_width: usize,
        hidden_width: usize,
        seed: u64,
    ) -> Self {
        let input_width = StateMatrices::input_width(n_hosts, max_tasks);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        R2n2Params {
            n_hosts,
            max_tasks,
            input_width,
            dense1_width,
            hidden_width,
            dense1: DenseParams::init(dense1_width, input_width, &mut rng),
            dense2: DenseParams::init(hidden_width, dense1_width, &mut rng),
            gru: (0..3).map(|_| GruParams::init(hidden_width, &mut rng)).collect(),
            actor: DenseParams::init(max_tasks * n_hosts, hidden_width, &mut rng),
            critic: DenseParams::init(1, hidden_width, &mut rng),
        }
    }

    /// Same shapes, all parameters zero; the gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        R2n2Params {
            n_hosts: self.n_hosts,
            max_tasks: self.max_tasks,
            input_width: self.input_width,
            dense1_width: self.dense1_width,
            hidden_width: self.hidden_width,
            dense1: DenseParams::zeros(self.dense1_width, self.input_width),
            dense2: DenseParams::zeros(self.hidden_width, self.dense1_width),
            gru: (0..self.gru.len()).map(|_| GruParams::zeros(self.hidden_width)).collect(),
            actor: DenseParams::zeros(self.max_tasks * self.n_hosts, self.hidden_width),
            critic: DenseParams::zeros(1, self.hidden_width),
        }
    }

    /// Visits every parameter tensor in a fixed order.
    pub fn for_each_tensor(&self, mut f: impl FnMut(&str, &[f64])) {
        f("dense1.w", &self.dense1.w.data);
        f("dense1.b", &self.dense1.b);
        f("dense2.w", &self.dense2.w.data);
        f("dense2.b", &self.dense2.b);
        for (i, g) in self.gru.iter().enumerate() {
            let names = ["wz", "uz", "bz", "wr", "ur", "br", "wc", "uc", "bc"];
            let tensors: [&[f64]; 9] = [
                &g.wz.data, &g.uz.data, &g.bz, &g.wr.data, &g.ur.data, &g.br, &g.wc.data,
                &g.uc.data, &g.bc,
            ];
            for (name, t) in names.iter().zip(tensors) {
                f(&format!("gru{i}.{name}"), t);
            }
        }
        f("actor.w", &self.actor.w.data);
        f("actor.b", &self.actor.b);
        f("critic.w", &self.critic.w.data);
        f("critic.b", &self.critic.b);
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(8 + 9 * self.gru.len());
        out.push(&mut self.dense1.w.data);
        out.push(&mut self.dense1.b);
        out.push(&mut self.dense2.w.data);
        out.push(&mut self.dense2.b);
        for g in &mut self.gru {
            out.push(&mut g.wz.data);
            out.push(&mut g.uz.data);
            out.push(&mut g.bz);
            out.push(&mut g.wr.data);
            out.push(&mut g.ur.data);
            out.push(&mut g.br);
            out.push(&mut g.wc.data);
            out.push(&mut g.uc.data);
            out.push(&mut g.bc);
        }
        out.push(&mut self.actor.w.data);
        out.push(&mut self.actor.b);
        out.push(&mut self.critic.w.data);
        out.push(&mut self.critic.b);
        out
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(8 + 9 * self.gru.len());
        out.push(&self.dense1.w.data);
        out.push(&self.dense1.b);
        out.push(&self.dense2.w.data);
        out.push(&self.dense2.b);
        for g in &self.gru {
            out.push(&g.wz.data);
            out.push(&g.uz.data);
            out.push(&g.bz);
            out.push(&g.wr.data);
            out.push(&g.ur.data);
            out.push(&g.br);
            out.push(&g.wc.data);
            out.push(&g.uc.data);
            out.push(&g.bc);
        }
        out.push(&self.actor.w.data);
        out.push(&self.actor.b);
        out.push(&self.critic.w.data);
        out.push(&self.critic.b);
        out
    }

    /// self += scale * other, tensor-wise.
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        let theirs = other.tensors();
        for (mine, other) in self.tensors_mut().into_iter().zip(theirs) {
            axpy(mine, scale, other);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for tensor in self.tensors_mut() {
            for v in tensor {
                *v *= s;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .into_iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let expected_input = StateMatrices::input_width(self.n_hosts, self.max_tasks);
        if self.input_width != expected_input {
            return Err(Error::invariant(format!(
                "checkpoint input width {} does not match {} hosts x {} tasks",
                self.input_width, self.n_hosts, self.max_tasks
            )));
        }
        if self.gru.len() != 3 {
            return Err(Error::invariant("expected exactly 3 recurrent layers"));
        }
        let shapes_ok = self.dense1.w.rows == self.dense1_width
            && self.dense1.w.cols == self.input_width
            && self.dense2.w.rows == self.hidden_width
            && self.dense2.w.cols == self.dense1_width
            && self.actor.w.rows == self.max_tasks * self.n_hosts
            && self.actor.w.cols == self.hidden_width
            && self.critic.w.rows == 1
            && self.critic.w.cols == self.hidden_width
            && self
                .gru
                .iter()
                .all(|g| g.wz.rows == self.hidden_width && g.wz.cols == self.hidden_width);
        if !shapes_ok {
            return Err(Error::invariant("checkpoint tensor shapes are inconsistent"));
        }
        let mut finite = true;
        self.for_each_tensor(|_, t| finite &= t.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::invariant("checkpoint contains non-finite parameters"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let params: R2n2Params = serde_json::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }
}

/// One forward pass. `hidden` is the recurrent state entering this interval;
/// the returned state enters the next one. Policy rows are softmaxed over
/// hosts; the value head predicts the cumulative loss from the next interval
/// onward.
pub fn forward(
    params: &R2n2Params,
    state: &StateMatrices,
    hidden: &Hidden,
) -> Result<(Matrix, f64, Hidden, ForwardRecord)> {
    let input = state.flattened();
    if input.len() != params.input_width {
        return Err(Error::invariant(format!(
            "state width {} does not match network input width {}",
            input.len(),
            params.input_width
        )));
    }
    check_finite(&input, "input")?;
    let a1 = params.dense1.forward_tanh(&input);
    check_finite(&a1, "dense1")?;
    let a2 = params.dense2.forward_tanh(&a1);
    check_finite(&a2, "dense2")?;

    let mut gru_caches = Vec::with_capacity(params.gru.len());
    let mut gru_outputs = Vec::with_capacity(params.gru.len());
    let mut next_hidden = Vec::with_capacity(params.gru.len());
    let mut x = a2.clone();
    for (i, gru) in params.gru.iter().enumerate() {
        let (out, cache) = gru.step(&x, &hidden.layers[i]);
        check_finite(&out, "gru")?;
        next_hidden.push(cache.h_next.clone());
        gru_caches.push(cache);
        gru_outputs.push(out.clone());
        x = out;
    }

    let logits_flat = params.actor.linear(&x);
    check_finite(&logits_flat, "actor")?;
    let logits = Matrix {
        rows: params.max_tasks,
        cols: params.n_hosts,
        data: logits_flat,
    };
    let (policy, logsumexp) = softmax_rows_with_logsumexp(&logits);
    let value = dot(params.critic.w.row(0), &x) + params.critic.b[0];
    if !value.is_finite() {
        return Err(Error::Numerical { layer: "critic" });
    }

    let record = ForwardRecord {
        input,
        a1,
        a2,
        gru_caches,
        gru_outputs,
        logits,
        logsumexp,
        policy: policy.clone(),
        value,
    };
    Ok((policy, value, Hidden { layers: next_hidden }, record))
}

/// Backpropagation through time over an episode. `records` are the forward
/// records in step order; `seeds` carry each step's objective gradient at the
/// outputs. Returns the summed parameter gradients.
pub fn backward(
    params: &R2n2Params,
    records: &[ForwardRecord],
    seeds: &[StepSeed],
) -> Result<R2n2Params> {
    if records.len() != seeds.len() {
        return Err(Error::invariant(format!(
            "{} forward records but {} gradient seeds",
            records.len(),
            seeds.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::invariant("cannot backpropagate an empty episode"));
    }
    let mut grads = params.zeros_like();
    let depth = params.gru.len();
    let mut dh_carry = vec![vec![0.0; params.hidden_width]; depth];

    for (record, seed) in records.iter().zip(seeds).rev() {
        if seed.d_logits.rows != params.max_tasks || seed.d_logits.cols != params.n_hosts {
            return Err(Error::invariant("gradient seed has the wrong logit shape"));
        }
        // Heads feed on the last recurrent output.
        let top = &record.gru_outputs[depth - 1];
        let mut d_top = params.actor.w.matvec_t(&seed.d_logits.data);
        grads.actor.w.add_outer(&seed.d_logits.data, top);
        add_assign(&mut grads.actor.b, &seed.d_logits.data);
        if seed.d_value != 0.0 {
            axpy(&mut d_top, seed.d_value, params.critic.w.row(0));
            axpy(grads.critic.w.row_mut(0), seed.d_value, top);
            grads.critic.b[0] += seed.d_value;
        }

        // Through the recurrent stack, top to bottom.
        let mut d_out = d_top;
        for i in (0..depth).rev() {
            let (dx, dh_prev) = params.gru[i].backward_step(
                &mut grads.gru[i],
                &record.gru_caches[i],
                &d_out,
                &dh_carry[i],
            );
            dh_carry[i] = dh_prev;
            d_out = dx;
        }

        let da1 = params
            .dense2
            .backward_tanh(&mut grads.dense2, &record.a1, &record.a2, &d_out);
        params
            .dense1
            .backward_tanh(&mut grads.dense1, &record.input, &record.a1, &da1);
    }
    Ok(grads)
}
