//! Dense and gated recurrent layers with hand-written reverse-mode
//! gradients. Each layer processes one sample at a time; the caller owns the
//! caches needed for the backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{add_assign, dot, sigmoid, Matrix};

/// Fully connected layer parameters (also used for the network heads).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(out: usize, input: usize) -> Self {
        DenseParams {
            w: Matrix::zeros(out, input),
            b: vec![0.0; out],
        }
    }

    /// Weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init(out: usize, input: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        DenseParams {
            w: Matrix::from_fn(out, input, |_, _| rng.gen_range(-bound..bound)),
            b: vec![0.0; out],
        }
    }

    pub fn linear(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        add_assign(&mut y, &self.b);
        y
    }

    /// y = tanh(Wx + b).
    pub fn forward_tanh(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.linear(x);
        for v in &mut y {
            *v = v.tanh();
        }
        y
    }

    /// Backward through y = tanh(Wx + b) given dy and the cached x and y.
    /// Accumulates into `grads` and returns dx.
    pub fn backward_tanh(&self, grads: &mut DenseParams, x: &[f64], y: &[f64], dy: &[f64]) -> Vec<f64> {
        let dz: Vec<f64> = dy.iter().zip(y).map(|(g, a)| g * (1.0 - a * a)).collect();
        grads.w.add_outer(&dz, x);
        add_assign(&mut grads.b, &dz);
        self.w.matvec_t(&dz)
    }

    /// Backward through y = Wx + b.
    pub fn backward_linear(&self, grads: &mut DenseParams, x: &[f64], dy: &[f64]) -> Vec<f64> {
        grads.w.add_outer(dy, x);
        add_assign(&mut grads.b, dy);
        self.w.matvec_t(dy)
    }
}

/// Gated recurrent cell with an identity skip from input to output, so the
/// layer computes `h' + x` (input and hidden widths are equal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub wz: Matrix,
    pub uz: Matrix,
    pub bz: Vec<f64>,
    pub wr: Matrix,
    pub ur: Matrix,
    pub br: Vec<f64>,
    pub wc: Matrix,
    pub uc: Matrix,
    pub bc: Vec<f64>,
}

/// Per-step activations the backward pass needs.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub h_next: Vec<f64>,
}

impl GruParams {
    pub fn zeros(width: usize) -> Self {
        GruParams {
            wz: Matrix::zeros(width, width),
            uz: Matrix::zeros(width, width),
            bz: vec![0.0; width],
            wr: Matrix::zeros(width, width),
            ur: Matrix::zeros(width, width),
            br: vec![0.0; width],
            wc: Matrix::zeros(width, width),
            uc: Matrix::zeros(width, width),
            bc: vec![0.0; width],
        }
    }

    pub fn init(width: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (width.max(1) as f64).sqrt();
        let mut m = || Matrix::from_fn(width, width, |_, _| rng.gen_range(-bound..bound));
        GruParams {
            wz: m(),
            uz: m(),
            bz: vec![0.0; width],
            wr: m(),
            ur: m(),
            br: vec![0.0; width],
            wc: m(),
            uc: m(),
            bc: vec![0.0; width],
        }
    }

    /// One step: z and r gates, candidate c, new hidden
    /// h' = (1-z)⊙h + z⊙c, output h' + x.
    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GruCache) {
        let width = h_prev.len();
        let mut z = self.wz.matvec(x);
        add_assign(&mut z, &self.uz.matvec(h_prev));
        add_assign(&mut z, &self.bz);
        for v in &mut z {
            *v = sigmoid(*v);
        }
        let mut r = self.wr.matvec(x);
        add_assign(&mut r, &self.ur.matvec(h_prev));
        add_assign(&mut r, &self.br);
        for v in &mut r {
            *v = sigmoid(*v);
        }
        let gated: Vec<f64> = r.iter().zip(h_prev).map(|(rv, hv)| rv * hv).collect();
        let mut c = self.wc.matvec(x);
        add_assign(&mut c, &self.uc.matvec(&gated));
        add_assign(&mut c, &self.bc);
        for v in &mut c {
            *v = v.tanh();
        }
        let mut h_next = vec![0.0; width];
        for i in 0..width {
            h_next[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i];
        }
        let output: Vec<f64> = h_next.iter().zip(x).map(|(h, xv)| h + xv).collect();
        let cache = GruCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            c,
            h_next,
        };
        (output, cache)
    }

    /// Backward through one step. `d_output` is the gradient at `h' + x`;
    /// `d_h_next` is the gradient flowing back into h' from the following
    /// time step. Returns (dx, d_h_prev) and accumulates parameter gradients.
    pub fn backward_step(
        &self,
        grads: &mut GruParams,
        cache: &GruCache,
        d_output: &[f64],
        d_h_next: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let width = cache.h_prev.len();
        let mut dh_new = vec![0.0; width];
        add_assign(&mut dh_new, d_output);
        add_assign(&mut dh_new, d_h_next);
        let mut dx = d_output.to_vec();

        // h' = (1-z)h + zc
        let mut dz = vec![0.0; width];
        let mut dc = vec![0.0; width];
        let mut dh_prev = vec![0.0; width];
        for i in 0..width {
            dz[i] = dh_new[i] * (cache.c[i] - cache.h_prev[i]);
            dc[i] = dh_new[i] * cache.z[i];
            dh_prev[i] = dh_new[i] * (1.0 - cache.z[i]);
        }

        // c = tanh(Wc x + Uc (r⊙h) + bc)
        let duc: Vec<f64> = dc
            .iter()
            .zip(&cache.c)
            .map(|(g, c)| g * (1.0 - c * c))
            .collect();
        let gated: Vec<f64> = cache
            .r
            .iter()
            .zip(&cache.h_prev)
            .map(|(r, h)| r * h)
            .collect();
        grads.wc.add_outer(&duc, &cache.x);
        grads.uc.add_outer(&duc, &gated);
        add_assign(&mut grads.bc, &duc);
        add_assign(&mut dx, &self.wc.matvec_t(&duc));
        let d_gated = self.uc.matvec_t(&duc);
        let mut dr = vec![0.0; width];
        for i in 0..width {
            dr[i] = d_gated[i] * cache.h_prev[i];
            dh_prev[i] += d_gated[i] * cache.r[i];
        }

        // r = sigmoid(Wr x + Ur h + br)
        let dur: Vec<f64> = dr
            .iter()
            .zip(&cache.r)
            .map(|(g, r)| g * r * (1.0 - r))
            .collect();
        grads.wr.add_outer(&dur, &cache.x);
        grads.ur.add_outer(&dur, &cache.h_prev);
        add_assign(&mut grads.br, &dur);
        add_assign(&mut dx, &self.wr.matvec_t(&dur));
        add_assign(&mut dh_prev, &self.ur.matvec_t(&dur));

        // z = sigmoid(Wz x + Uz h + bz)
        let duz: Vec<f64> = dz
            .iter()
            .zip(&cache.z)
            .map(|(g, z)| g * z * (1.0 - z))
            .collect();
        grads.wz.add_outer(&duz, &cache.x);
        grads.uz.add_outer(&duz, &cache.h_prev);
        add_assign(&mut grads.bz, &duz);
        add_assign(&mut dx, &self.wz.matvec_t(&duz));
        add_assign(&mut dh_prev, &self.uz.matvec_t(&duz));

        (dx, dh_prev)
    }
}

/// The objective value of a scalar head: used by gradient checks.
pub fn head_value(head: &DenseParams, x: &[f64]) -> f64 {
    dot(head.w.row(0), x) + head.b[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gru_with_zero_hidden_is_the_identity() {
        let gru = GruParams::zeros(3);
        let x = vec![0.3, -0.7, 1.2];
        let h = vec![0.0; 3];
        let (out, cache) = gru.step(&x, &h);
        assert_eq!(out, x);
        assert!(cache.h_next.iter().all(|&v| v == 0.0));
        // And it stays the identity on later steps since h never moves.
        let (out2, _) = gru.step(&out, &cache.h_next);
        assert_eq!(out2, x);
    }

    #[test]
    fn dense_tanh_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = DenseParams::init(3, 4, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dy = vec![0.7, -0.3, 0.2];
        let y = layer.forward_tanh(&x);
        let mut grads = DenseParams::zeros(3, 4);
        let dx = layer.backward_tanh(&mut grads, &x, &y, &dy);

        let objective = |l: &DenseParams, input: &[f64]| -> f64 {
            dot(&l.forward_tanh(input), &dy)
        };
        let eps = 1e-6;
        for idx in 0..layer.w.data.len() {
            let mut plus = layer.clone();
            plus.w.data[idx] += eps;
            let mut minus = layer.clone();
            minus.w.data[idx] -= eps;
            let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * eps);
            assert!((fd - grads.w.data[idx]).abs() < 1e-7, "w[{idx}]");
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-7, "x[{i}]");
        }
    }

    #[test]
    fn gru_step_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gru = GruParams::init(3, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d_out = vec![0.5, -0.4, 0.9];
        let d_h_next = vec![0.2, 0.1, -0.3];

        let (_, cache) = gru.step(&x, &h);
        let mut grads = GruParams::zeros(3);
        let (dx, dh) = gru.backward_step(&mut grads, &cache, &d_out, &d_h_next);

        // Objective: dot(output, d_out) + dot(h', d_h_next).
        let objective = |g: &GruParams, xin: &[f64], hin: &[f64]| -> f64 {
            let (out, cache) = g.step(xin, hin);
            dot(&out, &d_out) + dot(&cache.h_next, &d_h_next)
        };
        let eps = 1e-6;
        let base_tensors: Vec<(&str, Vec<f64>)> = vec![
            ("wz", gru.wz.data.clone()),
            ("uz", gru.uz.data.clone()),
            ("wr", gru.wr.data.clone()),
            ("ur", gru.ur.data.clone()),
            ("wc", gru.wc.data.clone()),
            ("uc", gru.uc.data.clone()),
        ];
        let grad_tensors: Vec<&[f64]> = vec![
            &grads.wz.data,
            &grads.uz.data,
            &grads.wr.data,
            &grads.ur.data,
            &grads.wc.data,
            &grads.uc.data,
        ];
        for (t, (name, base)) in base_tensors.iter().enumerate() {
            for idx in 0..base.len() {
                let mut plus = gru.clone();
                let mut minus = gru.clone();
                let (tp, tm) = match *name {
                    "wz" => (&mut plus.wz, &mut minus.wz),
                    "uz" => (&mut plus.uz, &mut minus.uz),
                    "wr" => (&mut plus.wr, &mut minus.wr),
                    "ur" => (&mut plus.ur, &mut minus.ur),
                    "wc" => (&mut plus.wc, &mut minus.wc),
                    _ => (&mut plus.uc, &mut minus.uc),
                };
                tp.data[idx] += eps;
                tm.data[idx] -= eps;
                let fd = (objective(&plus, &x, &h) - objective(&minus, &x, &h)) / (2.0 * eps);
                assert!(
                    (fd - grad_tensors[t][idx]).abs() < 1e-7,
                    "{name}[{idx}]: fd {fd} vs {}",
                    grad_tensors[t][idx]
                );
            }
        }
        for i in 0..3 {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (objective(&gru, &xp, &h) - objective(&gru, &xm, &h)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-7, "x[{i}]");
            let mut hp = h.to_vec();
            hp[i] += eps;
            let mut hm = h.to_vec();
            hm[i] -= eps;
            let fd = (objective(&gru, &x, &hp) - objective(&gru, &x, &hm)) / (2.0 * eps);
            assert!((fd - dh[i]).abs() < 1e-7, "h[{i}]");
        }
    }
}
