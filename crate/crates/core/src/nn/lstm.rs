use rand::Rng;

use super::ops::{gemm, sigmoid, Mat};
use super::{ParamId, ParamStore};

/// Single LSTM cell with gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

/// Everything one step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates, `batch × 4·hidden`.
    gates: Vec<f64>,
    pub c: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add_uniform(&format!("{name}.w_ih"), &[4 * hidden, input_dim], bound, rng);
        let w_hh = store.add_uniform(&format!("{name}.w_hh"), &[4 * hidden, hidden], bound, rng);
        let bias = store.add_uniform(&format!("{name}.bias"), &[4 * hidden], bound, rng);
        Self {
            input_dim,
            hidden,
            w_ih,
            w_hh,
            bias,
        }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w_ih, self.w_hh, self.bias]
    }

    pub fn step(&self, params: &[f64], x: Vec<f64>, h_prev: Vec<f64>, c_prev: Vec<f64>, batch: usize) -> LstmStep {
        let hd = self.hidden;
        let mut gates = Vec::with_capacity(batch * 4 * hd);
        let bias = &params[self.bias.range()];
        for _ in 0..batch {
            gates.extend_from_slice(bias);
        }
        if self.input_dim == 1 {
            // Scalar input: a rank-1 update is cheaper than a gemm call.
            let w = &params[self.w_ih.range()];
            for (row, xv) in gates.chunks_exact_mut(4 * hd).zip(&x) {
                for (g, wv) in row.iter_mut().zip(w) {
                    *g += wv * xv;
                }
            }
        } else {
            gemm(
                Mat::new(&x, batch, self.input_dim),
                Mat::new(&params[self.w_ih.range()], 4 * hd, self.input_dim).t(),
                &mut gates,
                1.0,
            );
        }
        gemm(
            Mat::new(&h_prev, batch, hd),
            Mat::new(&params[self.w_hh.range()], 4 * hd, hd).t(),
            &mut gates,
            1.0,
        );
        let mut c = vec![0.0; batch * hd];
        let mut tanh_c = vec![0.0; batch * hd];
        let mut h = vec![0.0; batch * hd];
        for b in 0..batch {
            let g = &mut gates[b * 4 * hd..(b + 1) * 4 * hd];
            for j in 0..hd {
                let i_g = sigmoid(g[j]);
                let f_g = sigmoid(g[hd + j]);
                let c_g = g[2 * hd + j].tanh();
                let o_g = sigmoid(g[3 * hd + j]);
                g[j] = i_g;
                g[hd + j] = f_g;
                g[2 * hd + j] = c_g;
                g[3 * hd + j] = o_g;
                let idx = b * hd + j;
                let cv = f_g * c_prev[idx] + i_g * c_g;
                let tc = cv.tanh();
                c[idx] = cv;
                tanh_c[idx] = tc;
                h[idx] = o_g * tc;
            }
        }
        LstmStep {
            x,
            h_prev,
            c_prev,
            gates,
            c,
            tanh_c,
            h,
        }
    }

    /// Backpropagates one step. `dh`/`dc` are gradients w.r.t. the step's
    /// outputs; returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        step: &LstmStep,
        dh: &[f64],
        dc: &[f64],
        batch: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let mut dz = vec![0.0; batch * 4 * hd];
        let mut dc_prev = vec![0.0; batch * hd];
        for b in 0..batch {
            let g = &step.gates[b * 4 * hd..(b + 1) * 4 * hd];
            let z = &mut dz[b * 4 * hd..(b + 1) * 4 * hd];
            for j in 0..hd {
                let idx = b * hd + j;
                let (i_g, f_g, c_g, o_g) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let tc = step.tanh_c[idx];
                let d_o = dh[idx] * tc;
                let d_c = dc[idx] + dh[idx] * o_g * (1.0 - tc * tc);
                z[j] = d_c * c_g * i_g * (1.0 - i_g);
                z[hd + j] = d_c * step.c_prev[idx] * f_g * (1.0 - f_g);
                z[2 * hd + j] = d_c * i_g * (1.0 - c_g * c_g);
                z[3 * hd + j] = d_o * o_g * (1.0 - o_g);
                dc_prev[idx] = d_c * f_g;
            }
        }
        let dz_mat = Mat::new(&dz, batch, 4 * hd);
        gemm(
            dz_mat.t(),
            Mat::new(&step.x, batch, self.input_dim),
            &mut grads[self.w_ih.range()],
            1.0,
        );
        gemm(dz_mat.t(), Mat::new(&step.h_prev, batch, hd), &mut grads[self.w_hh.range()], 1.0);
        for row in dz.chunks_exact(4 * hd) {
            for (g, d) in grads[self.bias.range()].iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; batch * self.input_dim];
        gemm(
            dz_mat,
            Mat::new(&params[self.w_ih.range()], 4 * hd, self.input_dim),
            &mut dx,
            0.0,
        );
        let mut dh_prev = vec![0.0; batch * hd];
        gemm(dz_mat, Mat::new(&params[self.w_hh.range()], 4 * hd, hd), &mut dh_prev, 0.0);
        (dx, dh_prev, dc_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn step_gradients_match_differences() {
        let (batch, input, hidden) = (3, 2, 4);
        let mut store = ParamStore::new();
        let mut rng = rng_for(1, &[]);
        let cell = LstmCell::new(&mut store, "l", input, hidden, &mut rng);
        let params = store.values().to_vec();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (x, h0, c0) = (draw(batch * input), draw(batch * hidden), draw(batch * hidden));
        let (rh, rc) = (draw(batch * hidden), draw(batch * hidden));
        let loss = |p: &[f64], x: &[f64], h0: &[f64], c0: &[f64]| -> f64 {
            let s = cell.step(p, x.to_vec(), h0.to_vec(), c0.to_vec(), batch);
            s.h.iter().zip(&rh).chain(s.c.iter().zip(&rc)).map(|(a, b)| a * b).sum()
        };
        let step = cell.step(&params, x.clone(), h0.clone(), c0.clone(), batch);
        let mut grads = vec![0.0; params.len()];
        let (dx, dh, dc) = cell.step_backward(&params, &mut grads, &step, &rh, &rc, batch);
        let eps = 1e-6;
        let check = |analytic: f64, f: &dyn Fn(f64) -> f64| {
            let num = (f(eps) - f(-eps)) / (2.0 * eps);
            assert!((num - analytic).abs() <= 1e-6 * (1.0 + num.abs()), "{num} vs {analytic}");
        };
        for i in 0..params.len() {
            check(grads[i], &|e| {
                let mut p = params.clone();
                p[i] += e;
                loss(&p, &x, &h0, &c0)
            });
        }
        for i in 0..x.len() {
            check(dx[i], &|e| {
                let mut v = x.clone();
                v[i] += e;
                loss(&params, &v, &h0, &c0)
            });
        }
        for i in 0..h0.len() {
            check(dh[i], &|e| {
                let mut v = h0.clone();
                v[i] += e;
                loss(&params, &x, &v, &c0)
            });
            check(dc[i], &|e| {
                let mut v = c0.clone();
                v[i] += e;
                loss(&params, &x, &h0, &v)
            });
        }
    }

    #[test]
    fn scalar_input_path_matches_general_path() {
        let mut store = ParamStore::new();
        let mut rng = rng_for(2, &[]);
        let narrow = LstmCell::new(&mut store, "a", 1, 3, &mut rng);
        let params = store.values().to_vec();
        // Same weights viewed as a 2-input cell whose second input is always zero.
        let mut wide_store = ParamStore::new();
        let wide = LstmCell::new(&mut wide_store, "b", 2, 3, &mut rng);
        let mut wide_params = wide_store.values().to_vec();
        let [w_ih, w_hh, bias] = narrow.params();
        let [v_ih, v_hh, v_bias] = wide.params();
        for (r, w) in params[w_ih.range()].iter().enumerate() {
            wide_params[v_ih.range()][2 * r] = *w;
            wide_params[v_ih.range()][2 * r + 1] = 0.5;
        }
        wide_params[v_hh.range()].copy_from_slice(&params[w_hh.range()]);
        wide_params[v_bias.range()].copy_from_slice(&params[bias.range()]);
        let x = vec![0.3, -0.7];
        let h = vec![0.1, 0.2, -0.3, 0.0, 0.5, -0.5];
        let a = narrow.step(&params, x.clone(), h.clone(), h.clone(), 2);
        let b = wide.step(&wide_params, vec![0.3, 0.0, -0.7, 0.0], h.clone(), h, 2);
        for (u, v) in a.h.iter().zip(&b.h) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
