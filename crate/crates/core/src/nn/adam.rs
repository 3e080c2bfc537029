use serde::{Deserialize, Serialize};

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update. Coordinates with `frozen[i] == true` are left untouched,
    /// moments included.
    pub fn step(&self, state: &mut AdamState, params: &mut [f64], grads: &[f64], frozen: Option<&[bool]>) {
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            if frozen.is_some_and(|f| f[i]) {
                continue;
            }
            let g = grads[i];
            let m = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
            state.m[i] = m;
            state.v[i] = v;
            params[i] -= self.learning_rate * (m / bc1) / ((v / bc2).sqrt() + self.eps);
        }
    }
}
