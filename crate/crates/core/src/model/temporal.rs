use rand::Rng;

use crate::nn::ops::sigmoid;
use crate::nn::{Linear, LstmCell, LstmStep, ParamStore};

/// Bidirectional LSTM over a scalar series; the terminal hidden states of
/// both directions are added.
#[derive(Debug, Clone)]
pub struct TemporalEncoder {
    pub forward_cell: LstmCell,
    pub backward_cell: LstmCell,
}

#[derive(Debug, Clone)]
pub struct TemporalEncoderTrace {
    forward_steps: Vec<LstmStep>,
    backward_steps: Vec<LstmStep>,
}

fn column(series: &[f64], len: usize, t: usize) -> Vec<f64> {
    series.chunks_exact(len).map(|row| row[t]).collect()
}

impl TemporalEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        Self {
            forward_cell: LstmCell::new(store, "encoder.temporal.fwd", 1, dim, rng),
            backward_cell: LstmCell::new(store, "encoder.temporal.bwd", 1, dim, rng),
        }
    }

    fn run(cell: &LstmCell, params: &[f64], series: &[f64], len: usize, batch: usize, order: impl Iterator<Item = usize>) -> Vec<LstmStep> {
        let hd = cell.hidden;
        let mut steps: Vec<LstmStep> = Vec::with_capacity(len);
        for t in order {
            let (h, c) = match steps.last() {
                Some(s) => (s.h.clone(), s.c.clone()),
                None => (vec![0.0; batch * hd], vec![0.0; batch * hd]),
            };
            steps.push(cell.step(params, column(series, len, t), h, c, batch));
        }
        steps
    }

    pub fn forward(&self, params: &[f64], series: &[f64], len: usize, batch: usize) -> (Vec<f64>, TemporalEncoderTrace) {
        let forward_steps = Self::run(&self.forward_cell, params, series, len, batch, 0..len);
        let backward_steps = Self::run(&self.backward_cell, params, series, len, batch, (0..len).rev());
        let out = forward_steps
            .last()
            .unwrap()
            .h
            .iter()
            .zip(&backward_steps.last().unwrap().h)
            .map(|(a, b)| a + b)
            .collect();
        (
            out,
            TemporalEncoderTrace {
                forward_steps,
                backward_steps,
            },
        )
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], trace: &TemporalEncoderTrace, dout: &[f64], batch: usize) {
        for (cell, steps) in [
            (&self.forward_cell, &trace.forward_steps),
            (&self.backward_cell, &trace.backward_steps),
        ] {
            let mut dh = dout.to_vec();
            let mut dc = vec![0.0; dout.len()];
            for step in steps.iter().rev() {
                let (_, dh_prev, dc_prev) = cell.step_backward(params, grads, step, &dh, &dc, batch);
                dh = dh_prev;
                dc = dc_prev;
            }
        }
    }
}

/// Autoregressive LSTM generator. The latent sets the initial hidden state
/// through an affine map; the first input is 0 and every later input is the
/// previous output (or the target, under teacher forcing).
#[derive(Debug, Clone)]
pub struct TemporalDecoder {
    init: Linear,
    cell: LstmCell,
    head: Linear,
}

#[derive(Debug, Clone)]
pub struct TemporalDecoderTrace {
    pub latent: Vec<f64>,
    steps: Vec<LstmStep>,
    outputs: Vec<f64>,
    teacher_forcing: bool,
}

impl TemporalDecoder {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        Self {
            init: Linear::new(store, "decoder.temporal.init", dim, dim, rng),
            cell: LstmCell::new(store, "decoder.temporal.cell", 1, dim, rng),
            head: Linear::new(store, "decoder.temporal.head", dim, 1, rng),
        }
    }

    /// Rolls out `len` steps. With `targets` given, each next input is the
    /// true previous value instead of the model's own output.
    pub fn forward(&self, params: &[f64], latent: &[f64], len: usize, batch: usize, targets: Option<&[f64]>) -> (Vec<f64>, TemporalDecoderTrace) {
        let hd = self.cell.hidden;
        let mut h = self.init.forward(params, latent, batch);
        let mut c = vec![0.0; batch * hd];
        let mut x = vec![0.0; batch];
        let mut steps = Vec::with_capacity(len);
        let mut outputs = vec![0.0; batch * len];
        for t in 0..len {
            let step = self.cell.step(params, x, h, c, batch);
            let z = self.head.forward(params, &step.h, batch);
            let y: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
            for (b, v) in y.iter().enumerate() {
                outputs[b * len + t] = *v;
            }
            x = match targets {
                Some(tg) => column(tg, len, t),
                None => y,
            };
            h = step.h.clone();
            c = step.c.clone();
            steps.push(step);
        }
        (
            outputs.clone(),
            TemporalDecoderTrace {
                latent: latent.to_vec(),
                steps,
                outputs,
                teacher_forcing: targets.is_some(),
            },
        )
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], trace: &TemporalDecoderTrace, dout: &[f64], len: usize, batch: usize) -> Vec<f64> {
        let hd = self.cell.hidden;
        let mut dh_next = vec![0.0; batch * hd];
        let mut dc_next = vec![0.0; batch * hd];
        let mut dx_next = vec![0.0; batch];
        for t in (0..len).rev() {
            let step = &trace.steps[t];
            let dz: Vec<f64> = (0..batch)
                .map(|b| {
                    let y = trace.outputs[b * len + t];
                    let feedback = if trace.teacher_forcing { 0.0 } else { dx_next[b] };
                    (dout[b * len + t] + feedback) * y * (1.0 - y)
                })
                .collect();
            let dh_head = self.head.backward(params, grads, &step.h, &dz, batch);
            let dh: Vec<f64> = dh_head.iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (dx, dh_prev, dc_prev) = self.cell.step_backward(params, grads, step, &dh, &dc_next, batch);
            dx_next = dx;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        self.init.backward(params, grads, &trace.latent, &dh_next, batch)
    }
}
