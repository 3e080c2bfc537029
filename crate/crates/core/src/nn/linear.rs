use rand::Rng;

use super::ops::{gemm, Mat};
use super::{ParamId, ParamStore};

/// Affine map `y = x Wᵀ + b` applied row-wise to a `batch × in_dim` matrix.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add_uniform(&format!("{name}.weight"), &[out_dim, in_dim], bound, rng);
        let bias = store.add_uniform(&format!("{name}.bias"), &[out_dim], bound, rng);
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, params: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), batch * self.in_dim);
        let bias = &params[self.bias.range()];
        let mut y = Vec::with_capacity(batch * self.out_dim);
        for _ in 0..batch {
            y.extend_from_slice(bias);
        }
        gemm(
            Mat::new(x, batch, self.in_dim),
            Mat::new(&params[self.weight.range()], self.out_dim, self.in_dim).t(),
            &mut y,
            1.0,
        );
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, params: &[f64], grads: &mut [f64], x: &[f64], dy: &[f64], batch: usize) -> Vec<f64> {
        self.accumulate(grads, x, dy, batch);
        let mut dx = vec![0.0; batch * self.in_dim];
        gemm(
            Mat::new(dy, batch, self.out_dim),
            Mat::new(&params[self.weight.range()], self.out_dim, self.in_dim),
            &mut dx,
            0.0,
        );
        dx
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn accumulate(&self, grads: &mut [f64], x: &[f64], dy: &[f64], batch: usize) {
        gemm(
            Mat::new(dy, batch, self.out_dim).t(),
            Mat::new(x, batch, self.in_dim),
            &mut grads[self.weight.range()],
            1.0,
        );
        let db = &mut grads[self.bias.range()];
        for row in dy.chunks_exact(self.out_dim) {
            for (g, d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn forward_and_backward() {
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "fc", 3, 2, &mut rng_for(1, &[]));
        let params = store.values().to_vec();
        let x = [1.0, -2.0, 0.5, 0.0, 1.0, 3.0];
        let y = layer.forward(&params, &x, 2);
        let (w, b) = (store.get(layer.weight()), store.get(layer.bias()));
        for r in 0..2 {
            for o in 0..2 {
                let want: f64 = b[o] + (0..3).map(|i| w[o * 3 + i] * x[r * 3 + i]).sum::<f64>();
                assert!((y[r * 2 + o] - want).abs() < 1e-14);
            }
        }
        let dy = [1.0, 0.0, -1.0, 2.0];
        let mut grads = vec![0.0; params.len()];
        let dx = layer.backward(&params, &mut grads, &x, &dy, 2);
        let gw = &grads[layer.weight().range()];
        // dW = dyᵀ x, db = column sums of dy, dx = dy W.
        assert!((gw[0] - 1.0).abs() < 1e-14);
        assert!((gw[5] - (0.0 * 0.5 + 2.0 * 3.0)).abs() < 1e-14);
        assert_eq!(&grads[layer.bias().range()], &[0.0, 2.0]);
        assert!((dx[4] - (-w[1] + 2.0 * w[4])).abs() < 1e-14);
    }
}
