use rand::Rng;

use crate::nn::ops::{norm2, relu_backward_inplace, relu_inplace};
use crate::nn::{Linear, ParamStore};

/// Addends whose rectified norm falls below this are replaced by zero.
pub const NORM_EPS: f64 = 1e-8;

/// Scales `v` to unit 2-norm. Returns `None` when its norm is below
/// [`NORM_EPS`], in which case the addend counts as the zero vector.
pub fn unit_or_zero(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm2(v);
    (n >= NORM_EPS).then(|| v.iter().map(|x| x / n).collect())
}

/// Sum of the unit-normalised rectified activations of each modality.
/// Degenerate addends contribute zero.
pub fn fuse_activations(spatial: Option<&[f64]>, temporal: Option<&[f64]>) -> Vec<f64> {
    let dim = spatial.or(temporal).map_or(0, <[f64]>::len);
    let mut h = vec![0.0; dim];
    for act in [spatial, temporal].into_iter().flatten() {
        let mut a = act.to_vec();
        relu_inplace(&mut a);
        if let Some(u) = unit_or_zero(&a) {
            h.iter_mut().zip(&u).for_each(|(x, y)| *x += y);
        }
    }
    h
}

/// Per-modality affine map, rectifier and 2-normalisation; the normalised
/// addends of the active modalities are summed into the latent embedding.
#[derive(Debug, Clone)]
pub struct Combiner {
    pub spatial: Option<Linear>,
    pub temporal: Option<Linear>,
    pub dim: usize,
}

/// Cached values of one modality's addend over a batch.
#[derive(Debug, Clone)]
pub struct AddendTrace {
    input: Vec<f64>,
    rectified: Vec<f64>,
    norms: Vec<f64>,
    /// Normalised addend, `batch × dim` (zero rows where degenerate).
    pub unit: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CombineTrace {
    pub spatial: Option<AddendTrace>,
    pub temporal: Option<AddendTrace>,
    pub latent: Vec<f64>,
    /// Number of addends treated as zero because of a vanishing norm.
    pub degenerate: usize,
}

impl Combiner {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, spatial: bool, temporal: bool, rng: &mut R) -> Self {
        Self {
            spatial: spatial.then(|| Linear::new(store, "combine.spatial", dim, dim, rng)),
            temporal: temporal.then(|| Linear::new(store, "combine.temporal", dim, dim, rng)),
            dim,
        }
    }

    fn addend(&self, layer: &Linear, params: &[f64], input: &[f64], batch: usize, degenerate: &mut usize) -> AddendTrace {
        let mut rectified = layer.forward(params, input, batch);
        relu_inplace(&mut rectified);
        let mut norms = Vec::with_capacity(batch);
        let mut unit = vec![0.0; batch * self.dim];
        for (row, out) in rectified.chunks_exact(self.dim).zip(unit.chunks_exact_mut(self.dim)) {
            let n = norm2(row);
            norms.push(n);
            if n >= NORM_EPS {
                out.iter_mut().zip(row).for_each(|(o, r)| *o = r / n);
            } else {
                *degenerate += 1;
            }
        }
        AddendTrace {
            input: input.to_vec(),
            rectified,
            norms,
            unit,
        }
    }

    pub fn forward(&self, params: &[f64], spatial: Option<&[f64]>, temporal: Option<&[f64]>, batch: usize) -> CombineTrace {
        let mut degenerate = 0;
        let s = self
            .spatial
            .as_ref()
            .zip(spatial)
            .map(|(l, x)| self.addend(l, params, x, batch, &mut degenerate));
        let t = self
            .temporal
            .as_ref()
            .zip(temporal)
            .map(|(l, x)| self.addend(l, params, x, batch, &mut degenerate));
        let mut latent = vec![0.0; batch * self.dim];
        for a in [&s, &t].into_iter().flatten() {
            latent.iter_mut().zip(&a.unit).for_each(|(h, u)| *h += u);
        }
        CombineTrace {
            spatial: s,
            temporal: t,
            latent,
            degenerate,
        }
    }

    fn addend_backward(&self, layer: &Linear, params: &[f64], grads: &mut [f64], a: &AddendTrace, dh: &[f64], batch: usize) -> Vec<f64> {
        let d = self.dim;
        let mut dpre = vec![0.0; batch * d];
        for b in 0..batch {
            let n = a.norms[b];
            if n < NORM_EPS {
                continue;
            }
            let unit = &a.unit[b * d..(b + 1) * d];
            let g = &dh[b * d..(b + 1) * d];
            let proj: f64 = unit.iter().zip(g).map(|(u, x)| u * x).sum();
            for j in 0..d {
                dpre[b * d + j] = (g[j] - unit[j] * proj) / n;
            }
        }
        relu_backward_inplace(&a.rectified, &mut dpre);
        layer.backward(params, grads, &a.input, &dpre, batch)
    }

    /// Returns gradients w.r.t. the raw spatial and temporal embeddings.
    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        trace: &CombineTrace,
        dh: &[f64],
        batch: usize,
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        let ds = self
            .spatial
            .as_ref()
            .zip(trace.spatial.as_ref())
            .map(|(l, a)| self.addend_backward(l, params, grads, a, dh, batch));
        let dt = self
            .temporal
            .as_ref()
            .zip(trace.temporal.as_ref())
            .map(|(l, a)| self.addend_backward(l, params, grads, a, dh, batch));
        (ds, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_examples() {
        let h = fuse_activations(Some(&[3.0, 4.0, 0.0]), Some(&[0.0, 1.0, 0.0]));
        assert!((h[0] - 0.6).abs() < 1e-15 && (h[1] - 1.8).abs() < 1e-15 && h[2] == 0.0);

        let v = [0.5, 2.0, 1.0];
        let h = fuse_activations(Some(&v), Some(&v));
        let n = norm2(&v);
        for (x, y) in h.iter().zip(&v) {
            assert!((x - 2.0 * y / n).abs() < 1e-15);
        }

        // All-negative pre-activation is rectified away.
        let h = fuse_activations(Some(&[-1.0, -2.0, -0.1]), Some(&[0.0, 3.0, 4.0]));
        assert_eq!(h, vec![0.0, 0.6, 0.8]);
    }

    #[test]
    fn tiny_norm_is_zero() {
        assert!(unit_or_zero(&[1e-9, 0.0]).is_none());
        assert!(unit_or_zero(&[1e-7, 0.0]).is_some());
    }

    proptest::proptest! {
        #[test]
        fn addends_are_unit_or_zero(
            s in proptest::collection::vec(-5.0f64..5.0, 24),
            t in proptest::collection::vec(-5.0f64..5.0, 24),
            seed in 0u64..1000,
        ) {
            let mut store = ParamStore::new();
            let c = Combiner::new(&mut store, 6, true, true, &mut crate::rng::rng_for(seed, &[]));
            let tr = c.forward(store.values(), Some(&s), Some(&t), 4);
            for a in [&tr.spatial, &tr.temporal].into_iter().flatten() {
                for row in a.unit.chunks_exact(6) {
                    let n = norm2(row);
                    proptest::prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
                }
            }
            for row in tr.latent.chunks_exact(6) {
                proptest::prop_assert!(norm2(row) <= 2.0 + 1e-6);
            }
        }
    }
}

