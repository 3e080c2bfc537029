use rand::Rng;

use super::ops::{gemm, Mat, Window};
use super::{ParamId, ParamStore};

/// Square-kernel 2-D convolution over `batch × channels × height × width` tensors.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub window: Window,
    pub out_channels: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Conv2d {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, window: Window, out_channels: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (window.patch_len() as f64).sqrt();
        let weight = store.add_uniform(&format!("{name}.weight"), &[out_channels, window.patch_len()], bound, rng);
        let bias = store.add_uniform(&format!("{name}.bias"), &[out_channels], bound, rng);
        Self {
            window,
            out_channels,
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

    pub fn in_len(&self) -> usize {
        self.window.channels * self.window.height * self.window.width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.window.positions()
    }

    pub fn forward(&self, params: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
        let w = &self.window;
        let positions = w.positions();
        let weight = Mat::new(&params[self.weight.range()], self.out_channels, w.patch_len());
        let bias = &params[self.bias.range()];
        let mut cols = vec![0.0; w.patch_len() * positions];
        let mut out = vec![0.0; batch * self.out_len()];
        for (img, dst) in x.chunks_exact(self.in_len()).zip(out.chunks_exact_mut(self.out_len())) {
            w.im2col(img, &mut cols);
            for (row, b) in dst.chunks_exact_mut(positions).zip(bias) {
                row.fill(*b);
            }
            gemm(weight, Mat::new(&cols, w.patch_len(), positions), dst, 1.0);
        }
        out
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], x: &[f64], dy: &[f64], batch: usize) -> Vec<f64> {
        let w = &self.window;
        let positions = w.positions();
        let weight = Mat::new(&params[self.weight.range()], self.out_channels, w.patch_len());
        let mut cols = vec![0.0; w.patch_len() * positions];
        let mut dcols = vec![0.0; w.patch_len() * positions];
        let mut dx = vec![0.0; batch * self.in_len()];
        for ((img, dimg), g) in x
            .chunks_exact(self.in_len())
            .zip(dx.chunks_exact_mut(self.in_len()))
            .zip(dy.chunks_exact(self.out_len()))
        {
            w.im2col(img, &mut cols);
            let g_mat = Mat::new(g, self.out_channels, positions);
            gemm(
                g_mat,
                Mat::new(&cols, w.patch_len(), positions).t(),
                &mut grads[self.weight.range()],
                1.0,
            );
            for (db, row) in grads[self.bias.range()].iter_mut().zip(g.chunks_exact(positions)) {
                *db += row.iter().sum::<f64>();
            }
            gemm(weight.t(), g_mat, &mut dcols, 0.0);
            w.col2im_add(&dcols, dimg);
        }
        dx
    }
}

/// Transposed convolution; `window` describes the *output* image, so the
/// layer is the adjoint of a [`Conv2d`] with the same window.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub window: Window,
    pub in_channels: usize,
    weight: ParamId,
    bias: ParamId,
}

impl ConvTranspose2d {
    /// Builds a layer mapping `in_channels × in_h × in_w` to
    /// `out_channels × out_h × out_w`, where `in_h/in_w` follow from the
    /// output geometry, kernel, stride and padding.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_channels: usize, window: Window, rng: &mut R) -> Self {
        let fan_in = in_channels * window.kernel * window.kernel / (window.stride * window.stride).max(1);
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weight = store.add_uniform(&format!("{name}.weight"), &[in_channels, window.patch_len()], bound, rng);
        let bias = store.add_uniform(&format!("{name}.bias"), &[window.channels], bound, rng);
        Self {
            window,
            in_channels,
            weight,
            bias,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.window.positions()
    }

    pub fn out_len(&self) -> usize {
        self.window.channels * self.window.height * self.window.width
    }

    pub fn forward(&self, params: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
        let w = &self.window;
        let positions = w.positions();
        let plane = w.height * w.width;
        let weight = Mat::new(&params[self.weight.range()], self.in_channels, w.patch_len());
        let bias = &params[self.bias.range()];
        let mut cols = vec![0.0; w.patch_len() * positions];
        let mut out = vec![0.0; batch * self.out_len()];
        for (img, dst) in x.chunks_exact(self.in_len()).zip(out.chunks_exact_mut(self.out_len())) {
            gemm(weight.t(), Mat::new(img, self.in_channels, positions), &mut cols, 0.0);
            for (ch, b) in dst.chunks_exact_mut(plane).zip(bias) {
                ch.fill(*b);
            }
            w.col2im_add(&cols, dst);
        }
        out
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], x: &[f64], dy: &[f64], batch: usize) -> Vec<f64> {
        let w = &self.window;
        let positions = w.positions();
        let plane = w.height * w.width;
        let weight = Mat::new(&params[self.weight.range()], self.in_channels, w.patch_len());
        let mut dcols = vec![0.0; w.patch_len() * positions];
        let mut dx = vec![0.0; batch * self.in_len()];
        for ((img, dimg), g) in x
            .chunks_exact(self.in_len())
            .zip(dx.chunks_exact_mut(self.in_len()))
            .zip(dy.chunks_exact(self.out_len()))
        {
            w.im2col(g, &mut dcols);
            let dcols_mat = Mat::new(&dcols, w.patch_len(), positions);
            gemm(
                Mat::new(img, self.in_channels, positions),
                dcols_mat.t(),
                &mut grads[self.weight.range()],
                1.0,
            );
            for (db, ch) in grads[self.bias.range()].iter_mut().zip(g.chunks_exact(plane)) {
                *db += ch.iter().sum::<f64>();
            }
            gemm(weight, dcols_mat, dimg, 0.0);
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn window() -> Window {
        Window {
            channels: 2,
            height: 6,
            width: 6,
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }

    fn values(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, &[]);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matches_direct_convolution() {
        let mut store = ParamStore::new();
        let w = window();
        let conv = Conv2d::new(&mut store, "c", w, 3, &mut rng_for(1, &[]));
        let x = values(2 * conv.in_len(), 2);
        let y = conv.forward(store.values(), &x, 2);
        let (k, p) = (store.get(conv.weight()), store.get(conv.bias()));
        let (oh, ow) = (w.out_height(), w.out_width());
        for b in 0..2 {
            for o in 0..3 {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = p[o];
                        for ch in 0..2 {
                            for i in 0..3 {
                                for j in 0..3 {
                                    let (sr, sc) = ((r * 2 + i) as isize - 1, (c * 2 + j) as isize - 1);
                                    if (0..6).contains(&sr) && (0..6).contains(&sc) {
                                        let xv = x[b * conv.in_len() + ch * 36 + sr as usize * 6 + sc as usize];
                                        acc += k[o * w.patch_len() + ch * 9 + i * 3 + j] * xv;
                                    }
                                }
                            }
                        }
                        let got = y[b * conv.out_len() + o * oh * ow + r * ow + c];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let w = window();
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", w, 3, &mut rng_for(3, &[]));
        let deconv = ConvTranspose2d::new(&mut store, "d", 3, w, &mut rng_for(4, &[]));
        let mut params = store.values().to_vec();
        let k: Vec<f64> = store.get(conv.weight()).to_vec();
        params[deconv.weight().range()].copy_from_slice(&k);
        params[conv.bias().range()].fill(0.0);
        params[deconv.bias.range()].fill(0.0);
        let x = values(conv.in_len(), 5);
        let y = values(conv.out_len(), 6);
        let lhs: f64 = conv.forward(&params, &x, 1).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = deconv.forward(&params, &y, 1).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_differences() {
        // Both layers are affine, so central differences are exact up to round-off.
        let w = window();
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", w, 3, &mut rng_for(7, &[]));
        let deconv = ConvTranspose2d::new(&mut store, "d", 3, w, &mut rng_for(8, &[]));
        let params = store.values().to_vec();
        let x = values(2 * conv.in_len(), 9);
        let r = values(2 * conv.out_len(), 10);
        let xt = values(2 * deconv.in_len(), 11);
        let rt = values(2 * deconv.out_len(), 12);
        let loss = |p: &[f64], x: &[f64], xt: &[f64]| -> f64 {
            let a: f64 = conv.forward(p, x, 2).iter().zip(&r).map(|(u, v)| u * v).sum();
            let b: f64 = deconv.forward(p, xt, 2).iter().zip(&rt).map(|(u, v)| u * v).sum();
            a + b
        };
        let mut grads = vec![0.0; params.len()];
        let dx = conv.backward(&params, &mut grads, &x, &r, 2);
        let dxt = deconv.backward(&params, &mut grads, &xt, &rt, 2);
        let eps = 1e-6;
        for i in 0..params.len() {
            let (mut up, mut dn) = (params.clone(), params.clone());
            up[i] += eps;
            dn[i] -= eps;
            let num = (loss(&up, &x, &xt) - loss(&dn, &x, &xt)) / (2.0 * eps);
            assert!((num - grads[i]).abs() < 1e-7, "param {i}: {num} vs {}", grads[i]);
        }
        for i in 0..x.len() {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[i] += eps;
            dn[i] -= eps;
            let num = (loss(&params, &up, &xt) - loss(&params, &dn, &xt)) / (2.0 * eps);
            assert!((num - dx[i]).abs() < 1e-7);
        }
        for i in 0..xt.len() {
            let (mut up, mut dn) = (xt.clone(), xt.clone());
            up[i] += eps;
            dn[i] -= eps;
            let num = (loss(&params, &x, &up) - loss(&params, &x, &dn)) / (2.0 * eps);
            assert!((num - dxt[i]).abs() < 1e-7);
        }
    }
}
