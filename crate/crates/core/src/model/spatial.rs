use rand::Rng;

use crate::nn::ops::{relu_backward_inplace, relu_inplace, sigmoid, Window};
use crate::nn::{Conv2d, ConvTranspose2d, Linear, ParamStore};

const ENC_KERNEL: usize = 3;
const DEC_KERNEL: usize = 4;

/// Stride-2 convolution blocks followed by a flatten and affine projection.
#[derive(Debug, Clone)]
pub struct SpatialEncoder {
    convs: Vec<Conv2d>,
    proj: Linear,
}

#[derive(Debug, Clone)]
pub struct SpatialEncoderTrace {
    /// Input to each conv block; the last entry is the flattened feature map.
    activations: Vec<Vec<f64>>,
}

impl SpatialEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, image_size: usize, channels: &[usize], dim: usize, rng: &mut R) -> Self {
        let mut convs = Vec::with_capacity(channels.len());
        let (mut side, mut in_ch) = (image_size, 1);
        for (i, &out_ch) in channels.iter().enumerate() {
            let window = Window {
                channels: in_ch,
                height: side,
                width: side,
                kernel: ENC_KERNEL,
                stride: 2,
                padding: 1,
            };
            convs.push(Conv2d::new(store, &format!("encoder.spatial.conv{i}"), window, out_ch, rng));
            side = window.out_height();
            in_ch = out_ch;
        }
        let proj = Linear::new(store, "encoder.spatial.proj", in_ch * side * side, dim, rng);
        Self { convs, proj }
    }

    pub fn convs(&self) -> &[Conv2d] {
        &self.convs
    }

    pub fn forward(&self, params: &[f64], maps: &[f64], batch: usize) -> (Vec<f64>, SpatialEncoderTrace) {
        let mut activations = Vec::with_capacity(self.convs.len() + 1);
        let mut x = maps.to_vec();
        for conv in &self.convs {
            let mut y = conv.forward(params, &x, batch);
            relu_inplace(&mut y);
            activations.push(x);
            x = y;
        }
        let out = self.proj.forward(params, &x, batch);
        activations.push(x);
        (out, SpatialEncoderTrace { activations })
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], trace: &SpatialEncoderTrace, dout: &[f64], batch: usize) {
        let acts = &trace.activations;
        let mut d = self.proj.backward(params, grads, &acts[self.convs.len()], dout, batch);
        for (i, conv) in self.convs.iter().enumerate().rev() {
            relu_backward_inplace(&acts[i + 1], &mut d);
            if i == 0 {
                // Input images need no gradient.
                conv.backward(params, grads, &acts[0], &d, batch);
            } else {
                d = conv.backward(params, grads, &acts[i], &d, batch);
            }
        }
    }
}

/// Affine expansion of the latent followed by stride-2 transposed
/// convolutions back to the image size; the last layer has a sigmoid head.
#[derive(Debug, Clone)]
pub struct SpatialDecoder {
    proj: Linear,
    deconvs: Vec<ConvTranspose2d>,
}

#[derive(Debug, Clone)]
pub struct SpatialDecoderTrace {
    pub latent: Vec<f64>,
    /// Post-activation outputs: projection, then each transposed conv.
    activations: Vec<Vec<f64>>,
}

impl SpatialDecoder {
    pub fn new<R: Rng>(store: &mut ParamStore, image_size: usize, channels: &[usize], dim: usize, rng: &mut R) -> Self {
        let blocks = channels.len();
        let base = image_size >> blocks;
        let last = *channels.last().expect("at least one conv block");
        let proj = Linear::new(store, "decoder.spatial.proj", dim, last * base * base, rng);
        let mut deconvs = Vec::with_capacity(blocks);
        let mut side = base;
        for i in 0..blocks {
            let in_ch = channels[blocks - 1 - i];
            let out_ch = if i + 1 == blocks { 1 } else { channels[blocks - 2 - i] };
            side *= 2;
            let window = Window {
                channels: out_ch,
                height: side,
                width: side,
                kernel: DEC_KERNEL,
                stride: 2,
                padding: 1,
            };
            deconvs.push(ConvTranspose2d::new(store, &format!("decoder.spatial.deconv{i}"), in_ch, window, rng));
        }
        Self { proj, deconvs }
    }

    pub fn forward(&self, params: &[f64], latent: &[f64], batch: usize) -> (Vec<f64>, SpatialDecoderTrace) {
        let mut x = self.proj.forward(params, latent, batch);
        relu_inplace(&mut x);
        let mut activations = Vec::with_capacity(self.deconvs.len() + 1);
        for (i, deconv) in self.deconvs.iter().enumerate() {
            let mut y = deconv.forward(params, &x, batch);
            if i + 1 == self.deconvs.len() {
                y.iter_mut().for_each(|v| *v = sigmoid(*v));
            } else {
                relu_inplace(&mut y);
            }
            activations.push(x);
            x = y;
        }
        activations.push(x.clone());
        (
            x,
            SpatialDecoderTrace {
                latent: latent.to_vec(),
                activations,
            },
        )
    }

    /// `dout` is the gradient w.r.t. the reconstruction; returns the gradient w.r.t. the latent.
    pub fn backward(&self, params: &[f64], grads: &mut [f64], trace: &SpatialDecoderTrace, dout: &[f64], batch: usize) -> Vec<f64> {
        let acts = &trace.activations;
        let n = self.deconvs.len();
        let mut d: Vec<f64> = dout.iter().zip(&acts[n]).map(|(g, y)| g * y * (1.0 - y)).collect();
        for i in (0..n).rev() {
            d = self.deconvs[i].backward(params, grads, &acts[i], &d, batch);
            relu_backward_inplace(&acts[i], &mut d);
        }
        self.proj.backward(params, grads, &trace.latent, &d, batch)
    }
}
