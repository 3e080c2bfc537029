//! Dual-branch autoencoder: a convolutional branch for fraction maps, a
//! recurrent branch for surface-area series, and a shared latent space
//! produced by the combination operator.

mod combine;
mod spatial;
mod temporal;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use combine::{fuse_activations, unit_or_zero, CombineTrace, Combiner, NORM_EPS};
pub use spatial::{SpatialDecoder, SpatialDecoderTrace, SpatialEncoder, SpatialEncoderTrace};
pub use temporal::{TemporalDecoder, TemporalDecoderTrace, TemporalEncoder, TemporalEncoderTrace};

use crate::dataset::{Dataset, FractionMap, SurfaceAreaSeries};
use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Which input branches feed the latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Modalities {
    #[default]
    Both,
    SpatialOnly,
    TemporalOnly,
}

impl Modalities {
    pub fn spatial(self) -> bool {
        self != Modalities::TemporalOnly
    }

    pub fn temporal(self) -> bool {
        self != Modalities::SpatialOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent and per-modality embedding dimension; also the LSTM hidden size.
    pub embed_dim: usize,
    /// Side of the square input map; must be divisible by `2^spatial_channels.len()`.
    pub image_size: usize,
    /// Series length reconstructed by the temporal decoder.
    pub series_len: usize,
    /// Output channels of each stride-2 conv block.
    pub spatial_channels: Vec<usize>,
    pub modalities: Modalities,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            image_size: crate::dataset::FRACTION_MAP_SIZE,
            series_len: 442,
            spatial_channels: vec![16, 32, 64, 64],
            modalities: Modalities::Both,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::InvalidConfig("embed_dim must be positive".into()));
        }
        if self.series_len == 0 {
            return Err(Error::InvalidConfig("series_len must be positive".into()));
        }
        if self.spatial_channels.is_empty() || self.spatial_channels.contains(&0) {
            return Err(Error::InvalidConfig("spatial_channels must be non-empty and positive".into()));
        }
        let factor = 1usize << self.spatial_channels.len();
        if self.image_size == 0 || !self.image_size.is_multiple_of(factor) {
            return Err(Error::InvalidConfig(format!(
                "image_size {} is not divisible by 2^{}",
                self.image_size,
                self.spatial_channels.len()
            )));
        }
        Ok(())
    }

    /// Checks that `dataset` carries modalities of the shapes this model expects.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.is_empty() {
            return Ok(());
        }
        if self.modalities.spatial() && dataset.map_size() != self.image_size {
            return Err(Error::shape("fraction map size", self.image_size, dataset.map_size()));
        }
        if self.modalities.temporal() && dataset.series_len() != self.series_len {
            return Err(Error::shape("series length", self.series_len, dataset.series_len()));
        }
        Ok(())
    }
}

/// A batch of inputs laid out contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    /// `size × image_size²`
    pub maps: Vec<f64>,
    /// `size × series_len`
    pub series: Vec<f64>,
}

impl Batch {
    pub fn gather(dataset: &Dataset, indices: &[usize]) -> Self {
        let mut maps = Vec::with_capacity(indices.len() * dataset.map_size().pow(2));
        let mut series = Vec::with_capacity(indices.len() * dataset.series_len());
        for &i in indices {
            let e = &dataset.entities()[i];
            maps.extend_from_slice(e.fraction_map.pixels());
            series.extend_from_slice(e.series.values());
        }
        Self {
            size: indices.len(),
            maps,
            series,
        }
    }
}

/// Encoder branches plus the combination operator.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: ModelConfig,
    pub spatial: Option<SpatialEncoder>,
    pub temporal: Option<TemporalEncoder>,
    pub combiner: Combiner,
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub spatial: Option<SpatialEncoderTrace>,
    pub temporal: Option<TemporalEncoderTrace>,
    pub combine: CombineTrace,
}

impl EncoderTrace {
    pub fn latent(&self) -> &[f64] {
        &self.combine.latent
    }
}

impl Encoder {
    /// Registers all encoder and combiner parameters in `store`.
    pub fn new<R: Rng>(config: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let spatial = config
            .modalities
            .spatial()
            .then(|| SpatialEncoder::new(store, config.image_size, &config.spatial_channels, d, rng));
        let temporal = config.modalities.temporal().then(|| TemporalEncoder::new(store, d, rng));
        let combiner = Combiner::new(store, d, spatial.is_some(), temporal.is_some(), rng);
        Ok(Self {
            config: config.clone(),
            spatial,
            temporal,
            combiner,
        })
    }

    pub fn forward(&self, params: &[f64], batch: &Batch) -> EncoderTrace {
        let n = batch.size;
        let spatial = self.spatial.as_ref().map(|enc| enc.forward(params, &batch.maps, n));
        let temporal = self
            .temporal
            .as_ref()
            .map(|enc| enc.forward(params, &batch.series, self.config.series_len, n));
        let combine = self.combiner.forward(
            params,
            spatial.as_ref().map(|(h, _)| h.as_slice()),
            temporal.as_ref().map(|(h, _)| h.as_slice()),
            n,
        );
        EncoderTrace {
            spatial: spatial.map(|(_, t)| t),
            temporal: temporal.map(|(_, t)| t),
            combine,
        }
    }

    pub fn backward(&self, params: &[f64], grads: &mut [f64], trace: &EncoderTrace, dlatent: &[f64], batch: usize) {
        let (ds, dt) = self.combiner.backward(params, grads, &trace.combine, dlatent, batch);
        if let (Some(enc), Some(tr), Some(d)) = (&self.spatial, &trace.spatial, ds) {
            enc.backward(params, grads, tr, &d, batch);
        }
        if let (Some(enc), Some(tr), Some(d)) = (&self.temporal, &trace.temporal, dt) {
            enc.backward(params, grads, tr, &d, batch);
        }
    }

    /// Latent embeddings for `indices` of `dataset`, computed in chunks.
    pub fn embed(&self, params: &[f64], dataset: &Dataset, indices: &[usize], chunk: usize) -> Vec<Vec<f64>> {
        let d = self.config.embed_dim;
        let mut rows = Vec::with_capacity(indices.len());
        for part in indices.chunks(chunk.max(1)) {
            let trace = self.forward(params, &Batch::gather(dataset, part));
            rows.extend(trace.latent().chunks_exact(d).map(<[f64]>::to_vec));
        }
        rows
    }
}

/// Full autoencoder owning its parameters.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub spatial_decoder: Option<SpatialDecoder>,
    pub temporal_decoder: Option<TemporalDecoder>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encoder: EncoderTrace,
    pub spatial: Option<(Vec<f64>, SpatialDecoderTrace)>,
    pub temporal: Option<(Vec<f64>, TemporalDecoderTrace)>,
}

impl ForwardTrace {
    pub fn latent(&self) -> &[f64] {
        self.encoder.latent()
    }

    pub fn recon_spatial(&self) -> Option<&[f64]> {
        self.spatial.as_ref().map(|(r, _)| r.as_slice())
    }

    pub fn recon_temporal(&self) -> Option<&[f64]> {
        self.temporal.as_ref().map(|(r, _)| r.as_slice())
    }
}

impl Autoencoder {
    /// Fresh model with seeded fan-in-scaled uniform initialisation.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&config, &mut params, rng)?;
        let d = config.embed_dim;
        let spatial_decoder = config
            .modalities
            .spatial()
            .then(|| SpatialDecoder::new(&mut params, config.image_size, &config.spatial_channels, d, rng));
        let temporal_decoder = config.modalities.temporal().then(|| TemporalDecoder::new(&mut params, d, rng));
        Ok(Self {
            config,
            params,
            encoder,
            spatial_decoder,
            temporal_decoder,
        })
    }

    /// Rebuilds the architecture for `config` and loads `params` into it.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut rng = crate::rng::rng_for(0, &[]);
        let mut model = Self::new(config, &mut rng)?;
        if model.params.entries() != params.entries() {
            return Err(Error::InvalidConfig("parameter layout does not match the model configuration".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn forward(&self, batch: &Batch, teacher_forcing: bool) -> ForwardTrace {
        self.forward_with(self.params.values(), batch, teacher_forcing)
    }

    /// Forward pass reading weights from `params` (same layout as `self.params`).
    pub fn forward_with(&self, params: &[f64], batch: &Batch, teacher_forcing: bool) -> ForwardTrace {
        let n = batch.size;
        let encoder = self.encoder.forward(params, batch);
        let latent = encoder.latent();
        let spatial = self.spatial_decoder.as_ref().map(|dec| dec.forward(params, latent, n));
        let targets = teacher_forcing.then_some(batch.series.as_slice());
        let temporal = self
            .temporal_decoder
            .as_ref()
            .map(|dec| dec.forward(params, latent, self.config.series_len, n, targets));
        ForwardTrace {
            encoder,
            spatial,
            temporal,
        }
    }

    /// Backpropagates reconstruction gradients plus any direct latent
    /// gradient `dlatent` into `grads`.
    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        trace: &ForwardTrace,
        drecon_spatial: Option<&[f64]>,
        drecon_temporal: Option<&[f64]>,
        dlatent: Option<&[f64]>,
        batch: usize,
    ) {
        let d = self.config.embed_dim;
        let mut dh = dlatent.map_or_else(|| vec![0.0; batch * d], <[f64]>::to_vec);
        if let (Some(dec), Some((_, tr)), Some(g)) = (&self.spatial_decoder, &trace.spatial, drecon_spatial) {
            let dl = dec.backward(params, grads, tr, g, batch);
            dh.iter_mut().zip(&dl).for_each(|(a, b)| *a += b);
        }
        if let (Some(dec), Some((_, tr)), Some(g)) = (&self.temporal_decoder, &trace.temporal, drecon_temporal) {
            let dl = dec.backward(params, grads, tr, g, self.config.series_len, batch);
            dh.iter_mut().zip(&dl).for_each(|(a, b)| *a += b);
        }
        self.encoder.backward(params, grads, &trace.encoder, &dh, batch);
    }

    fn single_map(&self, fm: &FractionMap) -> Result<Batch> {
        if fm.size() != self.config.image_size {
            return Err(Error::shape("fraction map size", self.config.image_size, fm.size()));
        }
        Ok(Batch {
            size: 1,
            maps: fm.pixels().to_vec(),
            series: vec![0.0; self.config.series_len],
        })
    }

    fn single_series(&self, ts: &SurfaceAreaSeries) -> Result<Vec<f64>> {
        if ts.len() != self.config.series_len {
            return Err(Error::shape("series length", self.config.series_len, ts.len()));
        }
        Ok(ts.values().to_vec())
    }

    /// Raw spatial embedding (before the combination operator).
    pub fn encode_spatial(&self, fm: &FractionMap) -> Result<Vec<f64>> {
        let enc = self
            .encoder
            .spatial
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("spatial branch disabled".into()))?;
        let batch = self.single_map(fm)?;
        Ok(enc.forward(self.params.values(), &batch.maps, 1).0)
    }

    /// Raw temporal embedding: sum of both directions' terminal states.
    pub fn encode_temporal(&self, ts: &SurfaceAreaSeries) -> Result<Vec<f64>> {
        let enc = self
            .encoder
            .temporal
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("temporal branch disabled".into()))?;
        let series = self.single_series(ts)?;
        Ok(enc.forward(self.params.values(), &series, series.len(), 1).0)
    }

    /// Applies the combination operator to raw embeddings.
    pub fn combine(&self, spatial: Option<&[f64]>, temporal: Option<&[f64]>) -> Result<Vec<f64>> {
        let d = self.config.embed_dim;
        for v in [spatial, temporal].into_iter().flatten() {
            if v.len() != d {
                return Err(Error::shape("raw embedding", d, v.len()));
            }
        }
        Ok(self.encoder.combiner.forward(self.params.values(), spatial, temporal, 1).latent)
    }

    fn check_latent(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.config.embed_dim {
            return Err(Error::shape("latent", self.config.embed_dim, h.len()));
        }
        Ok(())
    }

    pub fn decode_spatial(&self, h: &[f64]) -> Result<FractionMap> {
        self.check_latent(h)?;
        let dec = self
            .spatial_decoder
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("spatial branch disabled".into()))?;
        FractionMap::new(self.config.image_size, dec.forward(self.params.values(), h, 1).0)
    }

    pub fn decode_temporal(&self, h: &[f64], len: usize) -> Result<SurfaceAreaSeries> {
        self.check_latent(h)?;
        if len == 0 {
            return Err(Error::shape("series length", ">= 1", 0));
        }
        let dec = self
            .temporal_decoder
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("temporal branch disabled".into()))?;
        SurfaceAreaSeries::new(dec.forward(self.params.values(), h, len, 1, None).0)
    }

    /// Single-entity forward pass: `(reconstructed map, reconstructed series, latent)`.
    pub fn forward_entity(&self, fm: &FractionMap, ts: &SurfaceAreaSeries) -> Result<(Option<FractionMap>, Option<SurfaceAreaSeries>, Vec<f64>)> {
        let mut batch = self.single_map(fm)?;
        batch.series = self.single_series(ts)?;
        let trace = self.forward(&batch, false);
        let map = trace
            .recon_spatial()
            .map(|r| FractionMap::new(self.config.image_size, r.to_vec()))
            .transpose()?;
        let series = trace.recon_temporal().map(|r| SurfaceAreaSeries::new(r.to_vec())).transpose()?;
        Ok((map, series, trace.latent().to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::norm2;
    use crate::rng::rng_for;

    fn tiny(modalities: Modalities) -> Autoencoder {
        let cfg = ModelConfig {
            embed_dim: 8,
            image_size: 16,
            series_len: 10,
            spatial_channels: vec![2, 3],
            modalities,
        };
        Autoencoder::new(cfg, &mut rng_for(5, &[])).unwrap()
    }

    fn series(len: usize) -> SurfaceAreaSeries {
        SurfaceAreaSeries::new((0..len).map(|t| (t as f64 * 0.7).sin().abs()).collect()).unwrap()
    }

    #[test]
    fn shapes_and_bounds() {
        let m = tiny(Modalities::Both);
        let fm = FractionMap::zeros(16);
        let hs = m.encode_spatial(&fm).unwrap();
        assert_eq!(hs.len(), 8);
        assert!(hs.iter().all(|v| v.is_finite()));
        let ht = m.encode_temporal(&series(10)).unwrap();
        assert_eq!(ht.len(), 8);
        let h = m.combine(Some(&hs), Some(&ht)).unwrap();
        assert!(norm2(&h) <= 2.0 + 1e-6);
        let rec = m.decode_spatial(&h).unwrap();
        assert_eq!(rec.size(), 16);
        let ts = m.decode_temporal(&h, 25).unwrap();
        assert_eq!(ts.len(), 25);
        assert!(ts.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = tiny(Modalities::Both);
        assert!(matches!(m.encode_spatial(&FractionMap::zeros(8)), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(m.encode_temporal(&series(9)), Err(Error::ShapeMismatch { .. })));
        assert!(m.decode_spatial(&[0.0; 7]).is_err());
    }

    #[test]
    fn image_size_must_divide() {
        let cfg = ModelConfig {
            image_size: 12,
            spatial_channels: vec![2, 2, 2],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ablations_use_single_addend() {
        let fm = FractionMap::new(16, (0..256).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let ts = series(10);
        let s = tiny(Modalities::SpatialOnly);
        assert!(s.temporal_decoder.is_none());
        let (map, rec_t, h) = s.forward_entity(&fm, &ts).unwrap();
        assert!(map.is_some() && rec_t.is_none());
        let raw = s.encode_spatial(&fm).unwrap();
        assert_eq!(h, s.combine(Some(&raw), None).unwrap());
        let n = norm2(&h);
        assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);

        let t = tiny(Modalities::TemporalOnly);
        let (map, rec_t, h) = t.forward_entity(&fm, &ts).unwrap();
        assert!(map.is_none() && rec_t.is_some());
        let raw = t.encode_temporal(&ts).unwrap();
        assert_eq!(h, t.combine(None, Some(&raw)).unwrap());
    }

    #[test]
    fn same_seed_same_model() {
        let a = tiny(Modalities::Both);
        let b = tiny(Modalities::Both);
        assert_eq!(a.params, b.params);
        let fm = FractionMap::new(16, (0..256).map(|i| (i % 5) as f64 / 5.0).collect()).unwrap();
        assert_eq!(a.forward_entity(&fm, &series(10)).unwrap(), b.forward_entity(&fm, &series(10)).unwrap());
        let other = Autoencoder::new(a.config.clone(), &mut rng_for(6, &[])).unwrap();
        assert_ne!(a.params.values(), other.params.values());
    }
}
