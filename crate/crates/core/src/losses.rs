//! Reconstruction, constrained (pairwise cosine) and total training losses,
//! each returning its value together with the gradient w.r.t. its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NORM_EPS;
use crate::nn::ops::{dot, norm2};
use crate::sampling::PairBatch;

/// Lower clamp on `|cos|` before taking the log.
pub const COSINE_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight on the fraction-map reconstruction term.
    pub spatial: f64,
    /// Weight on the series reconstruction term.
    pub temporal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            spatial: 0.01,
            temporal: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.spatial >= 0.0 && self.temporal >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be nonnegative, got spatial={} temporal={}",
                self.spatial, self.temporal
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Reconstruction only.
    Reconstruction,
    /// Reconstruction plus the constrained term.
    Constrained,
}

impl Phase {
    /// Epochs are 1-based; the constrained term starts after `onset`.
    pub fn for_epoch(epoch: usize, onset: usize) -> Self {
        if epoch <= onset {
            Phase::Reconstruction
        } else {
            Phase::Constrained
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub rec_spatial: f64,
    pub rec_temporal: f64,
    pub constrained: f64,
    pub total: f64,
    pub pair_count: usize,
}

/// Squared error summed over every element and divided by the batch size only.
pub fn reconstruction_loss(target: &[f64], recon: &[f64], batch: usize) -> Result<(f64, Vec<f64>)> {
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if target.len() != recon.len() || !target.len().is_multiple_of(batch) {
        return Err(Error::shape("reconstruction", target.len(), recon.len()));
    }
    let inv = 1.0 / batch as f64;
    let mut loss = 0.0;
    let grad = target
        .iter()
        .zip(recon)
        .map(|(x, y)| {
            let e = y - x;
            loss += e * e;
            2.0 * e * inv
        })
        .collect();
    Ok((loss * inv, grad))
}

/// Both reconstruction terms for a batch of `batch` entities.
pub fn reconstruction_losses(
    maps: &[f64],
    maps_hat: &[f64],
    series: &[f64],
    series_hat: &[f64],
    batch: usize,
) -> Result<(f64, f64)> {
    Ok((
        reconstruction_loss(maps, maps_hat, batch)?.0,
        reconstruction_loss(series, series_hat, batch)?.0,
    ))
}

/// `-log(max(|cos(a, b)|, COSINE_FLOOR))` and its gradients w.r.t. `a` and `b`.
pub fn pair_term(a: &[f64], b: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let (na, nb) = (norm2(a), norm2(b));
    if na < NORM_EPS || nb < NORM_EPS {
        return None;
    }
    let ab = dot(a, b);
    let cos = ab.abs() / (na * nb);
    if cos < COSINE_FLOOR {
        return Some((-COSINE_FLOOR.ln(), vec![0.0; a.len()], vec![0.0; b.len()]));
    }
    let ga = a.iter().zip(b).map(|(x, y)| -y / ab + x / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(x, y)| -x / ab + y / (nb * nb)).collect();
    Some((-cos.min(1.0).ln(), ga, gb))
}

/// Contribution of a single same-class pair.
pub fn pair_contribution(a: &[f64], b: &[f64]) -> Result<f64> {
    pair_term(a, b).map(|(v, _, _)| v).ok_or(Error::ZeroNormEmbedding(0, 1))
}

/// Mean pair term over a balanced pair batch, normalised by
/// `classes × pairs_per_class`. `latent` is `rows × dim`; pairs index rows.
/// Returns the loss and its gradient w.r.t. `latent`.
pub fn constrained_loss(latent: &[f64], dim: usize, pairs: &PairBatch) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; latent.len()];
    let n = pairs.len();
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    for &(i, j) in pairs.iter() {
        let a = &latent[i * dim..(i + 1) * dim];
        let b = &latent[j * dim..(j + 1) * dim];
        let (v, ga, gb) = pair_term(a, b).ok_or(Error::ZeroNormEmbedding(i, j))?;
        total += v;
        for k in 0..dim {
            grad[i * dim + k] += ga[k] * inv;
            grad[j * dim + k] += gb[k] * inv;
        }
    }
    Ok((total * inv, grad))
}

/// Weighted sum of the terms active in `phase`.
pub fn total_loss(rec_spatial: f64, rec_temporal: f64, constrained: f64, weights: &LossWeights, phase: Phase) -> f64 {
    let rec = weights.spatial * rec_spatial + weights.temporal * rec_temporal;
    match phase {
        Phase::Reconstruction => rec,
        Phase::Constrained => rec + constrained,
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn reconstruction_examples() {
        let x = vec![0.3; 4096];
        let (l, _) = reconstruction_loss(&x, &x, 1).unwrap();
        assert_eq!(l, 0.0);
        let y: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        let (l, _) = reconstruction_loss(&x, &y, 1).unwrap();
        assert!((l - 40.96).abs() < 1e-9);
        // per-sample squared sums 2.0 and 4.0
        let target = vec![0.0; 4];
        let recon = vec![1.0, 1.0, 2.0_f64.sqrt(), 2.0_f64.sqrt()];
        let (l, _) = reconstruction_loss(&target, &recon, 2).unwrap();
        assert!((l - 3.0).abs() < 1e-12);
        assert!(matches!(reconstruction_loss(&[], &[], 0), Err(Error::EmptyBatch)));
    }

    #[test]
    fn pair_examples() {
        assert!(pair_contribution(&[0.3, -1.0], &[0.3, -1.0]).unwrap().abs() < 1e-12);
        let s = 1.0 / 2.0_f64.sqrt();
        assert!((pair_contribution(&[1.0, 0.0], &[s, s]).unwrap() - 0.346574).abs() < 1e-6);
        assert!(pair_contribution(&[1.0, 0.0], &[-1.0, 0.0]).unwrap().abs() < 1e-12);
        assert!(pair_contribution(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        // Orthogonal pair hits the floor.
        let v = pair_contribution(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v + COSINE_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        let l = total_loss(40.96, 2.0, 0.5, &w, Phase::Constrained);
        assert!((l - 2.9096).abs() < 1e-12);
        assert!((total_loss(40.96, 2.0, 0.5, &w, Phase::Reconstruction) - 2.4096).abs() < 1e-12);
        let zero = LossWeights {
            spatial: 0.0,
            temporal: 0.0,
        };
        assert_eq!(total_loss(40.96, 2.0, 0.5, &zero, Phase::Constrained), 0.5);
        assert_eq!(Phase::for_epoch(100, 100), Phase::Reconstruction);
        assert_eq!(Phase::for_epoch(101, 100), Phase::Constrained);
    }

    proptest! {
        #[test]
        fn pair_term_nonnegative_and_scale_invariant(
            a in prop::collection::vec(-3.0f64..3.0, 4),
            b in prop::collection::vec(-3.0f64..3.0, 4),
            alpha in 0.01f64..100.0,
        ) {
            prop_assume!(norm2(&a) > 1e-3 && norm2(&b) > 1e-3);
            let base = pair_contribution(&a, &b).unwrap();
            prop_assert!(base >= 0.0);
            let scaled: Vec<f64> = a.iter().map(|v| v * alpha).collect();
            let v = pair_contribution(&scaled, &b).unwrap();
            prop_assert!((v - base).abs() < 1e-9);
        }
    }
}
