//! Desk-scale stand-in for a labeled water-body corpus.
//!
//! Four templates are built so that each pair of classes that is hard to tell
//! apart in one modality is easy in the other:
//!
//! * stable and seasonal lakes are both elliptical blobs whose expected
//!   fraction-map profile is identical; only the monthly dynamics differ
//!   (flat vs. a strong 12-month cycle);
//! * rivers and farms share one irregular flooding process; only the shape
//!   differs (sinuous stripe vs. a patchwork of rectangles).

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Entity, LabelStore, Provenance, WaterBodyStack};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthClass {
    Farm = 0,
    River = 1,
    StableLake = 2,
    SeasonalLake = 3,
}

impl SynthClass {
    pub const ALL: [SynthClass; 4] = [Self::Farm, Self::River, Self::StableLake, Self::SeasonalLake];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Entities per class, in `Farm, River, StableLake, SeasonalLake` order.
    pub per_class: Vec<usize>,
    /// Months per stack.
    pub frames: usize,
    /// Raw frame heights and widths are drawn from `[min_size, max_size]`.
    pub min_size: usize,
    pub max_size: usize,
    /// Probability of flipping any pixel in any frame.
    pub pixel_noise: f64,
    /// Per-pixel, per-month jitter of lake boundaries (in normalised radius units).
    pub boundary_jitter: f64,
    /// Standard deviation of the shared river/farm flooding level.
    pub flood_variability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_class: vec![100; 4],
            frames: 48,
            min_size: 24,
            max_size: 32,
            pixel_noise: 0.002,
            boundary_jitter: 0.08,
            flood_variability: 0.22,
        }
    }
}

impl SynthConfig {
    pub fn balanced(per_class: usize) -> Self {
        Self {
            per_class: vec![per_class; 4],
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.per_class.len() != SynthClass::ALL.len() {
            return Err(Error::InvalidConfig(format!(
                "per_class needs {} counts, got {}",
                SynthClass::ALL.len(),
                self.per_class.len()
            )));
        }
        if self.per_class.contains(&0) {
            return Err(Error::InvalidConfig("per-class counts must be positive".into()));
        }
        if self.frames == 0 {
            return Err(Error::InvalidConfig("frames must be positive".into()));
        }
        if self.min_size < 8 || self.min_size > self.max_size {
            return Err(Error::InvalidConfig(format!(
                "need 8 <= min_size <= max_size, got {}..{}",
                self.min_size, self.max_size
            )));
        }
        if !(0.0..0.5).contains(&self.pixel_noise) {
            return Err(Error::InvalidConfig("pixel_noise must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Raw stacks for every entity with their classes, ids `e00000..` in a
/// seeded random order.
pub fn generate_stacks(config: &SynthConfig, seed: u64) -> Result<Vec<(WaterBodyStack, usize)>> {
    config.validate()?;
    let mut order: Vec<(SynthClass, usize)> = SynthClass::ALL
        .iter()
        .zip(&config.per_class)
        .flat_map(|(c, n)| (0..*n).map(move |k| (*c, k)))
        .collect();
    order.shuffle(&mut rng_for(seed, &[stream::SYNTH]));
    order
        .into_iter()
        .enumerate()
        .map(|(n, (class, k))| {
            let mut rng = rng_for(seed, &[stream::SYNTH, class as u64, k as u64]);
            Ok((synth_stack(&format!("e{n:05}"), class, config, &mut rng)?, class as usize))
        })
        .collect()
}

/// Generates raw stacks and preprocesses them through the regular modality
/// pipeline. Every entity carries its ground-truth label.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    let stacks = generate_stacks(config, seed)?;
    let mut entities = Vec::with_capacity(stacks.len());
    let mut labels = LabelStore::default();
    for (stack, class) in stacks {
        entities.push(Entity::from_stack(&stack)?);
        labels.insert(stack.entity_id(), class, Provenance::Seed)?;
    }
    Dataset::new(entities, labels)
}

/// One raw stack of the requested class.
pub(crate) fn synth_stack(id: &str, class: SynthClass, config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<WaterBodyStack> {
    let h = rng.random_range(config.min_size..=config.max_size);
    let w = rng.random_range(config.min_size..=config.max_size);
    let t_len = config.frames;
    let side = h.min(w) as f64;
    let cy = h as f64 / 2.0 + rng.random_range(-0.08..0.08) * side;
    let cx = w as f64 / 2.0 + rng.random_range(-0.08..0.08) * side;

    let mut pixels = vec![0u8; t_len * h * w];
    match class {
        SynthClass::StableLake | SynthClass::SeasonalLake => {
            let a = side * rng.random_range(0.28..0.42);
            let b = a * rng.random_range(0.65..1.0);
            let theta = rng.random_range(0.0..PI);
            let (sin, cos) = theta.sin_cos();
            let s_min = rng.random_range(0.15..0.3);
            let phase = rng.random_range(0.0..2.0 * PI);
            let jitter = config.boundary_jitter;
            let radius = |r: usize, c: usize| {
                let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                ((u / a).powi(2) + (v / b).powi(2)).sqrt()
            };
            for t in 0..t_len {
                let frame = &mut pixels[t * h * w..(t + 1) * h * w];
                let extent = s_min + (1.0 - s_min) * (0.5 + 0.5 * (2.0 * PI * t as f64 / 12.0 + phase).cos());
                for r in 0..h {
                    for c in 0..w {
                        let rho = radius(r, c);
                        let wet = if class == SynthClass::SeasonalLake {
                            rho <= extent + jitter * rng.random_range(-1.0..1.0)
                        } else {
                            // Same expected frequency profile as the seasonal
                            // cycle, but drawn independently per pixel, so the
                            // total area stays nearly constant.
                            let rho = rho + jitter * rng.random_range(-1.0..1.0);
                            rng.random::<f64>() < cycle_coverage(rho, s_min)
                        };
                        frame[r * w + c] = u8::from(wet);
                    }
                }
            }
        }
        SynthClass::River | SynthClass::Farm => {
            let levels = flood_levels(t_len, config.flood_variability, rng);
            if class == SynthClass::River {
                let alpha = rng.random_range(0.0..PI);
                let (sin, cos) = alpha.sin_cos();
                let amp = side * rng.random_range(0.0..0.15);
                let wavelength = side * rng.random_range(0.6..1.5);
                let psi = rng.random_range(0.0..2.0 * PI);
                let half_width = side * rng.random_range(0.07..0.12);
                let half_len = side * rng.random_range(0.4..0.55);
                for (t, level) in levels.iter().enumerate() {
                    let frame = &mut pixels[t * h * w..(t + 1) * h * w];
                    for r in 0..h {
                        for c in 0..w {
                            let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
                            let u = dx * cos + dy * sin;
                            let v = -dx * sin + dy * cos;
                            let centre = amp * (2.0 * PI * u / wavelength + psi).sin();
                            let wet = u.abs() <= half_len && (v - centre).abs() <= half_width * level;
                            frame[r * w + c] = u8::from(wet);
                        }
                    }
                }
            } else {
                let plots = rng.random_range(3..=6);
                let rects: Vec<(f64, f64, f64, f64, bool)> = (0..plots)
                    .map(|_| {
                        let ph = side * rng.random_range(0.12..0.25);
                        let pw = side * rng.random_range(0.12..0.25);
                        let top = cy + rng.random_range(-0.35..0.35) * side - ph / 2.0;
                        let left = cx + rng.random_range(-0.35..0.35) * side - pw / 2.0;
                        (top, left, ph, pw, rng.random::<bool>())
                    })
                    .collect();
                for (t, level) in levels.iter().enumerate() {
                    let frame = &mut pixels[t * h * w..(t + 1) * h * w];
                    for &(top, left, ph, pw, vertical) in &rects {
                        for r in 0..h {
                            for c in 0..w {
                                let (y, x) = (r as f64 + 0.5 - top, c as f64 + 0.5 - left);
                                if y < 0.0 || x < 0.0 || y > ph || x > pw {
                                    continue;
                                }
                                let filled = if vertical { y <= ph * level } else { x <= pw * level };
                                if filled {
                                    frame[r * w + c] = 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if config.pixel_noise > 0.0 {
        for p in pixels.iter_mut() {
            if rng.random::<f64>() < config.pixel_noise {
                *p ^= 1;
            }
        }
    }
    WaterBodyStack::new(id, t_len, h, w, pixels)
}

/// Fraction of a cosine cycle between `s_min` and 1 during which the extent
/// reaches normalised radius `rho`.
fn cycle_coverage(rho: f64, s_min: f64) -> f64 {
    if rho <= s_min {
        1.0
    } else if rho >= 1.0 {
        0.0
    } else {
        let v = 2.0 * (rho - s_min) / (1.0 - s_min) - 1.0;
        v.clamp(-1.0, 1.0).acos() / PI
    }
}

/// Shared irregular flooding level: a clamped AR(1) process.
fn flood_levels(len: usize, variability: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut z: f64 = StandardNormal.sample(rng);
    (0..len)
        .map(|_| {
            let eps: f64 = StandardNormal.sample(rng);
            z = 0.6 * z + 0.8 * eps;
            (0.6 + variability * z).clamp(0.15, 1.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let cfg = SynthConfig {
            per_class: vec![5, 6, 7, 8],
            frames: 24,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg, 7).unwrap();
        let b = generate_synthetic(&cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 26);
        assert_eq!(a.labels().class_counts(), vec![5, 6, 7, 8]);
        assert_eq!(a.series_len(), 24);
        assert_ne!(a, generate_synthetic(&cfg, 8).unwrap());
    }

    #[test]
    fn rejects_nonpositive_counts() {
        let cfg = SynthConfig {
            per_class: vec![5, 0, 7, 8],
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic(&cfg, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn seasonal_series_swings_below_a_fifth() {
        let cfg = SynthConfig::default();
        for k in 0..40 {
            let mut rng = rng_for(11, &[k]);
            let stack = synth_stack("s", SynthClass::SeasonalLake, &cfg, &mut rng).unwrap();
            let series = crate::dataset::compute_surface_area_series(&stack);
            let v = series.values();
            assert!(v.iter().any(|x| *x < 0.2), "entity {k}: min {:?}", v.iter().copied().fold(1.0, f64::min));
            assert!(v.contains(&1.0));
        }
    }

    #[test]
    fn stable_series_stays_high() {
        let cfg = SynthConfig::default();
        for k in 0..20 {
            let mut rng = rng_for(12, &[k]);
            let stack = synth_stack("s", SynthClass::StableLake, &cfg, &mut rng).unwrap();
            let series = crate::dataset::compute_surface_area_series(&stack);
            let min = series.values().iter().copied().fold(1.0, f64::min);
            assert!(min > 0.6, "entity {k}: min {min}");
        }
    }

    #[test]
    fn coverage_profile_endpoints() {
        assert_eq!(cycle_coverage(0.1, 0.2), 1.0);
        assert_eq!(cycle_coverage(1.2, 0.2), 0.0);
        assert!((cycle_coverage(0.6, 0.2) - 0.5).abs() < 1e-12);
    }
}
