use log::warn;

use super::{FractionMap, SurfaceAreaSeries, WaterBodyStack, FRACTION_MAP_SIZE};
use crate::error::{Error, Result};

/// Per-pixel temporal mean, zero-padded to a square, then nearest-neighbour
/// resized to [`FRACTION_MAP_SIZE`].
pub fn compute_fraction_map(stack: &WaterBodyStack) -> Result<FractionMap> {
    if stack.frames() == 0 {
        return Err(Error::EmptyStack(stack.entity_id().to_string()));
    }
    let (h, w) = (stack.height(), stack.width());
    let mut mean = vec![0.0; h * w];
    for t in 0..stack.frames() {
        for (m, p) in mean.iter_mut().zip(stack.frame(t)) {
            *m += f64::from(*p);
        }
    }
    let inv = 1.0 / stack.frames() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let (side, square) = pad_to_square(&mean, h, w);
    FractionMap::new(FRACTION_MAP_SIZE, resize_nearest(&square, side, FRACTION_MAP_SIZE))
}

/// Pads an `h × w` image with zeros to `s × s`, `s = max(h, w)`. The padding
/// is split evenly; an odd remainder goes to the bottom / right edge.
pub fn pad_to_square(image: &[f64], h: usize, w: usize) -> (usize, Vec<f64>) {
    let side = h.max(w);
    let top = (side - h) / 2;
    let left = (side - w) / 2;
    let mut out = vec![0.0; side * side];
    for r in 0..h {
        out[(r + top) * side + left..][..w].copy_from_slice(&image[r * w..(r + 1) * w]);
    }
    (side, out)
}

/// Nearest-neighbour resampling of a square image, sampling each output
/// pixel at the source pixel containing its centre.
pub fn resize_nearest(image: &[f64], side: usize, target: usize) -> Vec<f64> {
    let src = |i: usize| (((2 * i + 1) * side) / (2 * target)).min(side - 1);
    let mut out = Vec::with_capacity(target * target);
    for r in 0..target {
        let row = &image[src(r) * side..][..side];
        out.extend((0..target).map(|c| row[src(c)]));
    }
    out
}

/// Water-pixel count per frame divided by the maximum count. A stack with
/// no water at all yields an all-zero series and a warning.
pub fn compute_surface_area_series(stack: &WaterBodyStack) -> SurfaceAreaSeries {
    let counts: Vec<f64> = (0..stack.frames())
        .map(|t| stack.frame(t).iter().map(|p| u32::from(*p)).sum::<u32>() as f64)
        .collect();
    let max = counts.iter().copied().fold(0.0, f64::max);
    let values = if max == 0.0 {
        warn!("entity `{}` never contains water; surface area series is all zeros", stack.entity_id());
        counts
    } else {
        counts.into_iter().map(|c| c / max).collect()
    };
    SurfaceAreaSeries { values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(frames: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> u8) -> WaterBodyStack {
        let mut px = Vec::new();
        for t in 0..frames {
            for r in 0..h {
                for c in 0..w {
                    px.push(f(t, r, c));
                }
            }
        }
        WaterBodyStack::new("e", frames, h, w, px).unwrap()
    }

    #[test]
    fn all_water_gives_ones() {
        let fm = compute_fraction_map(&stack(3, 5, 5, |_, _, _| 1)).unwrap();
        assert!(fm.pixels().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn single_pixel_half_the_time() {
        let fm = compute_fraction_map(&stack(2, 2, 2, |t, r, c| u8::from(t == 0 && r == 0 && c == 0))).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let expect = if r < 32 && c < 32 { 0.5 } else { 0.0 };
                assert_eq!(fm.get(r, c), expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn padding_puts_extra_row_at_bottom() {
        // 2 x 5: three padding rows, one on top, two at the bottom.
        let (side, out) = pad_to_square(&[1.0; 10], 2, 5);
        assert_eq!(side, 5);
        let rows: Vec<f64> = out.chunks(5).map(|r| r.iter().sum()).collect();
        assert_eq!(rows, vec![0.0, 5.0, 5.0, 0.0, 0.0]);
        // 3 x 5: one row each side.
        let (_, out) = pad_to_square(&[1.0; 15], 3, 5);
        let rows: Vec<f64> = out.chunks(5).map(|r| r.iter().sum()).collect();
        assert_eq!(rows, vec![0.0, 5.0, 5.0, 5.0, 0.0]);
        // 4 x 1: columns padded, extra on the right.
        let (_, out) = pad_to_square(&[1.0; 4], 4, 1);
        assert_eq!(&out[..4], &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn surface_area_normalisation() {
        let counts = [10usize, 20, 5];
        let s = stack(3, 5, 5, |t, r, c| u8::from(r * 5 + c < counts[t]));
        assert_eq!(compute_surface_area_series(&s).values(), &[0.5, 1.0, 0.25]);
        let s = stack(3, 3, 3, |_, r, c| u8::from(r * 3 + c < 7));
        assert_eq!(compute_surface_area_series(&s).values(), &[1.0, 1.0, 1.0]);
        let s = stack(3, 2, 2, |_, _, _| 0);
        assert_eq!(compute_surface_area_series(&s).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn series_uses_unpadded_counts() {
        // Non-square stack: padding must not change the counts.
        let s = stack(2, 3, 7, |t, _, c| u8::from(c <= t * 3));
        assert_eq!(compute_surface_area_series(&s).values(), &[0.25, 1.0]);
    }
}
