use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{grayscale, image_dims, Mask};
use crate::numerics::{Element, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForegroundMode {
    /// Otsu threshold on intensity, background polarity from the border.
    Object,
    /// A random rectangle covering 25–100% of each side.
    Texture,
}

pub fn foreground_mask<F: Element>(image: &Tensor<F>, mode: ForegroundMode, rng: &mut Rng) -> Result<Mask> {
    let (_, h, w) = image_dims(image)?;
    match mode {
        ForegroundMode::Object => object_foreground(&grayscale(image)?, h, w),
        ForegroundMode::Texture => {
            let draws = [rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()];
            Ok(rectangle_from_draws(h, w, draws))
        }
    }
}

/// Maps four uniform draws in `[0, 1)` to a rectangle: two side lengths,
/// then two offsets. Draws close to one give the full extent.
pub fn rectangle_from_draws(h: usize, w: usize, u: [f64; 4]) -> Mask {
    let side = |len: usize, draw: f64| {
        let min = len.div_ceil(4).max(1);
        (min + (draw * (len - min + 1) as f64) as usize).min(len)
    };
    let (rh, rw) = (side(h, u[0]), side(w, u[1]));
    let top = ((u[2] * (h - rh + 1) as f64) as usize).min(h - rh);
    let left = ((u[3] * (w - rw + 1) as f64) as usize).min(w - rw);
    Mask::from_fn(h, w, |y, x| y >= top && y < top + rh && x >= left && x < left + rw)
}

/// Otsu threshold over a 256-bin histogram of intensities in `[−1, 1]`.
/// Returns the bin index `k` such that bins `> k` form the bright class, or
/// `None` when the image has a single intensity level.
pub fn otsu_bin(gray: &[f64]) -> Option<usize> {
    let bins: Vec<usize> = gray.iter().map(|&v| intensity_bin(v)).collect();
    let mut hist = [0usize; 256];
    for &b in &bins {
        hist[b] += 1;
    }
    let total = gray.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best: Option<(usize, f64)> = None;
    for (k, &c) in hist.iter().enumerate().take(255) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mean_gap = sum0 / w0 - (sum_all - sum0) / w1;
        let between = w0 * w1 * mean_gap * mean_gap;
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((k, between));
        }
    }
    best.map(|(k, _)| k)
}

pub(crate) fn intensity_bin(v: f64) -> usize {
    (((v + 1.0) * 127.5).round()).clamp(0.0, 255.0) as usize
}

fn object_foreground(gray: &[f64], h: usize, w: usize) -> Result<Mask> {
    let Some(k) = otsu_bin(gray) else {
        return Ok(Mask::empty(h, w));
    };
    let bright: Vec<bool> = gray.iter().map(|&v| intensity_bin(v) > k).collect();
    let border: Vec<usize> = (0..h * w)
        .filter(|i| {
            let (y, x) = (i / w, i % w);
            y == 0 || x == 0 || y == h - 1 || x == w - 1
        })
        .collect();
    let bright_border = border.iter().filter(|&&i| bright[i]).count();
    let background_is_bright = 2 * bright_border > border.len();
    Mask::new(h, w, bright.iter().map(|&b| b != background_is_bright).collect())
}
