//! Synthetic anomalies: Perlin masks gated by a foreground, filled with a
//! blend of the normal image and a foreign appearance.

mod appearance;
mod foreground;
mod perlin;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::{image_dims, Mask};
use crate::numerics::{Element, Rng, Tensor};

pub use appearance::{appearance_source, apply_augment, random_augment, Augment, TextureCorpus};
pub use foreground::{foreground_mask, otsu_bin, rectangle_from_draws, ForegroundMode};
pub use perlin::{perlin2d, PerlinField};

/// A training example: image `[C, H, W]`, its anomaly mask and label.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample<F> {
    pub image: Tensor<F>,
    pub mask: Mask,
    pub label: u8,
}

impl<F: Element> SynthSample<F> {
    /// An untouched normal image with an empty mask.
    pub fn normal(image: Tensor<F>) -> Result<Self> {
        let (_, h, w) = image_dims(&image)?;
        Ok(SynthSample {
            image,
            mask: Mask::empty(h, w),
            label: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SynthConfig {
    pub threshold_min: f64,
    pub threshold_max: f64,
    /// Smallest accepted mask area as a fraction of the foreground.
    pub min_coverage: f64,
    pub max_coverage: f64,
    pub opacity_min: f64,
    pub opacity_max: f64,
    /// Lattice resolutions; one is drawn per sample and used on both axes.
    pub perlin_resolutions: Vec<usize>,
    pub foreground: ForegroundMode,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            threshold_min: 0.3,
            threshold_max: 0.7,
            min_coverage: 0.001,
            max_coverage: 0.4,
            opacity_min: 0.1,
            opacity_max: 0.8,
            perlin_resolutions: vec![2, 4, 8],
            foreground: ForegroundMode::Object,
            max_attempts: 200,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.threshold_min <= self.threshold_max,
            "threshold-min {} exceeds threshold-max {}",
            self.threshold_min,
            self.threshold_max
        );
        ensure!(
            0.0 <= self.min_coverage && self.min_coverage <= self.max_coverage && self.max_coverage <= 1.0,
            "coverage bounds must satisfy 0 <= min <= max <= 1"
        );
        ensure!(
            0.0 <= self.opacity_min && self.opacity_min <= self.opacity_max && self.opacity_max <= 1.0,
            "opacity bounds must satisfy 0 <= min <= max <= 1"
        );
        ensure!(
            !self.perlin_resolutions.is_empty() && self.perlin_resolutions.iter().all(|&r| r > 0),
            "perlin-resolutions must be a nonempty list of positive integers"
        );
        ensure!(self.max_attempts > 0, "max-attempts must be positive");
        Ok(())
    }
}

/// `M = (field > threshold) ∧ F`.
pub fn make_anomaly_mask(field: &PerlinField, threshold: f64, foreground: &Mask) -> Result<Mask> {
    if (field.height(), field.width()) != (foreground.height(), foreground.width()) {
        return Err(Error::ShapeMismatch {
            expected: vec![foreground.height(), foreground.width()],
            actual: vec![field.height(), field.width()],
        });
    }
    let bits = field
        .values()
        .iter()
        .zip(foreground.bits())
        .map(|(&v, &f)| f && v > threshold)
        .collect();
    Mask::new(field.height(), field.width(), bits)
}

/// Blends `A` into `N` under `M` with opacity `β`: inside the mask each pixel
/// is `β·N + (1−β)·A`, outside it is `N` copied unchanged.
pub fn synthesize<F: Element>(
    normal: &Tensor<F>,
    appearance: &Tensor<F>,
    mask: &Mask,
    opacity: f64,
) -> Result<SynthSample<F>> {
    let (c, h, w) = image_dims(normal)?;
    normal.same_shape(appearance)?;
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            actual: vec![mask.height(), mask.width()],
        });
    }
    ensure!(
        (0.0..=1.0).contains(&opacity),
        "opacity must lie in [0, 1], got {opacity}"
    );
    let beta = F::lit(opacity);
    let rest = F::lit(1.0 - opacity);
    let mut data = normal.data().to_vec();
    for ch in 0..c {
        for (p, &inside) in mask.bits().iter().enumerate() {
            if inside {
                let i = ch * h * w + p;
                data[i] = beta * normal.data()[i] + rest * appearance.data()[i];
            }
        }
    }
    Ok(SynthSample {
        image: Tensor::new(normal.shape().to_vec(), data)?,
        mask: mask.clone(),
        label: u8::from(mask.any()),
    })
}

/// Produces one synthetic anomaly from a normal image, redrawing the Perlin
/// mask until its foreground coverage falls within the configured bounds.
pub fn generate_anomaly<F: Element>(
    normal: &Tensor<F>,
    corpus: Option<&TextureCorpus>,
    config: &SynthConfig,
    rng: &mut Rng,
) -> Result<SynthSample<F>> {
    config.validate()?;
    let (c, h, w) = image_dims(normal)?;
    let resolutions: Vec<usize> = config
        .perlin_resolutions
        .iter()
        .copied()
        .filter(|&r| h % r == 0 && w % r == 0)
        .collect();
    ensure!(
        !resolutions.is_empty(),
        "no perlin resolution in {:?} divides {h}x{w}",
        config.perlin_resolutions
    );
    let foreground = foreground_mask(normal, config.foreground, rng)?;
    let area = foreground.count();
    ensure!(area > 0, "image has an empty foreground");
    for _ in 0..config.max_attempts {
        let r = resolutions[rng.below(resolutions.len())];
        let field = perlin2d(rng, w, h, r, r)?;
        let threshold = rng.uniform_in(config.threshold_min, config.threshold_max);
        let mask = make_anomaly_mask(&field, threshold, &foreground)?;
        let coverage = mask.count() as f64 / area as f64;
        if mask.any() && coverage >= config.min_coverage && coverage <= config.max_coverage {
            let appearance = appearance_source(normal, corpus, rng)?;
            debug_assert_eq!(appearance.shape(), &[c, h, w]);
            let opacity = rng.uniform_in(config.opacity_min, config.opacity_max);
            return synthesize(normal, &appearance, &mask, opacity);
        }
    }
    Err(Error::InvalidInput(format!(
        "no mask within coverage bounds after {} attempts",
        config.max_attempts
    )))
}

#[cfg(test)]
mod tests;
