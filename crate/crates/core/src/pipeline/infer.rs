use std::time::{Duration, Instant};

use crate::error::{ensure, Result};
use crate::image::image_dims;
use crate::models::ModelBundle;
use crate::numerics::{Element, Rng, Tensor};
use crate::schedule::{norm_guided_reconstruct, NoiseSchedule};

use super::TrainConfig;

#[derive(Debug, Clone)]
pub struct InferenceResult<F> {
    /// Norm-guided reconstruction `[C, H, W]`.
    pub reconstruction: Tensor<F>,
    /// Row-major `H × W` anomaly scores in `[0, 1]`.
    pub heatmap: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub image_score: f64,
    pub denoiser_forwards: usize,
    pub segmenter_forwards: usize,
    pub wall_time: Duration,
}

impl<F> InferenceResult<F> {
    pub fn forwards_used(&self) -> usize {
        self.denoiser_forwards + self.segmenter_forwards
    }
}

/// Mean of the `k` largest values; `k` beyond the length averages everything.
pub fn top_k_score(heatmap: &[f64], k: usize) -> Result<f64> {
    ensure!(!heatmap.is_empty(), "empty heatmap");
    ensure!(k >= 1, "k must be at least 1");
    let mut sorted = heatmap.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(sorted.len());
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// Norm-guided one-step reconstruction of a single `[C, H, W]` image at the
/// configured fixed timesteps, then segmentation and top-K scoring.
pub fn infer<F: Element>(
    bundle: &ModelBundle<F>,
    x0: &Tensor<F>,
    sched: &NoiseSchedule,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<InferenceResult<F>> {
    let (c, h, w) = image_dims(x0)?;
    let start = Instant::now();
    let batch = x0.clone().unsqueeze0();
    let (recon, denoiser_forwards) = norm_guided_reconstruct(
        &batch,
        config.t_s_infer,
        config.t_b_infer,
        config.w,
        &bundle.denoiser,
        rng,
        sched,
    )?;
    let heat = bundle.segmenter.predict(&batch, &recon)?;
    let heatmap: Vec<f64> = heat.data().iter().map(|v| v.as_f64()).collect();
    let image_score = top_k_score(&heatmap, config.k)?;
    Ok(InferenceResult {
        reconstruction: recon.reshape(&[c, h, w])?,
        heatmap,
        height: h,
        width: w,
        image_score,
        denoiser_forwards,
        segmenter_forwards: 1,
        wall_time: start.elapsed(),
    })
}
