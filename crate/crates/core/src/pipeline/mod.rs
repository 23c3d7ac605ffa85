//! Joint training, norm-guided inference and the paradigm benchmark.

mod bench;
mod infer;
mod train;

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{Element, Tensor};
use crate::schedule::{NoisePredictor, NoiseSchedule};

pub use bench::{bench_paradigms, ParadigmRow, DEFAULT_ITERATIVE_START};
pub use infer::{infer, top_k_score, InferenceResult};
pub use train::{assemble_batch, Batch, Draws, StepLosses, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Optimizer steps per epoch.
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub normals_per_batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub detach_reconstruction: bool,
    /// Guidance scale.
    pub w: f64,
    pub t_s_infer: usize,
    pub t_b_infer: usize,
    /// Number of top heatmap pixels averaged into the image score.
    pub k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            steps_per_epoch: 25,
            batch_size: 16,
            normals_per_batch: 8,
            learning_rate: 1e-4,
            seed: 0,
            detach_reconstruction: true,
            w: 1.0,
            t_s_infer: 100,
            t_b_infer: 500,
            k: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch-size must be positive");
        ensure!(
            self.normals_per_batch <= self.batch_size,
            "normals-per-batch {} exceeds batch-size {}",
            self.normals_per_batch,
            self.batch_size
        );
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning-rate must be positive"
        );
        ensure!(self.w.is_finite(), "w must be finite");
        ensure!(
            self.t_s_infer <= sched.tau()
                && sched.tau() < self.t_b_infer
                && self.t_b_infer < sched.timesteps(),
            "inference timesteps must satisfy t-s-infer ({}) <= tau ({}) < t-b-infer ({}) < T ({})",
            self.t_s_infer,
            sched.tau(),
            self.t_b_infer,
            sched.timesteps()
        );
        ensure!(self.k >= 1, "k must be at least 1");
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }
}

/// Wraps a predictor and counts its forward calls.
pub struct CountingPredictor<P> {
    inner: P,
    calls: Cell<usize>,
}

impl<P> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        CountingPredictor {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn reset(&self) {
        self.calls.set(0);
    }
}

impl<F: Element, P: NoisePredictor<F>> NoisePredictor<F> for CountingPredictor<P> {
    fn predict_noise(&self, x_t: &Tensor<F>, t: &[usize]) -> Result<Tensor<F>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict_noise(x_t, t)
    }
}
