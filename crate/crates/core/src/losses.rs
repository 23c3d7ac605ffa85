//! Training objectives: the masked two-scale noise loss and the
//! smooth-L1 plus focal segmentation loss.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{Element, Tape, Tensor, Var};

/// Probability clamp applied inside the focal loss.
pub const FOCAL_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the focal term in the mask loss.
    pub gamma: f64,
    pub smooth_l1_transition: f64,
    /// Focal exponent.
    pub focal_focusing: f64,
    pub focal_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 5.0,
            smooth_l1_transition: 1.0,
            focal_focusing: 2.0,
            focal_alpha: 0.75,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.gamma >= 0.0, "gamma must be nonnegative, got {}", self.gamma);
        ensure!(
            self.smooth_l1_transition > 0.0,
            "smooth-l1-transition must be positive, got {}",
            self.smooth_l1_transition
        );
        ensure!(
            self.focal_focusing >= 0.0,
            "focal-focusing must be nonnegative, got {}",
            self.focal_focusing
        );
        ensure!(
            self.focal_alpha > 0.0 && self.focal_alpha < 1.0,
            "focal-alpha must lie in (0, 1), got {}",
            self.focal_alpha
        );
        Ok(())
    }
}

/// Batch mean of `(1 − y)·(mse_s + mse_b)/2`, mean-squared errors taken per sample.
pub fn noise_loss<F: Element>(
    tape: &mut Tape<F>,
    eps_s: &Tensor<F>,
    pred_s: Var,
    eps_b: &Tensor<F>,
    pred_b: Var,
    labels: &[f64],
) -> Result<Var> {
    tape.value(pred_s).same_shape(eps_s)?;
    tape.value(pred_b).same_shape(eps_b)?;
    let n = eps_s.batch();
    ensure!(
        labels.len() == n,
        "noise loss: {} labels for a batch of {n}",
        labels.len()
    );
    ensure!(
        eps_b.batch() == n,
        "noise loss: small and large batches differ ({n} vs {})",
        eps_b.batch()
    );
    let per_sample = |tape: &mut Tape<F>, target: &Tensor<F>, pred: Var| {
        let t = tape.constant(target.clone());
        let d = tape.sub(pred, t)?;
        let sq = tape.square(d);
        let rows = tape.sum_rows(sq);
        Ok::<_, crate::Error>(tape.scale(rows, 1.0 / target.sample_len() as f64))
    };
    let ms = per_sample(tape, eps_s, pred_s)?;
    let mb = per_sample(tape, eps_b, pred_b)?;
    let both = tape.add(ms, mb)?;
    let weights: Vec<F> = labels
        .iter()
        .map(|&y| F::lit((1.0 - y) / (2.0 * n as f64)))
        .collect();
    let weighted = tape.scale_rows(both, &weights)?;
    Ok(tape.sum(weighted))
}

pub fn smooth_l1<F: Element>(
    tape: &mut Tape<F>,
    mask: &Tensor<F>,
    pred: Var,
    transition: f64,
) -> Result<Var> {
    tape.smooth_l1_mean(pred, mask, transition)
}

pub fn focal_loss<F: Element>(
    tape: &mut Tape<F>,
    mask: &Tensor<F>,
    pred: Var,
    focusing: f64,
    alpha: f64,
) -> Result<Var> {
    tape.focal_mean(pred, mask, focusing, alpha, FOCAL_CLAMP)
}

/// Smooth-L1 plus `gamma` times focal.
pub fn mask_loss<F: Element>(
    tape: &mut Tape<F>,
    mask: &Tensor<F>,
    pred: Var,
    weights: &LossWeights,
) -> Result<Var> {
    weights.validate()?;
    let sl1 = smooth_l1(tape, mask, pred, weights.smooth_l1_transition)?;
    let focal = focal_loss(tape, mask, pred, weights.focal_focusing, weights.focal_alpha)?;
    let focal = tape.scale(focal, weights.gamma);
    tape.add(sl1, focal)
}

pub fn total_loss<F: Element>(tape: &mut Tape<F>, noise: Var, mask: Var) -> Result<Var> {
    tape.add(noise, mask)
}
