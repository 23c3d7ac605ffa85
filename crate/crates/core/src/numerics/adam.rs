use crate::error::{ensure, Result};

use super::{Element, Tensor};

/// Adam optimiser state. Moment buffers are created lazily on the first step
/// and mirror the parameter shapes from then on.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Element> AdamState<F> {
    /// Moment decay rates 0.9 / 0.999 and stabiliser 1e-8.
    pub fn new(learning_rate: f64) -> Self {
        Self::with_moments(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        ensure!(
            params.len() == grads.len(),
            "adam: {} params but {} grads",
            params.len(),
            grads.len()
        );
        for (p, g) in params.iter().zip(grads) {
            p.same_shape(g)?;
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![F::zero(); p.numel()]).collect();
            self.second = self.first.clone();
        }
        ensure!(
            self.first.len() == params.len()
                && self.first.iter().zip(params.iter()).all(|(m, p)| m.len() == p.numel()),
            "adam: parameter set changed between steps"
        );
        self.step += 1;
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
        let bias1 = F::lit(1.0 - self.beta1.powi(self.step as i32));
        let bias2 = F::lit(1.0 - self.beta2.powi(self.step as i32));
        let (lr, eps) = (F::lit(self.learning_rate), F::lit(self.eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
