//! Linear noise schedule and the closed-form sampling formulas built on it.
//!
//! Timesteps are 0-based: `t` ranges over `0..T`, `alpha_bars[t]` is the
//! product of `alphas[0..=t]`, and the small-noise set is `0..=tau` while the
//! large-noise set is `tau+1..T`. Coefficients are held in 64-bit and every
//! elementwise formula is evaluated in 64-bit before rounding to the tensor
//! precision.

use crate::error::{ensure, Result};
use crate::numerics::{Element, Rng, Tensor};

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_TAU: usize = 300;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    timesteps: usize,
    tau: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    beta_tildes: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END, DEFAULT_TAU)
            .expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    /// `timesteps` betas spaced evenly from `beta_start` to `beta_end` inclusive.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64, tau: usize) -> Result<Self> {
        ensure!(timesteps >= 1, "schedule needs at least one timestep");
        ensure!(
            0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0,
            "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
        );
        let betas = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas, tau)
    }

    pub fn from_betas(betas: Vec<f64>, tau: usize) -> Result<Self> {
        let timesteps = betas.len();
        ensure!(
            0 < tau && tau < timesteps,
            "tau must satisfy 0 < tau < T (tau = {tau}, T = {timesteps})"
        );
        ensure!(
            betas.iter().all(|&b| b > 0.0 && b < 1.0),
            "every beta must lie in (0, 1)"
        );
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(timesteps);
        let mut running = 1.0;
        for &a in &alphas {
            running *= a;
            alpha_bars.push(running);
        }
        let beta_tildes = (0..timesteps)
            .map(|t| {
                if t == 0 {
                    0.0
                } else {
                    (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]) * betas[t]
                }
            })
            .collect();
        Ok(NoiseSchedule {
            timesteps,
            tau,
            betas,
            alphas,
            alpha_bars,
            beta_tildes,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta_tildes(&self) -> &[f64] {
        &self.beta_tildes
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        ensure!(
            t < self.timesteps,
            "timestep {t} out of range 0..{}",
            self.timesteps
        );
        Ok(())
    }

    /// `(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t))`.
    pub fn signal_noise(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bars[t];
        (ab.sqrt(), (1.0 - ab).sqrt())
    }

    /// Uniform draw from the small-noise set `0..=tau`.
    pub fn sample_small(&self, rng: &mut Rng) -> usize {
        rng.int_inclusive(0, self.tau)
    }

    /// Uniform draw from the large-noise set `tau+1..T`.
    pub fn sample_large(&self, rng: &mut Rng) -> usize {
        rng.int_inclusive(self.tau + 1, self.timesteps - 1)
    }
}

/// Anything that predicts the injected noise of a batch `x_t` at per-sample timesteps.
pub trait NoisePredictor<F: Element> {
    fn predict_noise(&self, x_t: &Tensor<F>, t: &[usize]) -> Result<Tensor<F>>;
}

impl<F: Element, P: NoisePredictor<F> + ?Sized> NoisePredictor<F> for &P {
    fn predict_noise(&self, x_t: &Tensor<F>, t: &[usize]) -> Result<Tensor<F>> {
        (**self).predict_noise(x_t, t)
    }
}

/// Length of the slice each timestep in `ts` governs: the whole tensor for a
/// single timestep, one leading-dimension sample otherwise.
fn span<F: Element>(x: &Tensor<F>, ts: &[usize], sched: &NoiseSchedule) -> Result<usize> {
    for &t in ts {
        sched.check_t(t)?;
    }
    if ts.len() == 1 {
        return Ok(x.numel());
    }
    ensure!(
        ts.len() == x.batch(),
        "{} timesteps for a batch of {}",
        ts.len(),
        x.batch()
    );
    Ok(x.sample_len())
}

fn elementwise<F: Element>(
    shape_of: &Tensor<F>,
    ts: &[usize],
    sched: &NoiseSchedule,
    inputs: &[&Tensor<F>],
    f: impl Fn(usize, &[f64]) -> f64,
) -> Result<Tensor<F>> {
    for t in inputs {
        shape_of.same_shape(t)?;
    }
    let len = span(shape_of, ts, sched)?;
    let mut args = vec![0.0; inputs.len()];
    let data = (0..shape_of.numel())
        .map(|i| {
            for (a, t) in args.iter_mut().zip(inputs) {
                *a = t.data()[i].as_f64();
            }
            F::lit(f(ts[i / len], &args))
        })
        .collect();
    Tensor::new(shape_of.shape().to_vec(), data)
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_diffuse<F: Element>(
    x0: &Tensor<F>,
    t: usize,
    eps: &Tensor<F>,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    forward_diffuse_batch(x0, &[t], eps, sched)
}

/// [`forward_diffuse`] with one timestep per leading-dimension sample.
pub fn forward_diffuse_batch<F: Element>(
    x0: &Tensor<F>,
    ts: &[usize],
    eps: &Tensor<F>,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    elementwise(x0, ts, sched, &[x0, eps], |t, a| {
        let (s, n) = sched.signal_noise(t);
        s * a[0] + n * a[1]
    })
}

/// Direct estimate `x0_hat = (x_t - sqrt(1 - alpha_bar_t) eps_pred) / sqrt(alpha_bar_t)`.
pub fn one_step_denoise<F: Element>(
    x_t: &Tensor<F>,
    t: usize,
    eps_pred: &Tensor<F>,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    one_step_denoise_batch(x_t, &[t], eps_pred, sched)
}

pub fn one_step_denoise_batch<F: Element>(
    x_t: &Tensor<F>,
    ts: &[usize],
    eps_pred: &Tensor<F>,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    elementwise(x_t, ts, sched, &[x_t, eps_pred], |t, a| {
        let (s, n) = sched.signal_noise(t);
        (a[0] - n * a[1]) / s
    })
}

/// One ancestral step `x_t -> x_{t-1}`:
/// `(x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) eps_pred) / sqrt(alpha_t) + beta_tilde_t z`.
pub fn ddpm_step<F: Element>(
    x_t: &Tensor<F>,
    t: usize,
    eps_pred: &Tensor<F>,
    z: &Tensor<F>,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    ensure!(t >= 1, "ddpm_step needs t >= 1, got {t}");
    let alpha = sched.alphas[t];
    let coef = (1.0 - alpha) / (1.0 - sched.alpha_bars[t]).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let tilde = sched.beta_tildes[t];
    elementwise(x_t, &[t], sched, &[x_t, eps_pred, z], |_, a| {
        (a[0] - coef * a[1]) * inv_sqrt_alpha + tilde * a[2]
    })
}

/// Norm-guided noise `eps_s - sqrt(1 - alpha_bar_ts) w (n_ts - x_ts)`.
pub fn norm_guided_noise<F: Element>(
    eps_s: &Tensor<F>,
    x_ts: &Tensor<F>,
    n_ts: &Tensor<F>,
    t_s: usize,
    w: f64,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    norm_guided_noise_batch(eps_s, x_ts, n_ts, &[t_s], w, sched)
}

pub fn norm_guided_noise_batch<F: Element>(
    eps_s: &Tensor<F>,
    x_ts: &Tensor<F>,
    n_ts: &Tensor<F>,
    t_s: &[usize],
    w: f64,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    for &t in t_s {
        ensure!(
            t <= sched.tau,
            "guided timestep {t} must lie in the small-noise set 0..={}",
            sched.tau
        );
    }
    if w == 0.0 {
        eps_s.same_shape(x_ts)?;
        eps_s.same_shape(n_ts)?;
        span(eps_s, t_s, sched)?;
        return Ok(eps_s.clone());
    }
    elementwise(eps_s, t_s, sched, &[eps_s, x_ts, n_ts], |t, a| {
        let (_, noise) = sched.signal_noise(t);
        a[0] - noise * w * (a[2] - a[1])
    })
}

/// Per-sample timesteps for the two noise scales of a norm-guided estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepPair {
    pub small: Vec<usize>,
    pub large: Vec<usize>,
}

impl TimestepPair {
    pub fn fixed(t_s: usize, t_b: usize, batch: usize) -> Self {
        TimestepPair {
            small: vec![t_s; batch],
            large: vec![t_b; batch],
        }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        ensure!(
            self.small.len() == self.large.len(),
            "timestep lists differ in length"
        );
        for (&s, &b) in self.small.iter().zip(&self.large) {
            ensure!(
                s <= sched.tau && sched.tau < b && b < sched.timesteps,
                "need 0 <= t_s <= tau < t_b < T, got t_s = {s}, t_b = {b}, tau = {}, T = {}",
                sched.tau,
                sched.timesteps
            );
        }
        Ok(())
    }
}

/// Everything after the two noise predictions of a norm-guided estimate:
/// reference `n` from the large-noise prediction, `n_ts` by re-noising `n`
/// with the small-noise prediction, guided noise, and the final direct estimate.
pub fn guided_reconstruction<F: Element>(
    x_ts: &Tensor<F>,
    eps_s_pred: &Tensor<F>,
    x_tb: &Tensor<F>,
    eps_b_pred: &Tensor<F>,
    steps: &TimestepPair,
    w: f64,
    sched: &NoiseSchedule,
) -> Result<Tensor<F>> {
    steps.validate(sched)?;
    let reference = one_step_denoise_batch(x_tb, &steps.large, eps_b_pred, sched)?;
    let reference_ts = forward_diffuse_batch(&reference, &steps.small, eps_s_pred, sched)?;
    let guided = norm_guided_noise_batch(eps_s_pred, x_ts, &reference_ts, &steps.small, w, sched)?;
    one_step_denoise_batch(x_ts, &steps.small, &guided, sched)
}

/// Norm-guided one-step reconstruction of a batch `[N, ...]` at fixed
/// timesteps. Returns the reconstruction and the number of denoiser forwards
/// spent per image (always 2).
pub fn norm_guided_reconstruct<F: Element, P: NoisePredictor<F>>(
    x0: &Tensor<F>,
    t_s: usize,
    t_b: usize,
    w: f64,
    denoiser: &P,
    rng: &mut Rng,
    sched: &NoiseSchedule,
) -> Result<(Tensor<F>, usize)> {
    let steps = TimestepPair::fixed(t_s, t_b, x0.batch());
    steps.validate(sched)?;
    let eps_s: Tensor<F> = rng.randn(x0.shape())?;
    let eps_b: Tensor<F> = rng.randn(x0.shape())?;
    let x_ts = forward_diffuse(x0, t_s, &eps_s, sched)?;
    let x_tb = forward_diffuse(x0, t_b, &eps_b, sched)?;
    let eps_b_pred = denoiser.predict_noise(&x_tb, &steps.large)?;
    let eps_s_pred = denoiser.predict_noise(&x_ts, &steps.small)?;
    let x0_hat = guided_reconstruction(&x_ts, &eps_s_pred, &x_tb, &eps_b_pred, &steps, w, sched)?;
    Ok((x0_hat, 2))
}

/// Plain one-step reconstruction from a single timestep. Returns the
/// reconstruction and the forward count (1).
pub fn one_step_reconstruct<F: Element, P: NoisePredictor<F>>(
    x0: &Tensor<F>,
    t: usize,
    denoiser: &P,
    rng: &mut Rng,
    sched: &NoiseSchedule,
) -> Result<(Tensor<F>, usize)> {
    sched.check_t(t)?;
    let eps: Tensor<F> = rng.randn(x0.shape())?;
    let x_t = forward_diffuse(x0, t, &eps, sched)?;
    let pred = denoiser.predict_noise(&x_t, &vec![t; x0.batch()])?;
    Ok((one_step_denoise(&x_t, t, &pred, sched)?, 1))
}

/// Corrupts to `x_{t_start}` and runs `t_start` ancestral steps down to index 0.
/// The last step uses `z = 0`. Returns the reconstruction and the forward count.
pub fn iterative_reconstruct<F: Element, P: NoisePredictor<F>>(
    x0: &Tensor<F>,
    t_start: usize,
    denoiser: &P,
    rng: &mut Rng,
    sched: &NoiseSchedule,
) -> Result<(Tensor<F>, usize)> {
    ensure!(
        t_start >= 1 && t_start < sched.timesteps,
        "iterative start {t_start} must satisfy 1 <= t < {}",
        sched.timesteps
    );
    let eps: Tensor<F> = rng.randn(x0.shape())?;
    let mut x = forward_diffuse(x0, t_start, &eps, sched)?;
    let mut forwards = 0;
    for t in (1..=t_start).rev() {
        let pred = denoiser.predict_noise(&x, &vec![t; x0.batch()])?;
        forwards += 1;
        let z = if t > 1 {
            rng.randn(x0.shape())?
        } else {
            Tensor::zeros(x0.shape())
        };
        x = ddpm_step(&x, t, &pred, &z, sched)?;
    }
    Ok((x, forwards))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schedule(alpha_bar0: f64) -> NoiseSchedule {
        NoiseSchedule::from_betas(vec![1.0 - alpha_bar0, 0.5], 1).unwrap()
    }

    #[test]
    fn default_endpoints() {
        let s = NoiseSchedule::default();
        assert_eq!(s.timesteps(), 1000);
        assert_eq!(s.tau(), 300);
        assert_eq!(s.betas()[0], 1e-4);
        assert!((s.betas()[999] - 1e-2).abs() < 1e-18);
        assert_eq!(s.beta_tildes()[0], 0.0);
    }

    #[test]
    fn running_product_oracle_at_299() {
        let s = NoiseSchedule::default();
        let mut oracle = 1.0f64;
        for i in 0..=299 {
            let beta = 1e-4 + (1e-2 - 1e-4) * (i as f64) / 999.0;
            oracle *= 1.0 - beta;
        }
        let rel = (s.alpha_bars()[299] - oracle).abs() / oracle;
        assert!(rel <= 1e-12, "relative error {rel}");
    }

    #[test]
    fn bounds_are_enforced() {
        assert!(NoiseSchedule::linear(1, 0.1, 0.1, 0).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.1, 3).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1, 3).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0, 3).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 0.2, 10).is_err());
    }

    #[test]
    fn monotone_signal_and_noise() {
        let s = NoiseSchedule::default();
        for t in 1..s.timesteps() {
            assert!(s.alpha_bars()[t] < s.alpha_bars()[t - 1]);
            assert!(s.signal_noise(t).1 > s.signal_noise(t - 1).1);
            assert!(s.alpha_bars()[t] > 0.0 && s.alpha_bars()[t] < 1.0);
        }
    }

    #[test]
    fn forward_diffuse_hand_values() {
        let s = toy_schedule(0.64);
        let x0 = Tensor::full(&[1, 2, 2], 1.0f64);
        let eps = Tensor::full(&[1, 2, 2], 1.0f64);
        let xt = forward_diffuse(&x0, 0, &eps, &s).unwrap();
        assert!(xt.data().iter().all(|&v| (v - 1.4).abs() < 1e-15));

        let zero = Tensor::zeros(&[1, 2, 2]);
        let xt = forward_diffuse(&x0, 1, &zero, &s).unwrap();
        let expect = s.alpha_bars()[1].sqrt();
        assert!(xt.data().iter().all(|&v| v == expect));
    }

    #[test]
    fn forward_diffuse_rejects_bad_t() {
        let s = NoiseSchedule::default();
        let x = Tensor::<f32>::zeros(&[1, 1]);
        assert!(forward_diffuse(&x, 1000, &x, &s).is_err());
    }

    #[test]
    fn one_step_hand_value() {
        let s = toy_schedule(0.64);
        let xt = Tensor::scalar(1.4f64);
        let eps = Tensor::scalar(1.0f64);
        let x0 = one_step_denoise(&xt, 0, &eps, &s).unwrap();
        assert!((x0.item().unwrap() - 1.0).abs() < 1e-12);

        let zero = Tensor::scalar(0.0f64);
        let x0 = one_step_denoise(&xt, 0, &zero, &s).unwrap();
        assert!((x0.item().unwrap() - 1.4 / 0.8).abs() < 1e-12);
    }

    #[test]
    fn ddpm_step_degenerate_and_formula() {
        let s = NoiseSchedule::default();
        let xt = Tensor::new(vec![3], vec![0.3f64, -1.2, 2.0]).unwrap();
        let zero = Tensor::zeros(&[3]);
        let out = ddpm_step(&xt, 17, &zero, &zero, &s).unwrap();
        for (o, x) in out.data().iter().zip(xt.data()) {
            assert!((o - x / s.alphas()[17].sqrt()).abs() < 1e-14);
        }
        let eps = Tensor::new(vec![3], vec![0.1f64, 0.2, -0.4]).unwrap();
        let out = ddpm_step(&xt, 17, &eps, &zero, &s).unwrap();
        for i in 0..3 {
            let a = 1.0 - (1e-4 + (1e-2 - 1e-4) * 17.0 / 999.0);
            let mut ab = 1.0;
            for j in 0..=17 {
                ab *= 1.0 - (1e-4 + (1e-2 - 1e-4) * j as f64 / 999.0);
            }
            let expect = (xt.data()[i] - (1.0 - a) / (1.0 - ab).sqrt() * eps.data()[i]) / a.sqrt();
            assert!((out.data()[i] - expect).abs() < 1e-12);
        }
        assert!(ddpm_step(&xt, 0, &zero, &zero, &s).is_err());
    }

    #[test]
    fn guidance_hand_value() {
        // sqrt(1 - alpha_bar) = 0.6
        let s = toy_schedule(0.64);
        let eps = Tensor::scalar(0.5f64);
        let x = Tensor::scalar(0.1f64);
        let n = Tensor::scalar(0.3f64);
        let out = norm_guided_noise(&eps, &x, &n, 0, 1.0, &s).unwrap();
        assert!((out.item().unwrap() - 0.38).abs() < 1e-12);
    }

    #[test]
    fn guidance_reductions_are_exact() {
        let s = NoiseSchedule::default();
        let mut rng = Rng::new(5, "g");
        let eps: Tensor<f32> = rng.randn(&[2, 3]).unwrap();
        let x: Tensor<f32> = rng.randn(&[2, 3]).unwrap();
        let n: Tensor<f32> = rng.randn(&[2, 3]).unwrap();
        assert_eq!(norm_guided_noise(&eps, &x, &n, 100, 0.0, &s).unwrap(), eps);
        assert_eq!(norm_guided_noise(&eps, &x, &x, 100, 3.0, &s).unwrap(), eps);
        assert!(norm_guided_noise(&eps, &x, &n, 301, 1.0, &s).is_err());
        let wrong: Tensor<f32> = rng.randn(&[3, 2]).unwrap();
        assert!(norm_guided_noise(&eps, &x, &wrong, 100, 1.0, &s).is_err());
    }

    #[test]
    fn timestep_ordering_enforced() {
        let s = NoiseSchedule::default();
        struct Zero;
        impl NoisePredictor<f64> for Zero {
            fn predict_noise(&self, x: &Tensor<f64>, _: &[usize]) -> Result<Tensor<f64>> {
                Ok(Tensor::zeros(x.shape()))
            }
        }
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let mut rng = Rng::new(0, "r");
        assert!(norm_guided_reconstruct(&x, 301, 500, 1.0, &Zero, &mut rng, &s).is_err());
        assert!(norm_guided_reconstruct(&x, 100, 300, 1.0, &Zero, &mut rng, &s).is_err());
        assert!(norm_guided_reconstruct(&x, 100, 1000, 1.0, &Zero, &mut rng, &s).is_err());
        assert!(norm_guided_reconstruct(&x, 0, 301, 1.0, &Zero, &mut rng, &s).is_ok());
        assert!(iterative_reconstruct(&x, 0, &Zero, &mut rng, &s).is_err());
    }
}
