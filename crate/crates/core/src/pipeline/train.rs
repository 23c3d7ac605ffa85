use std::fmt::Write as _;

use crate::error::{ensure, Error, Result};
use crate::losses::{mask_loss, noise_loss, total_loss, LossWeights};
use crate::models::{Bound, ModelBundle};
use crate::numerics::{AdamState, Element, Rng, Tape, Tensor, Var};
use crate::schedule::{forward_diffuse_batch, guided_reconstruction, NoiseSchedule, TimestepPair};
use crate::synth::{generate_anomaly, SynthConfig, SynthSample, TextureCorpus};

use super::TrainConfig;

/// Images `[N, C, H, W]`, masks `[N, 1, H, W]` and labels in `{0, 1}`.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub images: Tensor<F>,
    pub masks: Tensor<F>,
    pub labels: Vec<f64>,
}

impl<F: Element> Batch<F> {
    pub fn from_samples(samples: &[SynthSample<F>]) -> Result<Self> {
        ensure!(!samples.is_empty(), "empty batch");
        let images: Vec<Tensor<F>> = samples.iter().map(|s| s.image.clone().unsqueeze0()).collect();
        let masks: Vec<Tensor<F>> = samples.iter().map(|s| s.mask.to_tensor::<F>().unsqueeze0()).collect();
        Ok(Batch {
            images: Tensor::stack(&images.iter().collect::<Vec<_>>())?,
            masks: Tensor::stack(&masks.iter().collect::<Vec<_>>())?,
            labels: samples.iter().map(|s| f64::from(s.label)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Draws `normals` untouched images and fills the rest of the batch with
/// synthetic anomalies built from randomly chosen normal images.
pub fn assemble_batch<F: Element>(
    pool: &[Tensor<F>],
    batch_size: usize,
    normals: usize,
    synth: &SynthConfig,
    corpus: Option<&TextureCorpus>,
    rng: &mut Rng,
) -> Result<Batch<F>> {
    ensure!(!pool.is_empty(), "no normal images to train on");
    let mut samples = Vec::with_capacity(batch_size);
    for _ in 0..normals {
        samples.push(SynthSample::normal(pool[rng.below(pool.len())].clone())?);
    }
    let mut failures = 0;
    while samples.len() < batch_size {
        let source = &pool[rng.below(pool.len())];
        match generate_anomaly(source, corpus, synth, rng) {
            Ok(s) => samples.push(s),
            Err(e) => {
                failures += 1;
                if failures > 20 * batch_size {
                    return Err(e);
                }
            }
        }
    }
    Batch::from_samples(&samples)
}

/// The random quantities of one training step.
#[derive(Debug, Clone)]
pub struct Draws<F> {
    pub steps: TimestepPair,
    pub eps_s: Tensor<F>,
    pub eps_b: Tensor<F>,
}

impl<F: Element> Draws<F> {
    pub fn sample(shape: &[usize], sched: &NoiseSchedule, rng: &mut Rng) -> Result<Self> {
        let n = shape[0];
        let mut small = Vec::with_capacity(n);
        let mut large = Vec::with_capacity(n);
        for _ in 0..n {
            small.push(sched.sample_small(rng));
            large.push(sched.sample_large(rng));
        }
        Ok(Draws {
            steps: TimestepPair { small, large },
            eps_s: rng.randn(shape)?,
            eps_b: rng.randn(shape)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub noise: f64,
    pub mask: f64,
    pub total: f64,
}

/// A recorded loss graph.
pub(crate) struct Graph<F> {
    pub tape: Tape<F>,
    pub denoiser: Bound,
    pub segmenter: Bound,
    pub noise: Var,
    pub mask: Var,
    pub total: Var,
    #[cfg_attr(not(test), allow(dead_code))]
    pub reconstruction: Tensor<F>,
}

fn gather<F: Element>(t: &Tensor<F>, idx: &[usize]) -> Result<Tensor<F>> {
    let parts: Vec<Tensor<F>> = idx.iter().map(|&i| t.select(i)).collect();
    Tensor::stack(&parts.iter().collect::<Vec<_>>())
}

/// Inverse of splitting a batch into `first` and `second` index sets.
fn scatter<F: Element>(first: (&[usize], &Tensor<F>), second: (&[usize], &Tensor<F>)) -> Result<Tensor<F>> {
    let n = first.0.len() + second.0.len();
    let template = if first.0.is_empty() { second.1 } else { first.1 };
    let len = template.sample_len();
    let mut data = vec![F::zero(); n * len];
    for (idx, t) in [first, second] {
        for (k, &i) in idx.iter().enumerate() {
            data[i * len..(i + 1) * len].copy_from_slice(t.sample(k));
        }
    }
    let mut shape = template.shape().to_vec();
    shape[0] = n;
    Tensor::new(shape, data)
}

/// Per-sample coefficients as `F` values.
fn coeffs<F: Element>(t: &[usize], f: impl Fn(usize) -> f64) -> Vec<F> {
    t.iter().map(|&s| F::lit(f(s))).collect()
}

/// Norm-guided reconstruction recorded on the tape so gradients can reach the denoiser.
#[allow(clippy::too_many_arguments)]
fn guided_reconstruction_tape<F: Element>(
    tape: &mut Tape<F>,
    x_ts: Var,
    pred_s: Var,
    x_tb: Var,
    pred_b: Var,
    steps: &TimestepPair,
    w: f64,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let (s, b) = (&steps.small, &steps.large);
    let sig = |t: usize| sched.signal_noise(t).0;
    let noi = |t: usize| sched.signal_noise(t).1;
    // n = (x_tb − √(1−ᾱ_b)·ε̂_b)/√ᾱ_b
    let scaled = tape.scale_rows(pred_b, &coeffs(b, noi))?;
    let diff = tape.sub(x_tb, scaled)?;
    let reference = tape.scale_rows(diff, &coeffs(b, |t| 1.0 / sig(t)))?;
    // n_ts = √ᾱ_s·n + √(1−ᾱ_s)·ε̂_s
    let a = tape.scale_rows(reference, &coeffs(s, sig))?;
    let c = tape.scale_rows(pred_s, &coeffs(s, noi))?;
    let reference_ts = tape.add(a, c)?;
    // ε_mod = ε̂_s − √(1−ᾱ_s)·w·(n_ts − x_ts)
    let gap = tape.sub(reference_ts, x_ts)?;
    let pull = tape.scale_rows(gap, &coeffs(s, |t| noi(t) * w))?;
    let guided = tape.sub(pred_s, pull)?;
    // x̂0 = (x_ts − √(1−ᾱ_s)·ε_mod)/√ᾱ_s
    let scaled = tape.scale_rows(guided, &coeffs(s, noi))?;
    let diff = tape.sub(x_ts, scaled)?;
    tape.scale_rows(diff, &coeffs(s, |t| 1.0 / sig(t)))
}

/// Owns the bundle and optimizer state for joint training.
pub struct Trainer<F> {
    pub bundle: ModelBundle<F>,
    pub sched: NoiseSchedule,
    pub weights: LossWeights,
    pub config: TrainConfig,
    denoiser_adam: AdamState<F>,
    segmenter_adam: AdamState<F>,
    rng: Rng,
    step: usize,
}

impl<F: Element> Trainer<F> {
    pub fn new(
        bundle: ModelBundle<F>,
        sched: NoiseSchedule,
        weights: LossWeights,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate(&sched)?;
        weights.validate()?;
        let rng = Rng::new(config.seed, "train");
        Ok(Trainer {
            bundle,
            sched,
            weights,
            denoiser_adam: AdamState::new(config.learning_rate),
            segmenter_adam: AdamState::new(config.learning_rate),
            config,
            rng,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Random stream for batch assembly, separate from the step draws.
    pub fn data_rng(&self) -> Rng {
        Rng::new(self.config.seed, "data")
    }

    pub(crate) fn build_graph(&self, batch: &Batch<F>, draws: &Draws<F>) -> Result<Graph<F>> {
        let n = batch.len();
        let shape = batch.images.shape().to_vec();
        draws.eps_s.expect_shape(&shape)?;
        draws.eps_b.expect_shape(&shape)?;
        draws.steps.validate(&self.sched)?;
        ensure!(draws.steps.small.len() == n, "draws do not match the batch size");
        let x_ts = forward_diffuse_batch(&batch.images, &draws.steps.small, &draws.eps_s, &self.sched)?;
        let x_tb = forward_diffuse_batch(&batch.images, &draws.steps.large, &draws.eps_b, &self.sched)?;

        let mut tape = Tape::new();
        let den = self.bundle.denoiser.params().bind(&mut tape, true);
        let seg = self.bundle.segmenter.params().bind(&mut tape, true);
        let denoiser = &self.bundle.denoiser;

        let (noise, recon_var, reconstruction) = if self.config.detach_reconstruction {
            let normal: Vec<usize> = (0..n).filter(|&i| batch.labels[i] == 0.0).collect();
            let anomalous: Vec<usize> = (0..n).filter(|&i| batch.labels[i] != 0.0).collect();
            let pick = |v: &[usize], i: &[usize]| i.iter().map(|&k| v[k]).collect::<Vec<_>>();

            let (noise, normal_preds) = if normal.is_empty() {
                (tape.constant(Tensor::scalar(F::zero())), None)
            } else {
                let ts = pick(&draws.steps.small, &normal);
                let tb = pick(&draws.steps.large, &normal);
                let xs = tape.constant(gather(&x_ts, &normal)?);
                let xb = tape.constant(gather(&x_tb, &normal)?);
                let ps = denoiser.forward(&mut tape, &den, xs, &ts)?;
                let pb = denoiser.forward(&mut tape, &den, xb, &tb)?;
                let es = gather(&draws.eps_s, &normal)?;
                let eb = gather(&draws.eps_b, &normal)?;
                let zeros = vec![0.0; normal.len()];
                let subset = noise_loss(&mut tape, &es, ps, &eb, pb, &zeros)?;
                let share = normal.len() as f64 / n as f64;
                let noise = tape.scale(subset, share);
                let preds = (tape.value(ps).clone(), tape.value(pb).clone());
                (noise, Some(preds))
            };
            let anomalous_preds = if anomalous.is_empty() {
                None
            } else {
                let ts = pick(&draws.steps.small, &anomalous);
                let tb = pick(&draws.steps.large, &anomalous);
                Some((
                    denoiser.predict(&gather(&x_ts, &anomalous)?, &ts)?,
                    denoiser.predict(&gather(&x_tb, &anomalous)?, &tb)?,
                ))
            };
            let (pred_s, pred_b) = match (normal_preds, anomalous_preds) {
                (Some((ns, nb)), Some((as_, ab))) => (
                    scatter((&normal, &ns), (&anomalous, &as_))?,
                    scatter((&normal, &nb), (&anomalous, &ab))?,
                ),
                (Some(p), None) | (None, Some(p)) => p,
                (None, None) => unreachable!("batch is nonempty"),
            };
            let recon = guided_reconstruction(
                &x_ts,
                &pred_s,
                &x_tb,
                &pred_b,
                &draws.steps,
                self.config.w,
                &self.sched,
            )?;
            let var = tape.constant(recon.clone());
            (noise, var, recon)
        } else {
            let xs = tape.constant(x_ts.clone());
            let xb = tape.constant(x_tb.clone());
            let ps = denoiser.forward(&mut tape, &den, xs, &draws.steps.small)?;
            let pb = denoiser.forward(&mut tape, &den, xb, &draws.steps.large)?;
            let noise = noise_loss(&mut tape, &draws.eps_s, ps, &draws.eps_b, pb, &batch.labels)?;
            let var = guided_reconstruction_tape(
                &mut tape,
                xs,
                ps,
                xb,
                pb,
                &draws.steps,
                self.config.w,
                &self.sched,
            )?;
            (noise, var, tape.value(var).clone())
        };

        let x0 = tape.constant(batch.images.clone());
        let heat = self.bundle.segmenter.forward(&mut tape, &seg, x0, recon_var)?;
        let mask = mask_loss(&mut tape, &batch.masks, heat, &self.weights)?;
        let total = total_loss(&mut tape, noise, mask)?;
        Ok(Graph {
            tape,
            denoiser: den,
            segmenter: seg,
            noise,
            mask,
            total,
            reconstruction,
        })
    }

    /// One joint optimization step; draws timesteps and noise from the trainer's stream.
    pub fn train_step(&mut self, batch: &Batch<F>) -> Result<StepLosses> {
        let draws = Draws::sample(batch.images.shape(), &self.sched, &mut self.rng)?;
        self.train_step_with(batch, &draws)
    }

    /// Loss values on a fixed batch and draws, without updating parameters.
    pub fn evaluate_with(&self, batch: &Batch<F>, draws: &Draws<F>) -> Result<StepLosses> {
        let graph = self.build_graph(batch, draws)?;
        let value = |v: Var| graph.tape.value(v).item().map(|x| x.as_f64());
        Ok(StepLosses {
            noise: value(graph.noise)?,
            mask: value(graph.mask)?,
            total: value(graph.total)?,
        })
    }

    pub fn train_step_with(&mut self, batch: &Batch<F>, draws: &Draws<F>) -> Result<StepLosses> {
        let graph = self.build_graph(batch, draws)?;
        let value = |v: Var| graph.tape.value(v).item().map(|x| x.as_f64());
        let losses = StepLosses {
            noise: value(graph.noise)?,
            mask: value(graph.mask)?,
            total: value(graph.total)?,
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite(self.diagnostics(&losses, draws, "loss")));
        }
        let mut vars = graph.denoiser.vars().to_vec();
        vars.extend_from_slice(graph.segmenter.vars());
        let mut den_grads = graph.tape.gradient(graph.total, &vars)?;
        let seg_grads = den_grads.split_off(graph.denoiser.vars().len());
        drop(graph);
        self.denoiser_adam
            .step(self.bundle.denoiser.params_mut().tensors_mut(), &den_grads)?;
        self.segmenter_adam
            .step(self.bundle.segmenter.params_mut().tensors_mut(), &seg_grads)?;
        self.step += 1;
        if !self.bundle.all_finite() {
            return Err(Error::NonFinite(self.diagnostics(&losses, draws, "parameters")));
        }
        Ok(losses)
    }

    fn diagnostics(&self, losses: &StepLosses, draws: &Draws<F>, what: &str) -> String {
        let mut out = format!(
            "non-finite {what} at step {}: noise={} mask={} total={}\n",
            self.step + 1,
            losses.noise,
            losses.mask,
            losses.total
        );
        let _ = writeln!(out, "t_s={:?} t_b={:?}", draws.steps.small, draws.steps.large);
        for (net, store) in [
            ("denoiser", self.bundle.denoiser.params()),
            ("segmenter", self.bundle.segmenter.params()),
        ] {
            for (name, t) in store.names().iter().zip(store.tensors()) {
                if !t.is_finite() {
                    let _ = writeln!(out, "{net}.{name} holds non-finite values");
                }
            }
        }
        out
    }
}
