use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{Element, Rng, Tensor};
use crate::schedule::{
    iterative_reconstruct, norm_guided_reconstruct, one_step_reconstruct, NoisePredictor, NoiseSchedule,
};

use super::{CountingPredictor, TrainConfig};

/// Starting timestep of the iterative baseline.
pub const DEFAULT_ITERATIVE_START: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ParadigmRow {
    pub paradigm: String,
    pub forwards_per_image: f64,
    pub seconds_per_image: f64,
    pub fps: f64,
}

/// Times iterative, plain one-step and norm-guided reconstruction on each
/// image, counting denoiser forwards exactly.
pub fn bench_paradigms<F: Element, P: NoisePredictor<F>>(
    denoiser: &P,
    images: &[Tensor<F>],
    sched: &NoiseSchedule,
    config: &TrainConfig,
    iterative_start: usize,
) -> Result<Vec<ParadigmRow>> {
    ensure!(!images.is_empty(), "benchmark needs at least one image");
    config.validate(sched)?;
    let counter = CountingPredictor::new(denoiser);
    let mut rows = Vec::new();
    for paradigm in ["iterative", "one-step", "norm-guided"] {
        counter.reset();
        let mut rng = Rng::new(config.seed, &format!("bench/{paradigm}"));
        let start = Instant::now();
        let mut reported = 0;
        for img in images {
            let batch = img.clone().unsqueeze0();
            let (_, used) = match paradigm {
                "iterative" => iterative_reconstruct(&batch, iterative_start, &counter, &mut rng, sched)?,
                "one-step" => one_step_reconstruct(&batch, config.t_b_infer, &counter, &mut rng, sched)?,
                _ => norm_guided_reconstruct(
                    &batch,
                    config.t_s_infer,
                    config.t_b_infer,
                    config.w,
                    &counter,
                    &mut rng,
                    sched,
                )?,
            };
            reported += used;
        }
        let seconds = start.elapsed().as_secs_f64() / images.len() as f64;
        ensure!(
            reported == counter.calls(),
            "{paradigm}: reported {reported} forwards but counted {}",
            counter.calls()
        );
        rows.push(ParadigmRow {
            paradigm: paradigm.to_string(),
            forwards_per_image: counter.calls() as f64 / images.len() as f64,
            seconds_per_image: seconds,
            fps: 1.0 / seconds.max(f64::MIN_POSITIVE),
        });
    }
    Ok(rows)
}
