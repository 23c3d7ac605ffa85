use crate::error::{ensure, Result};
use crate::numerics::{Element, Rng, Tape, Tensor, Var};
use crate::schedule::NoisePredictor;

use super::layers::{AttentionBlock, Conv, GroupNorm, Linear, ResBlock};
use super::params::{Bound, ParamStore};
use super::{check_spatial, embedding_batch, DenoiserConfig};

/// Residual U-Net predicting the injected noise from `(x_t, t)`.
#[derive(Debug, Clone)]
pub struct Denoiser<F> {
    config: DenoiserConfig,
    params: ParamStore<F>,
    time_in: Linear,
    time_out: Linear,
    conv_in: Conv,
    down: Vec<ResBlock>,
    mid: ResBlock,
    attention: Option<AttentionBlock>,
    up: Vec<ResBlock>,
    out_norm: GroupNorm,
    conv_out: Conv,
}

impl<F: Element> Denoiser<F> {
    pub fn new(config: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let b = config.base_channels;
        let td = config.time_embed_dim;
        let time_in = Linear::new(&mut p, "time.fc1", td, td, rng);
        let time_out = Linear::new(&mut p, "time.fc2", td, td, rng);
        let conv_in = Conv::new(&mut p, "conv_in", config.in_channels, b, 3, rng);
        let widths: Vec<usize> = (0..config.depth).map(|i| b << i).collect();
        let mut down = Vec::new();
        let mut prev = b;
        for (i, &w) in widths.iter().enumerate() {
            down.push(ResBlock::new(&mut p, &format!("down{i}"), prev, w, Some(td), rng));
            prev = w;
        }
        let lowest = config.lowest_channels();
        let mid = ResBlock::new(&mut p, "mid", prev, lowest, Some(td), rng);
        let attention = config
            .attention_at_lowest
            .then(|| AttentionBlock::new(&mut p, "mid.attn", lowest, config.attention_heads, rng));
        let mut up = Vec::new();
        prev = lowest;
        for (i, &w) in widths.iter().enumerate().rev() {
            up.push(ResBlock::new(&mut p, &format!("up{i}"), prev + w, w, Some(td), rng));
            prev = w;
        }
        let out_norm = GroupNorm::new(&mut p, "out_norm", b);
        let conv_out = Conv::zeroed(&mut p, "conv_out", b, config.in_channels, 3);
        Ok(Denoiser {
            config,
            params: p,
            time_in,
            time_out,
            conv_in,
            down,
            mid,
            attention,
            up,
            out_norm,
            conv_out,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Records the forward pass on `tape`. `t` holds one timestep per sample.
    pub fn forward(&self, tape: &mut Tape<F>, p: &Bound, x: Var, t: &[usize]) -> Result<Var> {
        check_spatial(tape.shape(x), self.config.in_channels, self.config.depth)?;
        let n = tape.shape(x)[0];
        ensure!(
            t.len() == n,
            "denoiser got {} timesteps for a batch of {n}",
            t.len()
        );
        let emb = tape.constant(embedding_batch(t, self.config.time_embed_dim)?);
        let h = self.time_in.forward(tape, p, emb)?;
        let h = tape.silu(h);
        let h = self.time_out.forward(tape, p, h)?;
        let time = tape.silu(h);

        let mut h = self.conv_in.forward(tape, p, x)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for block in &self.down {
            h = block.forward(tape, p, h, Some(time))?;
            skips.push(h);
            h = tape.avg_pool2(h)?;
        }
        h = self.mid.forward(tape, p, h, Some(time))?;
        if let Some(attn) = &self.attention {
            h = attn.forward(tape, p, h)?;
        }
        for block in &self.up {
            let skip = skips.pop().expect("one skip per level");
            h = tape.upsample2(h)?;
            h = tape.concat_channels(h, skip)?;
            h = block.forward(tape, p, h, Some(time))?;
        }
        let h = self.out_norm.forward(tape, p, h)?;
        let h = tape.silu(h);
        self.conv_out.forward(tape, p, h)
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, x_t: &Tensor<F>, t: &[usize]) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(x_t.clone());
        let out = self.forward(&mut tape, &p, x, t)?;
        Ok(tape.value(out).clone())
    }
}

impl<F: Element> NoisePredictor<F> for Denoiser<F> {
    fn predict_noise(&self, x_t: &Tensor<F>, t: &[usize]) -> Result<Tensor<F>> {
        self.predict(x_t, t)
    }
}
