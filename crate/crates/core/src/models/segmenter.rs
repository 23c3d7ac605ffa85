use crate::error::Result;
use crate::numerics::{Element, Rng, Tape, Tensor, Var};

use super::layers::{Conv, GroupNorm, ResBlock};
use super::params::{Bound, ParamStore};
use super::{check_spatial, SegmenterConfig};

/// U-Net mapping the channel-wise concatenation of an image and its
/// reconstruction to a per-pixel anomaly probability.
#[derive(Debug, Clone)]
pub struct Segmenter<F> {
    config: SegmenterConfig,
    params: ParamStore<F>,
    conv_in: Conv,
    down: Vec<ResBlock>,
    mid: ResBlock,
    up: Vec<ResBlock>,
    out_norm: GroupNorm,
    conv_out: Conv,
}

impl<F: Element> Segmenter<F> {
    pub fn new(config: SegmenterConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let b = config.base_channels;
        let conv_in = Conv::new(&mut p, "conv_in", config.in_channels, b, 3, rng);
        let widths: Vec<usize> = (0..config.depth).map(|i| b << i).collect();
        let mut down = Vec::new();
        let mut prev = b;
        for (i, &w) in widths.iter().enumerate() {
            down.push(ResBlock::new(&mut p, &format!("down{i}"), prev, w, None, rng));
            prev = w;
        }
        let lowest = b << config.depth;
        let mid = ResBlock::new(&mut p, "mid", prev, lowest, None, rng);
        let mut up = Vec::new();
        prev = lowest;
        for (i, &w) in widths.iter().enumerate().rev() {
            up.push(ResBlock::new(&mut p, &format!("up{i}"), prev + w, w, None, rng));
            prev = w;
        }
        let out_norm = GroupNorm::new(&mut p, "out_norm", b);
        let conv_out = Conv::new(&mut p, "conv_out", b, 1, 3, rng);
        Ok(Segmenter {
            config,
            params: p,
            conv_in,
            down,
            mid,
            up,
            out_norm,
            conv_out,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Records the forward pass; returns `[N, 1, H, W]` scores in `[0, 1]`.
    pub fn forward(&self, tape: &mut Tape<F>, p: &Bound, x0: Var, x0_hat: Var) -> Result<Var> {
        let images = self.config.in_channels / 2;
        check_spatial(tape.shape(x0), images, self.config.depth)?;
        if tape.shape(x0) != tape.shape(x0_hat) {
            return Err(crate::Error::ShapeMismatch {
                expected: tape.shape(x0).to_vec(),
                actual: tape.shape(x0_hat).to_vec(),
            });
        }
        let x = tape.concat_channels(x0, x0_hat)?;
        let mut h = self.conv_in.forward(tape, p, x)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for block in &self.down {
            h = block.forward(tape, p, h, None)?;
            skips.push(h);
            h = tape.avg_pool2(h)?;
        }
        h = self.mid.forward(tape, p, h, None)?;
        for block in &self.up {
            let skip = skips.pop().expect("one skip per level");
            h = tape.upsample2(h)?;
            h = tape.concat_channels(h, skip)?;
            h = block.forward(tape, p, h, None)?;
        }
        let h = self.out_norm.forward(tape, p, h)?;
        let h = tape.silu(h);
        let logits = self.conv_out.forward(tape, p, h)?;
        Ok(tape.sigmoid(logits))
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, x0: &Tensor<F>, x0_hat: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let a = tape.constant(x0.clone());
        let b = tape.constant(x0_hat.clone());
        let out = self.forward(&mut tape, &p, a, b)?;
        Ok(tape.value(out).clone())
    }
}
