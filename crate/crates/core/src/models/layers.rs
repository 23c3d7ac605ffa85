use crate::error::Result;
use crate::numerics::{Element, Rng, Tape, Tensor, Var};

use super::params::{Bound, ParamId, ParamStore};

/// Largest group count not above eight that divides `channels`.
pub fn groups_for(channels: usize) -> usize {
    (1..=8).rev().find(|g| channels.is_multiple_of(*g)).unwrap_or(1)
}

fn uniform_tensor<F: Element>(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::lit(rng.uniform_in(-bound, bound)))
}

#[derive(Debug, Clone)]
pub struct Conv {
    weight: ParamId,
    bias: ParamId,
    padding: usize,
}

impl Conv {
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(rng, &[out_ch, in_ch, kernel, kernel], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Conv {
            weight,
            bias,
            padding: kernel / 2,
        }
    }

    /// Same layout with all weights and biases zero.
    pub fn zeroed<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Conv {
            weight,
            bias,
            padding: kernel / 2,
        }
    }

    pub fn forward<F: Element>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, p[self.weight], 1, self.padding)?;
        tape.add_bias(y, p[self.bias])
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(rng, &[inputs, outputs], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Linear { weight, bias }
    }

    pub fn forward<F: Element>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        tape.add_bias(y, p[self.bias])
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

impl GroupNorm {
    pub fn new<F: Element>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[channels], F::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        GroupNorm {
            gamma,
            beta,
            groups: groups_for(channels),
        }
    }

    pub fn forward<F: Element>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        tape.group_norm(x, p[self.gamma], p[self.beta], self.groups)
    }
}

/// Pre-activation residual block: GN, SiLU, conv, (+ time projection), GN, SiLU, conv.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv,
    time_proj: Option<Linear>,
    norm2: GroupNorm,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        time_dim: Option<usize>,
        rng: &mut Rng,
    ) -> Self {
        ResBlock {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), in_ch),
            conv1: Conv::new(store, &format!("{name}.conv1"), in_ch, out_ch, 3, rng),
            time_proj: time_dim
                .map(|d| Linear::new(store, &format!("{name}.time_proj"), d, out_ch, rng)),
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), out_ch),
            conv2: Conv::new(store, &format!("{name}.conv2"), out_ch, out_ch, 3, rng),
            skip: (in_ch != out_ch)
                .then(|| Conv::new(store, &format!("{name}.skip"), in_ch, out_ch, 1, rng)),
        }
    }

    /// `time` is the activated time embedding `[N, D]` when the block was built with one.
    pub fn forward<F: Element>(
        &self,
        tape: &mut Tape<F>,
        p: &Bound,
        x: Var,
        time: Option<Var>,
    ) -> Result<Var> {
        let h = self.norm1.forward(tape, p, x)?;
        let h = tape.silu(h);
        let mut h = self.conv1.forward(tape, p, h)?;
        if let (Some(proj), Some(time)) = (&self.time_proj, time) {
            let shift = proj.forward(tape, p, time)?;
            h = tape.add_bias(h, shift)?;
        }
        let h = self.norm2.forward(tape, p, h)?;
        let h = tape.silu(h);
        let h = self.conv2.forward(tape, p, h)?;
        let skip = match &self.skip {
            Some(conv) => conv.forward(tape, p, x)?,
            None => x,
        };
        tape.add(skip, h)
    }
}

/// Residual multi-head self-attention over spatial positions.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    norm: GroupNorm,
    query: Conv,
    key: Conv,
    value: Conv,
    out: Conv,
    heads: usize,
}

impl AttentionBlock {
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        AttentionBlock {
            norm: GroupNorm::new(store, &format!("{name}.norm"), channels),
            query: Conv::new(store, &format!("{name}.query"), channels, channels, 1, rng),
            key: Conv::new(store, &format!("{name}.key"), channels, channels, 1, rng),
            value: Conv::new(store, &format!("{name}.value"), channels, channels, 1, rng),
            out: Conv::new(store, &format!("{name}.out"), channels, channels, 1, rng),
            heads,
        }
    }

    pub fn forward<F: Element>(&self, tape: &mut Tape<F>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.norm.forward(tape, p, x)?;
        let q = self.query.forward(tape, p, h)?;
        let k = self.key.forward(tape, p, h)?;
        let v = self.value.forward(tape, p, h)?;
        let a = tape.attention(q, k, v, self.heads)?;
        let o = self.out.forward(tape, p, a)?;
        tape.add(x, o)
    }
}
