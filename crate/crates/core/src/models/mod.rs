//! The denoiser and segmenter networks, their configs and checkpoints.

mod denoiser;
mod layers;
mod params;
mod segmenter;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::checkpoint::Checkpoint;
use crate::numerics::{Element, Rng, Tensor};

pub use denoiser::Denoiser;
pub use layers::groups_for;
pub use params::{Bound, ParamId, ParamStore};
pub use segmenter::Segmenter;

/// Version of the bundle metadata layout stored in checkpoints.
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DenoiserConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub attention_at_lowest: bool,
    pub attention_heads: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            in_channels: 3,
            base_channels: 32,
            depth: 2,
            time_embed_dim: 128,
            attention_at_lowest: true,
            attention_heads: 4,
        }
    }
}

impl DenoiserConfig {
    /// Channel count at the bottleneck.
    pub fn lowest_channels(&self) -> usize {
        self.base_channels << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.in_channels >= 1, "denoiser in-channels must be positive");
        ensure!(self.depth >= 1, "denoiser depth must be at least 1, got {}", self.depth);
        ensure!(
            self.depth <= 6,
            "denoiser depth {} is too large for this implementation",
            self.depth
        );
        ensure!(
            self.base_channels >= 8,
            "denoiser base-channels must be at least 8, got {}",
            self.base_channels
        );
        ensure!(
            self.time_embed_dim >= 2 && self.time_embed_dim.is_multiple_of(2),
            "time-embed-dim must be a positive even number, got {}",
            self.time_embed_dim
        );
        if self.attention_at_lowest {
            ensure!(
                self.attention_heads >= 1 && self.lowest_channels().is_multiple_of(self.attention_heads),
                "attention-heads {} must divide the bottleneck width {}",
                self.attention_heads,
                self.lowest_channels()
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SegmenterConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            in_channels: 6,
            base_channels: 32,
            depth: 2,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.in_channels >= 2 && self.in_channels.is_multiple_of(2),
            "segmenter in-channels must be even, got {}",
            self.in_channels
        );
        ensure!(self.depth >= 1, "segmenter depth must be at least 1, got {}", self.depth);
        ensure!(
            self.depth <= 6,
            "segmenter depth {} is too large for this implementation",
            self.depth
        );
        ensure!(self.base_channels >= 1, "segmenter base-channels must be positive");
        Ok(())
    }
}

/// Sinusoidal embedding of a timestep: interleaved `[sin(t·ω_k), cos(t·ω_k)]`
/// with `ω_k = 10000^(−2k/dim)`.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    ensure!(dim.is_multiple_of(2), "time embedding dimension must be even, got {dim}");
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        let angle = t as f64 * omega;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

/// Checks that both spatial dimensions of `[N, C, H, W]` are divisible by `2^depth`.
pub(crate) fn check_spatial(shape: &[usize], channels: usize, depth: usize) -> Result<()> {
    ensure!(
        shape.len() == 4,
        "expected a [N, C, H, W] batch, got shape {shape:?}"
    );
    if shape[1] != channels {
        return Err(Error::ShapeMismatch {
            expected: vec![shape[0], channels, shape[2], shape[3]],
            actual: shape.to_vec(),
        });
    }
    let factor = 1usize << depth;
    ensure!(
        shape[2].is_multiple_of(factor) && shape[3].is_multiple_of(factor),
        "spatial size {}x{} is not divisible by 2^{depth}",
        shape[2],
        shape[3]
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct BundleMeta {
    bundle_version: u32,
    denoiser: DenoiserConfig,
    segmenter: SegmenterConfig,
}

/// Both networks together; the unit that is trained, saved and loaded.
#[derive(Debug, Clone)]
pub struct ModelBundle<F> {
    pub denoiser: Denoiser<F>,
    pub segmenter: Segmenter<F>,
}

impl<F: Element> ModelBundle<F> {
    pub fn new(denoiser: &DenoiserConfig, segmenter: &SegmenterConfig, rng: &Rng) -> Result<Self> {
        ensure!(
            segmenter.in_channels == 2 * denoiser.in_channels,
            "segmenter in-channels {} must be twice the image channels {}",
            segmenter.in_channels,
            denoiser.in_channels
        );
        Ok(ModelBundle {
            denoiser: Denoiser::new(denoiser.clone(), &mut rng.fork("denoiser"))?,
            segmenter: Segmenter::new(segmenter.clone(), &mut rng.fork("segmenter"))?,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.denoiser.params().all_finite() && self.segmenter.params().all_finite()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let meta = BundleMeta {
            bundle_version: BUNDLE_VERSION,
            denoiser: self.denoiser.config().clone(),
            segmenter: self.segmenter.config().clone(),
        };
        let metadata = serde_json::to_string(&meta)
            .map_err(|e| Error::Checkpoint(format!("encoding metadata: {e}")))?;
        let mut entries = Vec::new();
        for (prefix, store) in [
            ("denoiser", self.denoiser.params()),
            ("segmenter", self.segmenter.params()),
        ] {
            for (name, t) in store.names().iter().zip(store.tensors()) {
                entries.push((format!("{prefix}.{name}"), t.clone()));
            }
        }
        Checkpoint { metadata, entries }.write_to(w)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let ckpt = Checkpoint::<F>::read_from(r)?;
        let meta: BundleMeta = serde_json::from_str(&ckpt.metadata)
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        if meta.bundle_version != BUNDLE_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported bundle version {}",
                meta.bundle_version
            )));
        }
        let mut bundle = Self::new(&meta.denoiser, &meta.segmenter, &Rng::new(0, "load"))?;
        bundle
            .denoiser
            .params_mut()
            .load_named(|name| ckpt.get(&format!("denoiser.{name}")))?;
        bundle
            .segmenter
            .params_mut()
            .load_named(|name| ckpt.get(&format!("segmenter.{name}")))?;
        let expected = bundle.denoiser.params().len() + bundle.segmenter.params().len();
        if ckpt.entries.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {expected}",
                ckpt.entries.len()
            )));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut file)
    }
}

/// Convenience: stacks a 1-D embedding per sample into `[N, dim]`.
pub(crate) fn embedding_batch<F: Element>(t: &[usize], dim: usize) -> Result<Tensor<F>> {
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        data.extend(time_embedding(step, dim)?.into_iter().map(F::lit));
    }
    Tensor::new(vec![t.len(), dim], data)
}
