use std::path::{Path, PathBuf};

use adk_core::losses::LossWeights;
use adk_core::models::{DenoiserConfig, SegmenterConfig};
use adk_core::pipeline::TrainConfig;
use adk_core::schedule::{self, NoiseSchedule};
use adk_core::synth::{ForegroundMode, SynthConfig};
use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use toml::Value;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "ADK_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub tau: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            timesteps: schedule::DEFAULT_TIMESTEPS,
            tau: schedule::DEFAULT_TAU,
            beta_start: schedule::DEFAULT_BETA_START,
            beta_end: schedule::DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end, self.tau)?)
    }
}

/// Every setting a command may read. Serialized as TOML with kebab-case keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub category: String,
    pub image_size: usize,
    /// 1 for grayscale, 3 for RGB.
    pub channels: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Checkpoint to load; defaults to `<output-dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Image file or directory for `infer`.
    pub input: Option<PathBuf>,
    pub texture_corpus: Option<PathBuf>,
    /// Number of samples `synth` writes.
    pub synth_count: usize,
    /// Held-out share of training normals used for validation loss.
    pub validation_fraction: f64,
    pub validation_batches: usize,
    pub fpr_limit: f64,
    pub iterative_start: usize,
    pub bench_images: usize,
    /// Write per-image heatmaps and reconstructions during `eval`.
    pub save_eval_images: bool,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub segmenter: SegmenterConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub toy: ToyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ToyConfig {
    pub train_images: usize,
    pub test_images: usize,
    pub anomalous_fraction: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            train_images: 200,
            test_images: 100,
            anomalous_fraction: 0.5,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_root: PathBuf::from("data"),
            category: "toy".to_string(),
            image_size: 64,
            channels: 3,
            output_dir: PathBuf::from("out"),
            seed: 0,
            checkpoint: None,
            input: None,
            texture_corpus: None,
            synth_count: 32,
            validation_fraction: 0.1,
            validation_batches: 2,
            fpr_limit: adk_core::metrics::DEFAULT_FPR_LIMIT,
            iterative_start: adk_core::pipeline::DEFAULT_ITERATIVE_START,
            bench_images: 2,
            save_eval_images: false,
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserConfig::default(),
            segmenter: SegmenterConfig::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            synth: SynthConfig {
                foreground: ForegroundMode::Texture,
                ..SynthConfig::default()
            },
            toy: ToyConfig::default(),
        }
    }
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a flag value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Every dotted key path present in `table`, including nested ones.
fn key_paths(table: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if let Value::Table(inner) = v {
            key_paths(inner, &path, out);
        }
        out.push(path);
    }
}

/// Resolves a flag name to a key path: exact dotted paths win, otherwise a
/// bare name must match exactly one leaf.
fn resolve_key(defaults: &toml::Table, key: &str) -> Result<Vec<String>> {
    let mut paths = Vec::new();
    key_paths(defaults, "", &mut paths);
    if paths.iter().any(|p| p == key) {
        return Ok(key.split('.').map(str::to_string).collect());
    }
    let hits: Vec<&String> = paths
        .iter()
        .filter(|p| p.rsplit('.').next() == Some(key))
        .collect();
    match hits.as_slice() {
        [one] => Ok(one.split('.').map(str::to_string).collect()),
        [] => {
            // Optional keys are absent from the serialized defaults.
            let optional = ["checkpoint", "input", "texture-corpus"];
            if optional.contains(&key) {
                Ok(vec![key.to_string()])
            } else {
                bail!("unknown configuration key `{key}`")
            }
        }
        many => bail!(
            "key `{key}` is ambiguous; use one of {}",
            many.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn set_path(root: &mut toml::Table, path: &[String], value: Value) {
    let (last, parents) = path.split_last().expect("nonempty key path");
    let mut table = root;
    for p in parents {
        table = table
            .entry(p.clone())
            .or_insert_with(|| Value::Table(toml::Table::new()))
            .as_table_mut()
            .expect("config sections are tables");
    }
    table.insert(last.clone(), value);
}

impl RunConfig {
    /// Defaults, then the file (if any), then `--key value` overrides, then `ADK_SEED`.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)], env_seed: Option<&str>) -> Result<Self> {
        let defaults = Value::try_from(RunConfig::default()).context("serializing defaults")?;
        let default_table = defaults.as_table().expect("config is a table").clone();
        let mut merged = defaults;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let parsed: Value = toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut merged, parsed);
        }
        let table = merged.as_table_mut().expect("config is a table");
        for (key, raw) in overrides {
            let path = resolve_key(&default_table, key)?;
            set_path(table, &path, parse_literal(raw));
        }
        let mut config: RunConfig = merged.try_into().context("invalid configuration")?;
        if let Some(seed) = env_seed {
            config.seed = seed
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got `{seed}`"))?;
        }
        config.train.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.channels == 1 || self.channels == 3,
            "channels must be 1 or 3, got {}",
            self.channels
        );
        ensure!(
            self.denoiser.in_channels == self.channels,
            "denoiser in-channels ({}) must equal channels ({})",
            self.denoiser.in_channels,
            self.channels
        );
        ensure!(
            self.segmenter.in_channels == 2 * self.channels,
            "segmenter in-channels ({}) must be twice channels ({})",
            self.segmenter.in_channels,
            self.channels
        );
        let factor = 1 << self.denoiser.depth.max(self.segmenter.depth);
        ensure!(
            self.image_size > 0 && self.image_size.is_multiple_of(factor),
            "image-size {} must be divisible by {factor}",
            self.image_size
        );
        ensure!(
            (0.0..1.0).contains(&self.validation_fraction),
            "validation-fraction must lie in [0, 1)"
        );
        ensure!(
            self.fpr_limit > 0.0 && self.fpr_limit <= 1.0,
            "fpr-limit must lie in (0, 1]"
        );
        ensure!(
            (0.0..=1.0).contains(&self.toy.anomalous_fraction),
            "toy anomalous-fraction must lie in [0, 1]"
        );
        self.denoiser.validate()?;
        self.segmenter.validate()?;
        self.loss.validate()?;
        self.synth.validate()?;
        let sched = self.schedule.build()?;
        self.train.validate(&sched)?;
        ensure!(
            self.iterative_start >= 1 && self.iterative_start < sched.timesteps(),
            "iterative-start must lie in [1, timesteps)"
        );
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.ckpt"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Splits `--key value` / `--key=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            bail!("expected a `--key value` flag, got `{arg}`");
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let value = it
                .next()
                .with_context(|| format!("flag `--{key}` needs a value"))?;
            out.push((key.to_string(), value.clone()));
        }
    }
    Ok(out)
}
