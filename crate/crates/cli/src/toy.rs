//! Procedural striped and checkerboard textures for zero-download runs.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use adk_core::image::write_png;
use adk_core::numerics::{Rng, Tensor};
use adk_core::synth::generate_anomaly;
use anyhow::{Context, Result};

use crate::config::RunConfig;

/// One normal texture `[channels, size, size]` in `[−1, 1]`.
pub fn toy_texture(rng: &mut Rng, size: usize, channels: usize) -> Tensor<f32> {
    let dark: Vec<f64> = [0.2, 0.25, 0.3].iter().map(|c| c + rng.uniform_in(-0.05, 0.05)).collect();
    let light: Vec<f64> = [0.75, 0.7, 0.6].iter().map(|c| c + rng.uniform_in(-0.05, 0.05)).collect();
    let pattern: Box<dyn Fn(f64, f64) -> f64> = if rng.uniform() < 0.5 {
        let angle = rng.uniform_in(0.0, PI);
        let period = rng.uniform_in(8.0, 14.0);
        let phase = rng.uniform_in(0.0, TAU);
        let (c, s) = (angle.cos(), angle.sin());
        Box::new(move |y, x| 0.5 + 0.5 * (TAU * (x * c + y * s) / period + phase).sin())
    } else {
        let cell = rng.int_inclusive(6, 12) as f64;
        let (oy, ox) = (rng.uniform_in(0.0, cell), rng.uniform_in(0.0, cell));
        Box::new(move |y, x| {
            let parity = ((y + oy) / cell).floor() + ((x + ox) / cell).floor();
            parity.rem_euclid(2.0)
        })
    };
    let mut data = vec![0f32; channels * size * size];
    for y in 0..size {
        for x in 0..size {
            let t = pattern(y as f64, x as f64);
            for ch in 0..channels {
                let (a, b) = if channels == 1 {
                    (dark.iter().sum::<f64>() / 3.0, light.iter().sum::<f64>() / 3.0)
                } else {
                    (dark[ch], light[ch])
                };
                let v = a + (b - a) * t + 0.02 * rng.normal();
                data[(ch * size + y) * size + x] = (2.0 * v - 1.0).clamp(-1.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(vec![channels, size, size], data).expect("shape matches data")
}

/// Writes a toy category under `root/category` in the usual layout; test
/// anomalies come from the synthesizer on a separate random stream.
pub fn write_toy_dataset(root: &Path, config: &RunConfig) -> Result<()> {
    let (size, channels, seed) = (config.image_size, config.channels, config.seed);
    let (train_count, test_count) = (config.toy.train_images, config.toy.test_images);
    let base = root.join(&config.category);
    let dirs = ["train/good", "test/good", "test/synthetic", "ground_truth/synthetic"];
    for d in dirs {
        std::fs::create_dir_all(base.join(d)).with_context(|| format!("creating {}", base.join(d).display()))?;
    }
    let mut rng = Rng::new(seed, "toy/train");
    for i in 0..train_count {
        write_png(&toy_texture(&mut rng, size, channels), &base.join(format!("train/good/{i:03}.png")))?;
    }
    let anomalous = (test_count as f64 * config.toy.anomalous_fraction).round() as usize;
    let mut rng = Rng::new(seed, "toy/test");
    let mut defects = Rng::new(seed, "toy/defects");
    for i in 0..test_count {
        let normal = toy_texture(&mut rng, size, channels);
        if i < anomalous {
            let sample = generate_anomaly(&normal, None, &config.synth, &mut defects)?;
            write_png(&sample.image, &base.join(format!("test/synthetic/{i:03}.png")))?;
            adk_core::image::write_gray(
                &sample.mask.to_gray(),
                &base.join(format!("ground_truth/synthetic/{i:03}_mask.png")),
            )?;
        } else {
            write_png(&normal, &base.join(format!("test/good/{i:03}.png")))?;
        }
    }
    Ok(())
}
