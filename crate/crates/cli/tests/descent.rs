use adk_cli::toy::toy_texture;
use adk_core::losses::LossWeights;
use adk_core::models::{DenoiserConfig, ModelBundle, SegmenterConfig};
use adk_core::numerics::Rng;
use adk_core::pipeline::{assemble_batch, TrainConfig, Trainer};
use adk_core::schedule::NoiseSchedule;
use adk_core::synth::{ForegroundMode, SynthConfig};

/// Total loss at step 1 and step `steps` for one seed.
fn first_and_last(seed: u64, steps: usize) -> (f64, f64) {
    let mut rng = Rng::new(seed, "images");
    let pool: Vec<_> = (0..16).map(|_| toy_texture(&mut rng, 32, 3)).collect();
    let den = DenoiserConfig {
        base_channels: 8,
        time_embed_dim: 32,
        ..DenoiserConfig::default()
    };
    let seg = SegmenterConfig {
        base_channels: 8,
        ..SegmenterConfig::default()
    };
    let bundle = ModelBundle::new(&den, &seg, &Rng::new(seed, "init")).unwrap();
    let config = TrainConfig {
        batch_size: 8,
        normals_per_batch: 4,
        learning_rate: 2e-3,
        seed,
        ..TrainConfig::default()
    };
    let synth = SynthConfig {
        foreground: ForegroundMode::Texture,
        ..SynthConfig::default()
    };
    let sched = NoiseSchedule::linear(1000, 1e-4, 1e-2, 300).unwrap();
    let mut trainer = Trainer::new(bundle, sched, LossWeights::default(), config).unwrap();
    let mut data = trainer.data_rng();
    let mut totals = Vec::new();
    for _ in 0..steps {
        let batch = assemble_batch(&pool, 8, 4, &synth, None, &mut data).unwrap();
        totals.push(trainer.train_step(&batch).unwrap().total);
    }
    (totals[0], totals[steps - 1])
}

#[test]
fn fifty_steps_reduce_total_loss_median_over_seeds() {
    let mut drops: Vec<f64> = (1..=3)
        .map(|seed| {
            let (first, last) = first_and_last(seed, 50);
            last - first
        })
        .collect();
    drops.sort_by(f64::total_cmp);
    assert!(drops[1] < 0.0, "median change in total loss {drops:?}");
}
