use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adk_core::image::{heatmap_to_gray, write_gray, write_png};
use adk_core::metrics::{evaluate, EvalItem, EvalReport, TimingStats};
use adk_core::models::ModelBundle;
use adk_core::numerics::{Rng, Tensor};
use adk_core::pipeline::{
    assemble_batch, bench_paradigms, infer, Draws, ParadigmRow, StepLosses, Trainer,
};
use adk_core::synth::{generate_anomaly, SynthSample, TextureCorpus};
use anyhow::{ensure, Context, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{ingest, load_image, load_mask, DatasetIndex};
use crate::outputs::Outputs;
use crate::plot::line_chart;
use crate::toy::write_toy_dataset;

fn categories(config: &RunConfig) -> Vec<String> {
    config
        .category
        .split(',')
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty())
        .collect()
}

fn index_for(config: &RunConfig, category: &str) -> Result<DatasetIndex> {
    ingest(&config.dataset_root, category)
        .with_context(|| format!("indexing category `{category}` under {}", config.dataset_root.display()))
}

fn load_all(paths: &[PathBuf], config: &RunConfig) -> Result<Vec<Tensor<f32>>> {
    paths
        .iter()
        .map(|p| load_image(p, config.image_size, config.channels))
        .collect()
}

fn corpus(config: &RunConfig) -> Result<Option<TextureCorpus>> {
    config
        .texture_corpus
        .as_deref()
        .map(|dir| TextureCorpus::open(dir).with_context(|| format!("opening texture corpus {}", dir.display())))
        .transpose()
}

fn load_bundle(config: &RunConfig) -> Result<ModelBundle<f32>> {
    let path = config.checkpoint_path();
    let bundle = ModelBundle::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    ensure!(
        bundle.denoiser.config().in_channels == config.channels,
        "checkpoint expects {} channels, config has {}",
        bundle.denoiser.config().in_channels,
        config.channels
    );
    Ok(bundle)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string()
}

/// Writes the procedural toy category into the output directory.
pub fn command_toy(config: &RunConfig) -> Result<PathBuf> {
    let out = Outputs::new(&config.output_dir)?;
    let result = write_toy_dataset(&config.output_dir, config);
    if result.is_err() {
        let _ = std::fs::remove_dir_all(config.output_dir.join(&config.category));
    }
    result?;
    out.commit();
    Ok(config.output_dir.join(&config.category))
}

/// Writes synthetic image/mask pairs and a manifest built from training normals.
pub fn command_synth(config: &RunConfig) -> Result<PathBuf> {
    let mut out = Outputs::new(&config.output_dir)?;
    let corpus = corpus(config)?;
    let mut pool = Vec::new();
    for category in categories(config) {
        pool.extend(load_all(&index_for(config, &category)?.train, config)?);
    }
    ensure!(!pool.is_empty(), "no training images found");
    let mut rng = Rng::new(config.seed, "synth");
    let normal_share = config.train.normals_per_batch as f64 / config.train.batch_size as f64;
    let mut manifest = String::from("image\tmask\tlabel\n");
    let mut written = 0;
    let mut failures = 0;
    while written < config.synth_count {
        let source = &pool[rng.below(pool.len())];
        let sample = if rng.uniform() < normal_share {
            SynthSample::normal(source.clone())?
        } else {
            match generate_anomaly(source, corpus.as_ref(), &config.synth, &mut rng) {
                Ok(s) => s,
                Err(e) => {
                    failures += 1;
                    ensure!(failures < 100 + 10 * config.synth_count, "synthesis keeps failing: {e}");
                    continue;
                }
            }
        };
        let image = format!("synth/images/{written:04}.png");
        let mask = format!("synth/masks/{written:04}_mask.png");
        write_png(&sample.image, &out.path(&image)?)?;
        write_gray(&sample.mask.to_gray(), &out.path(&mask)?)?;
        manifest.push_str(&format!("{image}\t{mask}\t{}\n", sample.label));
        written += 1;
    }
    let path = out.write_string("synth/manifest.txt", &manifest)?;
    out.commit();
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainSummary {
    pub steps: usize,
    pub final_losses: Option<[f64; 3]>,
    pub best_validation: Option<f64>,
    pub seconds: f64,
}

fn row(l: &StepLosses) -> [f64; 3] {
    [l.noise, l.mask, l.total]
}

/// Joint training; writes `model.ckpt`, `best.ckpt` (lowest validation
/// loss), `loss.csv`, `validation.csv` and `loss.png`.
pub fn command_train(config: &RunConfig) -> Result<TrainSummary> {
    let start = Instant::now();
    let mut out = Outputs::new(&config.output_dir)?;
    out.write_string("config.toml", &config.to_toml())?;
    let corpus = corpus(config)?;
    let mut train_pool = Vec::new();
    let mut val_pool = Vec::new();
    for category in categories(config) {
        let images = load_all(&index_for(config, &category)?.train, config)?;
        let held = (images.len() as f64 * config.validation_fraction).floor() as usize;
        let split = images.len() - held;
        val_pool.extend_from_slice(&images[split..]);
        train_pool.extend_from_slice(&images[..split]);
    }
    ensure!(!train_pool.is_empty(), "no training images found");
    let sched = config.schedule.build()?;
    let bundle = ModelBundle::<f32>::new(&config.denoiser, &config.segmenter, &Rng::new(config.seed, "init"))?;
    let mut trainer = Trainer::new(bundle, sched, config.loss.clone(), config.train.clone())?;

    let mut validation = Vec::new();
    if !val_pool.is_empty() {
        let mut rng = Rng::new(config.seed, "validation");
        for _ in 0..config.validation_batches {
            let batch = assemble_batch(
                &val_pool,
                config.train.batch_size,
                config.train.normals_per_batch,
                &config.synth,
                corpus.as_ref(),
                &mut rng,
            )?;
            let draws = Draws::sample(batch.images.shape(), &trainer.sched, &mut rng)?;
            validation.push((batch, draws));
        }
    }

    let mut losses_csv = csv::Writer::from_writer(out.create("loss.csv")?);
    losses_csv.write_record(["step", "epoch", "noise", "mask", "total"])?;
    let mut val_csv = csv::Writer::from_writer(out.create("validation.csv")?);
    val_csv.write_record(["epoch", "noise", "mask", "total"])?;
    let mut history: Vec<[f64; 3]> = Vec::new();
    let mut best: Option<f64> = None;
    let mut data_rng = trainer.data_rng();
    for epoch in 1..=config.train.epochs {
        for _ in 0..config.train.steps_per_epoch {
            let batch = assemble_batch(
                &train_pool,
                config.train.batch_size,
                config.train.normals_per_batch,
                &config.synth,
                corpus.as_ref(),
                &mut data_rng,
            )?;
            let losses = trainer
                .train_step(&batch)
                .with_context(|| format!("training step {}", trainer.steps_taken() + 1))?;
            let r = row(&losses);
            losses_csv.write_record([
                trainer.steps_taken().to_string(),
                epoch.to_string(),
                r[0].to_string(),
                r[1].to_string(),
                r[2].to_string(),
            ])?;
            history.push(r);
        }
        if !validation.is_empty() {
            let mut sum = [0.0; 3];
            for (batch, draws) in &validation {
                let r = row(&trainer.evaluate_with(batch, draws)?);
                for k in 0..3 {
                    sum[k] += r[k] / validation.len() as f64;
                }
            }
            val_csv.write_record([
                epoch.to_string(),
                sum[0].to_string(),
                sum[1].to_string(),
                sum[2].to_string(),
            ])?;
            if best.is_none_or(|b| sum[2] < b) {
                best = Some(sum[2]);
                trainer.bundle.save(&out.path("best.ckpt")?)?;
            }
        }
        let last = history.last().copied().unwrap_or([f64::NAN; 3]);
        eprintln!(
            "epoch {epoch}/{}: step {} total {:.5} (noise {:.5}, mask {:.5})",
            config.train.epochs,
            trainer.steps_taken(),
            last[2],
            last[0],
            last[1]
        );
    }
    losses_csv.flush()?;
    val_csv.flush()?;
    drop(losses_csv);
    drop(val_csv);
    trainer.bundle.save(&out.path("model.ckpt")?)?;
    let column = |k: usize| history.iter().map(|r| r[k]).collect::<Vec<_>>();
    let (noise, mask, total) = (column(0), column(1), column(2));
    let chart = line_chart(&[
        (&total, [-1.0, -1.0, -1.0]),
        (&noise, [-1.0, -0.2, 1.0]),
        (&mask, [1.0, -0.6, -0.6]),
    ]);
    write_png(&chart, &out.path("loss.png")?)?;
    out.commit();
    Ok(TrainSummary {
        steps: trainer.steps_taken(),
        final_losses: history.last().copied(),
        best_validation: best,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        ensure!(!files.is_empty(), "no PNG files in {}", path.display());
        Ok(files)
    } else {
        ensure!(path.is_file(), "input {} does not exist", path.display());
        Ok(vec![path.to_path_buf()])
    }
}

/// Heatmaps, reconstructions and a score table for one image or a directory.
pub fn command_infer(config: &RunConfig) -> Result<Vec<(PathBuf, f64)>> {
    let input = config.input.as_deref().context("infer needs `input` (an image or a directory)")?;
    let files = inputs(input)?;
    let bundle = load_bundle(config)?;
    let sched = config.schedule.build()?;
    let mut out = Outputs::new(&config.output_dir)?;
    let mut scores = csv::Writer::from_writer(out.create("scores.csv")?);
    scores.write_record(["image", "image-score", "denoiser-forwards", "segmenter-forwards", "seconds"])?;
    let base = Rng::new(config.seed, "infer");
    let mut results = Vec::new();
    for (i, file) in files.iter().enumerate() {
        let x = load_image(file, config.image_size, config.channels)?;
        let r = infer(&bundle, &x, &sched, &config.train, &mut base.fork(&i.to_string()))?;
        let name = stem(file);
        write_gray(&heatmap_to_gray(&r.heatmap, r.height, r.width), &out.path(format!("heatmaps/{name}.png"))?)?;
        write_png(&r.reconstruction, &out.path(format!("reconstructions/{name}.png"))?)?;
        scores.write_record([
            file.display().to_string(),
            r.image_score.to_string(),
            r.denoiser_forwards.to_string(),
            r.segmenter_forwards.to_string(),
            r.wall_time.as_secs_f64().to_string(),
        ])?;
        results.push((file.clone(), r.image_score));
    }
    scores.flush()?;
    drop(scores);
    out.commit();
    Ok(results)
}

/// Scores every test image and writes `report.json`, `report.txt` and `scores.csv`.
pub fn command_eval(config: &RunConfig) -> Result<EvalReport> {
    let bundle = load_bundle(config)?;
    let sched = config.schedule.build()?;
    let mut out = Outputs::new(&config.output_dir)?;
    let mut scores = csv::Writer::from_writer(out.create("scores.csv")?);
    scores.write_record(["category", "image", "label", "image-score"])?;
    let mut rows = Vec::new();
    for category in categories(config) {
        let index = index_for(config, &category)?;
        ensure!(!index.test.is_empty(), "category `{category}` has no test images");
        let base = Rng::new(config.seed, &format!("eval/{category}"));
        let mut items = Vec::with_capacity(index.test.len());
        let (mut forwards, mut seconds) = (0usize, 0.0);
        for (i, entry) in index.test.iter().enumerate() {
            let x = load_image(&entry.image, config.image_size, config.channels)?;
            let mask = load_mask(entry, config.image_size)?;
            let r = infer(&bundle, &x, &sched, &config.train, &mut base.fork(&i.to_string()))?;
            forwards += r.denoiser_forwards;
            seconds += r.wall_time.as_secs_f64();
            if config.save_eval_images {
                let name = format!("{category}/{}_{}", entry.defect, stem(&entry.image));
                write_gray(
                    &heatmap_to_gray(&r.heatmap, r.height, r.width),
                    &out.path(format!("heatmaps/{name}.png"))?,
                )?;
                write_png(&r.reconstruction, &out.path(format!("reconstructions/{name}.png"))?)?;
            }
            scores.write_record([
                category.clone(),
                entry.image.display().to_string(),
                u8::from(entry.label()).to_string(),
                r.image_score.to_string(),
            ])?;
            items.push(EvalItem {
                heatmap: r.heatmap,
                image_score: r.image_score,
                mask,
                label: entry.label(),
            });
        }
        let mut report = evaluate(&category, &items, config.fpr_limit)?;
        report.timing = Some(TimingStats {
            forwards_per_image: forwards as f64 / items.len() as f64,
            seconds_per_image: seconds / items.len() as f64,
        });
        rows.push(report);
    }
    scores.flush()?;
    drop(scores);
    let report = EvalReport::from_categories(rows, config.fpr_limit)?;
    out.write_string("report.json", &report.to_json())?;
    out.write_string("report.txt", &report.to_table())?;
    out.commit();
    Ok(report)
}

pub fn bench_table(rows: &[ParadigmRow]) -> String {
    let mut s = format!("{:<12}  {:>16}  {:>14}  {:>10}\n", "paradigm", "forwards/image", "seconds/image", "fps");
    for r in rows {
        s.push_str(&format!(
            "{:<12}  {:>16}  {:>14.4}  {:>10.3}\n",
            r.paradigm, r.forwards_per_image, r.seconds_per_image, r.fps
        ));
    }
    let get = |name: &str| rows.iter().find(|r| r.paradigm == name);
    if let (Some(it), Some(ng)) = (get("iterative"), get("norm-guided")) {
        s.push_str(&format!(
            "iterative/norm-guided: forwards {:.1}x, wall-clock {:.1}x\n",
            it.forwards_per_image / ng.forwards_per_image,
            it.seconds_per_image / ng.seconds_per_image
        ));
    }
    s
}

/// Compares iterative, one-step and norm-guided reconstruction cost.
pub fn command_bench(config: &RunConfig) -> Result<Vec<ParadigmRow>> {
    let bundle = load_bundle(config)?;
    let sched = config.schedule.build()?;
    let mut paths = Vec::new();
    for category in categories(config) {
        let index = index_for(config, &category)?;
        paths.extend(index.test.into_iter().map(|e| e.image));
        paths.extend(index.train);
    }
    paths.truncate(config.bench_images.max(1));
    ensure!(!paths.is_empty(), "no images to benchmark");
    let images = load_all(&paths, config)?;
    let rows = bench_paradigms(&bundle.denoiser, &images, &sched, &config.train, config.iterative_start)?;
    let mut out = Outputs::new(&config.output_dir)?;
    out.write_string("bench.json", &serde_json::to_string_pretty(&rows)?)?;
    let table = bench_table(&rows);
    out.write_string("bench.txt", &table)?;
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(table.as_bytes());
    out.commit();
    Ok(rows)
}
