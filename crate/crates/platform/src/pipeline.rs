//! End-to-end training and hold-out evaluation over one simulated stack.

use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use thermotwin_core::dataset::{
    chronological_split, crop_rng, fit_normalizer, make_windows, Dataset, NormStats, WindowSample, DEFAULT_STRIDE,
    DEFAULT_TRAIN_FRACTION, TILE_SIZE,
};
use thermotwin_core::meteo::MeteoSeries;
use thermotwin_core::metrics::{compute_metrics, Metrics, DEFAULT_MAPE_FLOOR};
use thermotwin_core::scene::GridScene;
use thermotwin_core::stack::UtciStack;
use thermotwin_core::stvit::{
    persistence_baseline, predict_region, train_with, Bbox, Checkpoint, CheckpointHeader, CroppedWindows, EpochRecord,
    StVitConfig, TrainOptions, TrainReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub stride: usize,
    pub train_fraction: f64,
    /// Side of the square training crops.
    pub crop: usize,
    #[serde(default, with = "opt_secs")]
    pub time_budget: Option<Duration>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            crop: TILE_SIZE,
            time_budget: None,
        }
    }
}

mod opt_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(Duration::from_secs_f64))
    }
}

/// Windows, split and normalization of one stack.
pub struct Prepared {
    pub dataset: Dataset,
    pub stats: NormStats,
    pub train_starts: Vec<usize>,
    pub val_starts: Vec<usize>,
}

pub fn prepare(
    scene: &GridScene,
    stack: &UtciStack,
    series: &MeteoSeries,
    config: &StVitConfig,
    options: &PipelineOptions,
) -> Result<Prepared> {
    let starts = make_windows(stack, series, config.t_in, config.t_out, options.stride)?;
    let (train_starts, val_starts) = chronological_split(&starts, options.train_fraction)?;
    if val_starts.is_empty() {
        bail!("{} windows leave nothing to validate on", starts.len());
    }
    let stats = fit_normalizer(scene, stack, series, &train_starts, config.t_in, config.t_out)?;
    let dataset = Dataset::new(scene, stack, series, &stats)?;
    Ok(Prepared {
        dataset,
        stats,
        train_starts,
        val_starts,
    })
}

/// Validation crops are drawn once from a stream separate from training.
fn validation_samples(prepared: &Prepared, config: &StVitConfig, crop: usize) -> Result<Vec<WindowSample>> {
    prepared
        .val_starts
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut rng = crop_rng(config.seed ^ 0x5eed_0f_7a1, 0, i);
            Ok(prepared
                .dataset
                .random_crop(s, crop, config.t_in, config.t_out, &mut rng)?)
        })
        .collect()
}

pub fn train_model(
    prepared: &Prepared,
    config: &StVitConfig,
    options: &PipelineOptions,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainReport)> {
    let train_set = CroppedWindows {
        dataset: &prepared.dataset,
        starts: prepared.train_starts.clone(),
        crop: options.crop,
        t_in: config.t_in,
        t_out: config.t_out,
        seed: config.seed,
    };
    let val = validation_samples(prepared, config, options.crop)?;
    let train_options = TrainOptions {
        time_budget: options.time_budget,
    };
    let (params, report) = train_with(config, &train_set, &val, &train_options, on_epoch)?;
    let header = CheckpointHeader {
        config: config.clone(),
        norm_stats: Some(prepared.stats.clone()),
        meta: serde_json::json!({
            "stride": options.stride,
            "train_fraction": options.train_fraction,
            "crop": options.crop,
            "best_epoch": report.best_epoch,
            "best_val_loss": report.best_val_loss,
            "stop_reason": report.stop_reason,
        }),
    };
    Ok((Checkpoint { header, params }, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub windows: usize,
    pub model: Metrics,
    pub persistence: Metrics,
    pub seconds: f64,
}

/// Forecasts every held-out window over the full scene and scores it
/// against the simulator, alongside the 24-hour persistence baseline.
pub fn evaluate_holdout(
    checkpoint: &Checkpoint,
    scene: &GridScene,
    stack: &UtciStack,
    series: &MeteoSeries,
    val_starts: &[usize],
) -> Result<HoldoutReport> {
    let started = Instant::now();
    let config = &checkpoint.header.config;
    let stats = checkpoint
        .header
        .norm_stats
        .as_ref()
        .context("checkpoint carries no normalization statistics")?;
    let (nr, nc) = scene.shape();
    let (mut truth, mut model, mut naive, mut mask) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &s in val_starts {
        let issue = s + config.t_in;
        let tail = stack.slice(0, issue);
        let forecast = predict_region(
            &checkpoint.params,
            config,
            stats,
            scene,
            &tail,
            &series.slice(0, issue),
            Bbox::full(nr, nc),
        )?;
        let baseline = persistence_baseline(&tail, config.t_out)?;
        let target = stack.slice(issue, config.t_out);
        for k in 0..config.t_out {
            let (t, p, b) = (&target.frames()[k], &forecast.stack.frames()[k], &baseline.frames()[k]);
            for i in 0..t.len() {
                let valid = target.mask().as_slice()[i];
                truth.push(t.as_slice()[i] as f64);
                model.push(p.as_slice()[i] as f64);
                naive.push(b.as_slice()[i] as f64);
                mask.push(valid);
            }
        }
    }
    let zero_masked = |v: &mut Vec<f64>| {
        for (x, &m) in v.iter_mut().zip(&mask) {
            if !m {
                *x = 0.0;
            }
        }
    };
    zero_masked(&mut truth);
    zero_masked(&mut model);
    zero_masked(&mut naive);
    Ok(HoldoutReport {
        windows: val_starts.len(),
        model: compute_metrics(&truth, &model, &mask, DEFAULT_MAPE_FLOOR)?,
        persistence: compute_metrics(&truth, &naive, &mask, DEFAULT_MAPE_FLOOR)?,
        seconds: started.elapsed().as_secs_f64(),
    })
}
