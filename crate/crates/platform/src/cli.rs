//! `thermotwin` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thermotwin_core::meteo::{
    detect_heatwave_runs, fmt_ts, generate_synthetic_meteo, load_meteo_csv, parse_ts, percentile_threshold,
    save_meteo_csv, study_window, HeatwaveSpec, MeteoError, MeteoGenSpec, MeteoSeries,
    DEFAULT_HEATWAVE_THRESHOLD_C, DEFAULT_MIN_CONSECUTIVE_DAYS, DEFAULT_PAD_DAYS, DEFAULT_UTC_OFFSET_HOURS,
};
use thermotwin_core::metrics::{evaluate_stacks, DEFAULT_MAPE_FLOOR};
use thermotwin_core::microclimate::{simulate_stack, MicroclimateParams};
use thermotwin_core::routing::{build_grid_graph, recommend_routes, shortest_path, Algorithm, RoutingError, DEFAULT_ALPHAS};
use thermotwin_core::scene::{generate_synthetic_scene, load_scene, save_scene, GridScene, SceneSpec};
use thermotwin_core::stack::{load_stack, save_stack, UtciStack};
use thermotwin_core::stvit::{
    encode_checkpoint, init_params, load_checkpoint, predict_region, save_checkpoint, Bbox, Checkpoint,
    CheckpointHeader, Precision, StVitConfig,
};

use crate::pipeline::{evaluate_holdout, prepare, train_model, PipelineOptions};
use crate::server::{serve, ServeConfig, DEFAULT_FORECAST_TIMEOUT, METEO_FILE, MODEL_FILE, SCENE_DIR};
use crate::store::{NewSnapshot, SnapshotKind, Store};

pub const DATA_DIR_ENV: &str = "THERMOTWIN_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "thermotwin", version, about = "Campus heat-stress digital twin")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic campus scenes.
    #[command(subcommand)]
    Scene(SceneCommand),
    /// Synthetic weather series.
    #[command(subcommand)]
    Meteo(MeteoCommand),
    /// Simulate hourly UTCI frames for a scene and weather series.
    Simulate(SimulateArgs),
    /// Detect heat-wave events and their study windows in a weather series.
    Heatwave(HeatwaveArgs),
    /// Train the forecaster on a simulated stack.
    Train(TrainArgs),
    /// Forecast the hours after a stack with a trained model.
    Predict(PredictArgs),
    /// Score a predicted stack against a reference stack.
    Eval(EvalArgs),
    /// Heat-aware walking route on one UTCI frame.
    Route(RouteArgs),
    /// Add a stack to a data directory as a snapshot.
    Publish(PublishArgs),
    /// Build a small ready-to-serve data directory.
    Demo(DemoArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum SceneCommand {
    /// Generate a seeded synthetic scene directory.
    Gen(SceneGenArgs),
}

#[derive(Debug, Args)]
pub struct SceneGenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub rows: usize,
    #[arg(long, default_value_t = 64)]
    pub cols: usize,
    #[arg(long, default_value_t = 3)]
    pub buildings: usize,
    #[arg(long, default_value_t = 4)]
    pub trees: usize,
    /// Fraction of the area given to parking.
    #[arg(long, default_value_t = 0.15)]
    pub parking: f64,
    /// Add a water body.
    #[arg(long)]
    pub water: bool,
    /// Metres per cell.
    #[arg(long, default_value_t = 1.0)]
    pub cell_size: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum MeteoCommand {
    /// Generate a seeded hourly weather CSV.
    Gen(MeteoGenArgs),
}

#[derive(Debug, Args)]
pub struct MeteoGenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 14)]
    pub days: usize,
    /// First local day, YYYY-MM-DD.
    #[arg(long, default_value = "2022-07-03")]
    pub start_date: NaiveDate,
    /// Mean daily maximum outside the heat wave, °C.
    #[arg(long, default_value_t = 35.5)]
    pub base_tmax: f64,
    /// Zero-based first heat-wave day.
    #[arg(long, default_value_t = 3)]
    pub heatwave_start: usize,
    #[arg(long, default_value_t = 8)]
    pub heatwave_days: usize,
    /// Heat-wave warming, °C.
    #[arg(long, default_value_t = 4.0)]
    pub heatwave_amplitude: f64,
    /// Generate without a heat wave.
    #[arg(long)]
    pub no_heatwave: bool,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene directory.
    #[arg(long)]
    pub scene: PathBuf,
    /// Weather CSV.
    #[arg(long)]
    pub meteo: PathBuf,
    /// Output stack directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with simulator parameters; defaults otherwise.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Simulate only this many days from the start of the series.
    #[arg(long)]
    pub days: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HeatwaveArgs {
    /// Weather CSV.
    #[arg(long)]
    pub meteo: PathBuf,
    /// Daily-maximum threshold, °C.
    #[arg(long, default_value_t = DEFAULT_HEATWAVE_THRESHOLD_C)]
    pub threshold: f64,
    /// Derive the threshold as this percentile of daily maxima instead.
    #[arg(long, conflicts_with = "threshold")]
    pub percentile: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MIN_CONSECUTIVE_DAYS)]
    pub min_days: usize,
    /// Days of padding on each side of an event.
    #[arg(long, default_value_t = DEFAULT_PAD_DAYS)]
    pub pad_days: usize,
    /// Local time offset from UTC, hours.
    #[arg(long, default_value_t = DEFAULT_UTC_OFFSET_HOURS, allow_negative_numbers = true)]
    pub utc_offset: i32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub meteo: PathBuf,
    /// Simulated stack directory aligned with the weather series.
    #[arg(long)]
    pub stack: PathBuf,
    /// Output checkpoint file.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON model configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub t_in: Option<usize>,
    #[arg(long)]
    pub t_out: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scalar type of the attention kernel.
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Side of the square training crops.
    #[arg(long, default_value_t = 64)]
    pub crop: usize,
    /// Wall-clock budget for training, seconds.
    #[arg(long)]
    pub time_budget: Option<f64>,
    /// Also score held-out windows against persistence.
    #[arg(long)]
    pub holdout: bool,
    /// Write the training report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub meteo: PathBuf,
    /// Observed stack directory.
    #[arg(long)]
    pub stack: PathBuf,
    /// Output stack directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Half-open region r0,c0,r1,c1; the whole scene by default.
    #[arg(long)]
    pub bbox: Option<Bbox>,
    /// Last observed hour (ISO 8601); the stack's final hour by default.
    #[arg(long)]
    pub t0: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference stack directory.
    #[arg(long)]
    pub truth: PathBuf,
    /// Predicted stack directory.
    #[arg(long)]
    pub pred: PathBuf,
    /// Scene directory for a per-land-cover breakdown.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// |truth| below which a cell is left out of MAPE, °C.
    #[arg(long, default_value_t = DEFAULT_MAPE_FLOOR)]
    pub mape_floor: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlgorithmArg {
    Dijkstra,
    Astar,
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts[..] {
        [r, c] => Ok((
            r.trim().parse().map_err(|_| format!("bad row in `{s}`"))?,
            c.trim().parse().map_err(|_| format!("bad column in `{s}`"))?,
        )),
        _ => Err(format!("cell `{s}` must be row,col")),
    }
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Stack directory holding the frame.
    #[arg(long)]
    pub stack: PathBuf,
    /// Frame time (ISO 8601).
    #[arg(long)]
    pub t: String,
    /// Origin cell row,col.
    #[arg(long = "from", value_parser = parse_cell)]
    pub origin: (usize, usize),
    /// Destination cell row,col.
    #[arg(long = "to", value_parser = parse_cell)]
    pub destination: (usize, usize),
    /// Weight of distance against heat exposure; without it, one route per
    /// default alpha is returned.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum, default_value = "dijkstra")]
    pub algorithm: AlgorithmArg,
}

#[derive(Debug, Args)]
pub struct DataDirArg {
    /// Data directory.
    #[arg(long, env = DATA_DIR_ENV)]
    pub data_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PublishArgs {
    #[command(flatten)]
    pub data: DataDirArg,
    /// Stack directory to publish.
    #[arg(long)]
    pub stack: PathBuf,
    /// Snapshot id; generated when absent.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub data: DataDirArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub days: usize,
    /// Scene side in cells (at least 64).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub data: DataDirArg,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Checkpoint file; `model.stvt` in the data directory by default.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Forecast request timeout, seconds.
    #[arg(long, default_value_t = DEFAULT_FORECAST_TIMEOUT.as_secs_f64())]
    pub forecast_timeout: f64,
}

fn write_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn read_scene(dir: &Path) -> Result<GridScene> {
    load_scene(dir).with_context(|| format!("loading scene {}", dir.display()))
}

fn read_meteo(path: &Path) -> Result<MeteoSeries> {
    load_meteo_csv(path).with_context(|| format!("loading weather {}", path.display()))
}

fn read_stack(dir: &Path) -> Result<(UtciStack, thermotwin_core::stack::StackIndex)> {
    load_stack(dir).with_context(|| format!("loading stack {}", dir.display()))
}

fn parse_time(s: &str) -> Result<chrono::DateTime<chrono::Utc>> {
    parse_ts(s).with_context(|| format!("bad timestamp `{s}`"))
}

/// Weather records aligned with the stack's hours.
fn align_meteo(series: &MeteoSeries, stack: &UtciStack) -> Result<MeteoSeries> {
    let first = *stack.times().first().context("stack is empty")?;
    let start = series
        .position(first)
        .with_context(|| format!("weather series has no record at {}", fmt_ts(first)))?;
    if start + stack.len() > series.len() {
        bail!("weather series ends before the stack");
    }
    Ok(series.slice(start, stack.len()))
}

fn scene_gen(a: &SceneGenArgs) -> Result<()> {
    let spec = SceneSpec {
        nrows: a.rows,
        ncols: a.cols,
        n_buildings: a.buildings,
        n_tree_clusters: a.trees,
        parking_fraction: a.parking,
        water: a.water,
        cell_size: a.cell_size,
        ..SceneSpec::default()
    };
    let scene = generate_synthetic_scene(a.seed, &spec)?;
    save_scene(&scene, &a.out)?;
    write_json(&json!({"scene": a.out, "nrows": a.rows, "ncols": a.cols}), None)
}

fn meteo_gen(a: &MeteoGenArgs) -> Result<()> {
    let spec = MeteoGenSpec {
        n_days: a.days,
        start_date: a.start_date,
        base_tmax: a.base_tmax,
        heatwave: (!a.no_heatwave).then_some(HeatwaveSpec {
            start_day: a.heatwave_start,
            length_days: a.heatwave_days,
            amplitude: a.heatwave_amplitude,
        }),
        ..MeteoGenSpec::default()
    };
    let series = generate_synthetic_meteo(a.seed, &spec)?;
    save_meteo_csv(&series, &a.out)?;
    write_json(&json!({"meteo": a.out, "hours": series.len()}), None)
}

/// Simulates and writes a stack, recording the parameters and wall-clock.
fn simulate_to(scene: &GridScene, params: &MicroclimateParams, series: &MeteoSeries, out: &Path) -> Result<(UtciStack, f64)> {
    let started = Instant::now();
    let stack = simulate_stack(scene, params, series)?;
    let seconds = started.elapsed().as_secs_f64();
    save_stack(
        &stack,
        out,
        scene.cell_size,
        json!({"producer": "simulator", "params": params, "seconds": seconds}),
    )?;
    Ok((stack, seconds))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let mut series = read_meteo(&a.meteo)?;
    if let Some(days) = a.days {
        series = series.slice(0, (days * 24).min(series.len()));
    }
    let params: MicroclimateParams = match &a.params {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).context("parsing simulator parameters")?,
        None => MicroclimateParams::default(),
    };
    let (stack, seconds) = simulate_to(&scene, &params, &series, &a.out)?;
    write_json(&json!({"stack": a.out, "hours": stack.len(), "seconds": seconds}), None)
}

fn heatwave(a: &HeatwaveArgs) -> Result<()> {
    let series = read_meteo(&a.meteo)?;
    let daily = series.daily_maxima(a.utc_offset);
    let threshold = match a.percentile {
        Some(p) => percentile_threshold(&daily.iter().map(|d| d.1).collect::<Vec<_>>(), p)?,
        None => a.threshold,
    };
    let available = match (daily.first(), daily.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => bail!("weather series is empty"),
    };
    let events: Vec<_> = detect_heatwave_runs(&daily, threshold, a.min_days)
        .iter()
        .map(|e| {
            let window = study_window(e, a.pad_days, available);
            json!({
                "start_day": e.start_day,
                "end_day": e.end_day,
                "length_days": e.length_days(),
                "study_window": window.as_ref().ok().map(|w| w.study_window),
                "window_days": window.as_ref().ok().map(|w| w.window_days()),
                "window_error": window.as_ref().err().map(MeteoError::to_string),
            })
        })
        .collect();
    write_json(&json!({"threshold": threshold, "events": events}), None)
}

fn train_config(a: &TrainArgs) -> Result<StVitConfig> {
    let mut c: StVitConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).context("parsing model configuration")?,
        None => StVitConfig::default(),
    };
    macro_rules! set {
        ($($field:ident = $flag:ident),*) => {$(if let Some(v) = a.$flag { c.$field = v; })*};
    }
    set!(hidden_dim = hidden_dim, num_heads = heads, num_layers = layers, t_in = t_in, t_out = t_out,
        batch_size = batch_size, lr = lr, patience = patience, max_epochs = max_epochs, seed = seed);
    match a.ff_dim {
        Some(f) => c.ff_dim = f,
        None if a.config.is_none() => c.ff_dim = 4 * c.hidden_dim,
        None => {}
    }
    if let Some(p) = a.precision {
        c.attention_precision = match p {
            PrecisionArg::F64 => Precision::F64,
            PrecisionArg::F32 => Precision::F32,
        };
    }
    c.validate()?;
    Ok(c)
}

fn train(a: &TrainArgs, verbose: bool) -> Result<()> {
    let config = train_config(a)?;
    let scene = read_scene(&a.scene)?;
    let (stack, _) = read_stack(&a.stack)?;
    let series = align_meteo(&read_meteo(&a.meteo)?, &stack)?;
    let options = PipelineOptions {
        stride: a.stride,
        train_fraction: a.train_fraction,
        crop: a.crop,
        time_budget: a.time_budget.map(Duration::from_secs_f64),
    };
    let prepared = prepare(&scene, &stack, &series, &config, &options)?;
    let (checkpoint, report) = train_model(&prepared, &config, &options, |e| {
        if verbose {
            eprintln!(
                "epoch {} train {:.6} val {:.6} ({:.1}s)",
                e.epoch, e.train_loss, e.val_loss, e.seconds
            );
        }
    })?;
    save_checkpoint(&checkpoint, &a.out)?;
    let holdout = if a.holdout {
        Some(evaluate_holdout(&checkpoint, &scene, &stack, &series, &prepared.val_starts)?)
    } else {
        None
    };
    let summary = json!({
        "model": a.out,
        "train_windows": prepared.train_starts.len(),
        "val_windows": prepared.val_starts.len(),
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "stop_reason": report.stop_reason,
        "seconds": report.total_seconds(),
        "holdout": holdout,
    });
    if let Some(p) = &a.report {
        write_json(&json!({"summary": summary, "report": report}), Some(p))?;
    }
    write_json(&summary, None)
}

fn predict(a: &PredictArgs) -> Result<()> {
    let ck = load_checkpoint(&a.model)?;
    let stats = ck.header.norm_stats.as_ref().context("checkpoint carries no normalization statistics")?;
    let scene = read_scene(&a.scene)?;
    let (stack, index) = read_stack(&a.stack)?;
    let series = align_meteo(&read_meteo(&a.meteo)?, &stack)?;
    let issue = match &a.t0 {
        Some(s) => {
            let t = parse_time(s)?;
            stack.position(t).with_context(|| format!("stack has no frame at {s}"))? + 1
        }
        None => stack.len(),
    };
    let bbox = a.bbox.unwrap_or(Bbox::full(scene.nrows(), scene.ncols()));
    let region = predict_region(
        &ck.params,
        &ck.header.config,
        stats,
        &scene,
        &stack.slice(0, issue),
        &series.slice(0, issue),
        bbox,
    )?;
    save_stack(
        &region.stack,
        &a.out,
        index.cell_size,
        json!({"producer": "model", "bbox": bbox, "seconds": region.seconds, "model": a.model}),
    )?;
    write_json(
        &json!({
            "stack": a.out,
            "hours": region.stack.len(),
            "first": region.stack.times().first().map(|&t| fmt_ts(t)),
            "tiles": region.layout.origins.len(),
            "seconds": region.seconds,
        }),
        None,
    )
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (truth, _) = read_stack(&a.truth)?;
    let (pred, _) = read_stack(&a.pred)?;
    let scene = a.scene.as_deref().map(read_scene).transpose()?;
    let report = evaluate_stacks(&truth, &pred, scene.as_ref(), a.mape_floor)?;
    write_json(&report, a.out.as_deref())
}

fn route(a: &RouteArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let (stack, _) = read_stack(&a.stack)?;
    let t = parse_time(&a.t)?;
    let k = stack.position(t).with_context(|| format!("stack has no frame at {}", a.t))?;
    let graph = build_grid_graph(&scene, &stack.frames()[k])?;
    let algorithm = match a.algorithm {
        AlgorithmArg::Dijkstra => Algorithm::Dijkstra,
        AlgorithmArg::Astar => Algorithm::Astar,
    };
    match a.alpha {
        Some(alpha) => write_json(&shortest_path(&graph, a.origin, a.destination, alpha, algorithm)?, None),
        None => write_json(&recommend_routes(&graph, a.origin, a.destination, &DEFAULT_ALPHAS)?, None),
    }
}

fn publish(a: &PublishArgs) -> Result<()> {
    let (stack, index) = read_stack(&a.stack)?;
    let store = Store::open(&a.data.data_dir)?;
    let (nr, nc) = stack.shape();
    let predicted = index.params.get("producer").and_then(|p| p.as_str()) == Some("model");
    let bbox = index
        .params
        .get("bbox")
        .and_then(|b| serde_json::from_value(b.clone()).ok())
        .unwrap_or(Bbox::full(nr, nc));
    let snap = store.publish(
        a.id.clone(),
        NewSnapshot {
            kind: if predicted { SnapshotKind::Predicted } else { SnapshotKind::Simulated },
            stack,
            bbox,
            cell_size: index.cell_size,
            parent: None,
            seconds: index.params.get("seconds").and_then(|s| s.as_f64()),
            provenance: index.params,
        },
    )?;
    write_json(&snap.meta, None)
}

/// Scene, weather, one simulated snapshot and an untrained tiny model.
fn demo(a: &DemoArgs) -> Result<()> {
    let dir = &a.data.data_dir;
    fs::create_dir_all(dir)?;
    let scene = generate_synthetic_scene(
        a.seed,
        &SceneSpec {
            nrows: a.size,
            ncols: a.size,
            ..SceneSpec::default()
        },
    )?;
    save_scene(&scene, dir.join(SCENE_DIR))?;
    let series = generate_synthetic_meteo(
        a.seed,
        &MeteoGenSpec {
            n_days: a.days,
            heatwave: None,
            ..MeteoGenSpec::default()
        },
    )?;
    save_meteo_csv(&series, dir.join(METEO_FILE))?;
    let started = Instant::now();
    let stack = simulate_stack(&scene, &MicroclimateParams::default(), &series)?;
    let seconds = started.elapsed().as_secs_f64();
    let store = Store::open(dir)?;
    let snap = store.publish(
        None,
        NewSnapshot {
            kind: SnapshotKind::Simulated,
            stack: stack.clone(),
            bbox: Bbox::full(scene.nrows(), scene.ncols()),
            cell_size: scene.cell_size,
            parent: None,
            seconds: Some(seconds),
            provenance: json!({"producer": "simulator", "seed": a.seed}),
        },
    )?;
    let config = StVitConfig {
        hidden_dim: 4,
        ff_dim: 16,
        t_in: 6,
        t_out: 6,
        attention_precision: Precision::F32,
        ..StVitConfig::default()
    };
    let starts: Vec<usize> = (0..=stack.len() - config.t_in - config.t_out).step_by(4).collect();
    let stats = thermotwin_core::dataset::fit_normalizer(&scene, &stack, &series, &starts, config.t_in, config.t_out)?;
    let ck = Checkpoint {
        header: CheckpointHeader {
            config: config.clone(),
            norm_stats: Some(stats),
            meta: json!({"untrained": true}),
        },
        params: init_params(&config, a.seed)?,
    };
    fs::write(dir.join(MODEL_FILE), encode_checkpoint(&ck))?;
    write_json(&json!({"data_dir": dir, "snapshot": snap.meta.id, "hours": stack.len()}), None)
}

async fn serve_cmd(a: &ServeArgs) -> Result<()> {
    let config = ServeConfig {
        data_dir: a.data.data_dir.clone(),
        host: a.host.clone(),
        port: a.port,
        model: a.model.clone(),
        forecast_timeout: Duration::from_secs_f64(a.forecast_timeout),
    };
    serve(config, |addr| {
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
    })
    .await
}

/// Short category for the one-line error report.
fn error_code(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(r) = cause.downcast_ref::<RoutingError>() {
            return match r {
                RoutingError::NotWalkable { .. } => "not_walkable",
                RoutingError::NoRoute { .. } => "no_route",
                _ => "invalid_route",
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "error"
}

pub fn execute(cli: Cli) -> Result<()> {
    if cli.verbose {
        let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    }
    match &cli.command {
        Command::Scene(SceneCommand::Gen(a)) => scene_gen(a),
        Command::Meteo(MeteoCommand::Gen(a)) => meteo_gen(a),
        Command::Simulate(a) => simulate(a),
        Command::Heatwave(a) => heatwave(a),
        Command::Train(a) => train(a, cli.verbose),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Route(a) => route(a),
        Command::Publish(a) => publish(a),
        Command::Demo(a) => demo(a),
        Command::Serve(a) => tokio::runtime::Runtime::new()?.block_on(serve_cmd(a)),
    }
}

/// Parses `args` and runs; returns the process exit status. Usage errors
/// exit 2, runtime errors exit 1 after printing one JSON line to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // print! rather than e.print() so test harnesses capture it
            if e.use_stderr() {
                eprint!("{}", e.render());
                return 2;
            }
            print!("{}", e.render());
            return 0;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let line = json!({"error": {"code": error_code(&e), "message": format!("{e:#}")}});
            eprintln!("{line}");
            1
        }
    }
}
