//! Training and evaluation windows over a simulated UTCI stack.
//!
//! A window starting at hour `s` feeds hours `[s, s + t_in)` to the model and
//! targets `[s + t_in, s + t_in + t_out)`. Inputs are z-scored with
//! statistics fitted on the training windows only. Full frames are covered by
//! overlapping 64×64 tiles at inference time and merged by averaging.

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Mask};
use crate::meteo::{MeteoSeries, N_VARIABLES};
use crate::scene::GridScene;
use crate::stack::UtciStack;

pub const N_SPATIAL: usize = 4;
pub const SPATIAL_CHANNELS: [&str; N_SPATIAL] = ["building_height", "canopy_height", "dem", "landcover"];
pub const METEO_CHANNELS: [&str; N_VARIABLES] = ["ta", "rh", "wind_speed", "wind_dir", "ghi", "dni", "dhi"];
pub const DEFAULT_T_IN: usize = 24;
pub const DEFAULT_T_OUT: usize = 24;
pub const DEFAULT_STRIDE: usize = 4;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const TILE_SIZE: usize = 64;
pub const TILE_OVERLAP: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("stack has {len} hours, a window needs {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("stack and meteo series are not aligned: {0}")]
    Misaligned(String),
    #[error("empty training set")]
    EmptyTraining,
    #[error("no windows to split")]
    NoWindows,
    #[error("frame {nrows}×{ncols} is smaller than {size}×{size}")]
    FrameTooSmall { nrows: usize, ncols: usize, size: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// Set when the fitted spread was zero and `std` was forced to 1.
    pub constant: bool,
}

impl ChannelStats {
    fn fit(name: &str, values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut sum, mut sum_sq) = (0usize, 0.0f64, 0.0f64);
        let vals: Vec<f64> = values.collect();
        for &v in &vals {
            n += 1;
            sum += v;
        }
        let mean = if n > 0 { sum / n as f64 } else { 0.0 };
        for &v in &vals {
            sum_sq += (v - mean) * (v - mean);
        }
        let std = if n > 0 { (sum_sq / n as f64).sqrt() } else { 0.0 };
        let constant = !(std > 1e-12 * mean.abs().max(1.0));
        Self {
            name: name.to_string(),
            mean,
            std: if constant { 1.0 } else { std },
            constant,
        }
    }

    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub spatial: Vec<ChannelStats>,
    pub meteo: Vec<ChannelStats>,
    pub utci: ChannelStats,
}

/// Raw spatial channel values at a cell, in `SPATIAL_CHANNELS` order.
pub fn spatial_features(scene: &GridScene, row: usize, col: usize) -> [f64; N_SPATIAL] {
    [
        scene.building_height.at(row, col) as f64,
        scene.canopy_height.at(row, col) as f64,
        scene.dem.at(row, col) as f64,
        scene.landcover.at(row, col) as f64 / 5.0,
    ]
}

fn check_aligned(stack: &UtciStack, series: &MeteoSeries) -> Result<(), DatasetError> {
    if stack.len() != series.len() {
        return Err(DatasetError::Misaligned(format!(
            "{} frames vs {} meteo records",
            stack.len(),
            series.len()
        )));
    }
    for (i, (a, r)) in stack.times().iter().zip(series.records()).enumerate() {
        if *a != r.timestamp {
            return Err(DatasetError::Misaligned(format!("hour {i} differs")));
        }
    }
    Ok(())
}

/// Hours covered by at least one window, as a sorted list.
fn covered_hours(starts: &[usize], span: usize, len: usize) -> Vec<usize> {
    let mut covered = vec![false; len];
    for &s in starts {
        for h in s..(s + span).min(len) {
            covered[h] = true;
        }
    }
    (0..len).filter(|&h| covered[h]).collect()
}

/// Fits statistics on the hours spanned by `train_starts` (inputs and
/// targets). Spatial channels use every cell; UTCI uses unmasked cells.
pub fn fit_normalizer(
    scene: &GridScene,
    stack: &UtciStack,
    series: &MeteoSeries,
    train_starts: &[usize],
    t_in: usize,
    t_out: usize,
) -> Result<NormStats, DatasetError> {
    if train_starts.is_empty() {
        return Err(DatasetError::EmptyTraining);
    }
    check_aligned(stack, series)?;
    let hours = covered_hours(train_starts, t_in + t_out, stack.len());
    let (nr, nc) = scene.shape();
    let spatial = (0..N_SPATIAL)
        .map(|ch| {
            let vals = (0..nr * nc).map(|i| spatial_features(scene, i / nc, i % nc)[ch]);
            ChannelStats::fit(SPATIAL_CHANNELS[ch], vals)
        })
        .collect();
    let records = series.records();
    let meteo = (0..N_VARIABLES)
        .map(|v| ChannelStats::fit(METEO_CHANNELS[v], hours.iter().map(|&h| records[h].variables()[v])))
        .collect();
    let mask = stack.mask();
    let utci_vals = hours.iter().flat_map(|&h| {
        stack.frames()[h]
            .iter()
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v as f64)
    });
    let utci = ChannelStats::fit("utci", utci_vals);
    Ok(NormStats { spatial, meteo, utci })
}

/// Window start hours `0, stride, 2·stride, …` with room for `t_in + t_out`.
pub fn window_starts(len: usize, t_in: usize, t_out: usize, stride: usize) -> Result<Vec<usize>, DatasetError> {
    if stride == 0 || t_in == 0 || t_out == 0 {
        return Err(DatasetError::Invalid("t_in, t_out and stride must be positive".into()));
    }
    let needed = t_in + t_out;
    if len < needed {
        return Err(DatasetError::TooShort { len, needed });
    }
    Ok((0..=len - needed).step_by(stride).collect())
}

pub fn make_windows(
    stack: &UtciStack,
    series: &MeteoSeries,
    t_in: usize,
    t_out: usize,
    stride: usize,
) -> Result<Vec<usize>, DatasetError> {
    check_aligned(stack, series)?;
    window_starts(stack.len(), t_in, t_out, stride)
}

/// First `ceil(fraction · n)` windows train, the rest evaluate.
pub fn chronological_split(windows: &[usize], train_fraction: f64) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if windows.is_empty() {
        return Err(DatasetError::NoWindows);
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(DatasetError::Invalid(format!("train fraction {train_fraction} outside (0, 1]")));
    }
    let n_train = ((train_fraction * windows.len() as f64) - 1e-9).ceil() as usize;
    let n_train = n_train.clamp(1, windows.len());
    Ok((windows[..n_train].to_vec(), windows[n_train..].to_vec()))
}

/// One model input/target pair over an `h × w` region. All values are
/// normalized; masked cells hold 0 in `utci_in` and `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub h: usize,
    pub w: usize,
    pub t_in: usize,
    pub t_out: usize,
    /// `[N_SPATIAL][h·w]`
    pub spatial: Vec<f64>,
    /// `[t_in][N_VARIABLES]`
    pub meteo_in: Vec<f64>,
    /// `[t_in][h·w]`
    pub utci_in: Vec<f64>,
    /// `[t_out][h·w]`
    pub target: Vec<f64>,
    /// `[h·w]`, false at buildings
    pub mask: Vec<bool>,
    /// (row, col, start hour) of the region in the full frame.
    pub origin: (usize, usize, usize),
}

impl WindowSample {
    pub fn n_cells(&self) -> usize {
        self.h * self.w
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Normalized full-frame tensors from which windows and crops are cut.
#[derive(Debug, Clone)]
pub struct Dataset {
    nrows: usize,
    ncols: usize,
    times: Vec<DateTime<Utc>>,
    /// `[N_SPATIAL][nrows·ncols]`
    spatial: Vec<f64>,
    /// `[hours][N_VARIABLES]`
    meteo: Vec<f64>,
    /// `[hours][nrows·ncols]`, 0 at masked cells
    utci: Vec<f64>,
    mask: Mask,
    stats: NormStats,
}

impl Dataset {
    pub fn new(scene: &GridScene, stack: &UtciStack, series: &MeteoSeries, stats: &NormStats) -> Result<Self, DatasetError> {
        check_aligned(stack, series)?;
        if scene.shape() != stack.shape() {
            return Err(DatasetError::Misaligned(format!(
                "scene {:?} vs stack {:?}",
                scene.shape(),
                stack.shape()
            )));
        }
        let (nr, nc) = scene.shape();
        let n = nr * nc;
        let mut spatial = vec![0.0; N_SPATIAL * n];
        for i in 0..n {
            let f = spatial_features(scene, i / nc, i % nc);
            for ch in 0..N_SPATIAL {
                spatial[ch * n + i] = stats.spatial[ch].normalize(f[ch]);
            }
        }
        let mut meteo = Vec::with_capacity(series.len() * N_VARIABLES);
        for r in series.records() {
            for (v, x) in r.variables().iter().enumerate() {
                meteo.push(stats.meteo[v].normalize(*x));
            }
        }
        let mask = stack.mask().clone();
        let mut utci = Vec::with_capacity(stack.len() * n);
        for f in stack.frames() {
            for (v, &m) in f.iter().zip(mask.iter()) {
                utci.push(if m { stats.utci.normalize(*v as f64) } else { 0.0 });
            }
        }
        Ok(Self {
            nrows: nr,
            ncols: nc,
            times: stack.times().to_vec(),
            spatial,
            meteo,
            utci,
            mask,
            stats: stats.clone(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[DateTime<Utc>] {
        &self.times
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Region `[row, row+h) × [col, col+w)` of the window at `start`. With
    /// `t_out = 0` only inputs are cut (forecasting past the end of the data).
    pub fn sample(
        &self,
        start: usize,
        (row, col, h, w): (usize, usize, usize, usize),
        t_in: usize,
        t_out: usize,
    ) -> Result<WindowSample, DatasetError> {
        if row + h > self.nrows || col + w > self.ncols || h == 0 || w == 0 {
            return Err(DatasetError::Invalid(format!(
                "region ({row}, {col}, {h}, {w}) outside {}×{}",
                self.nrows, self.ncols
            )));
        }
        if start + t_in + t_out > self.len() {
            return Err(DatasetError::TooShort {
                len: self.len() - start.min(self.len()),
                needed: t_in + t_out,
            });
        }
        let n_full = self.nrows * self.ncols;
        let cut = |plane: &[f64], out: &mut Vec<f64>| {
            for r in row..row + h {
                let base = r * self.ncols;
                out.extend_from_slice(&plane[base + col..base + col + w]);
            }
        };
        let mut spatial = Vec::with_capacity(N_SPATIAL * h * w);
        for ch in 0..N_SPATIAL {
            cut(&self.spatial[ch * n_full..(ch + 1) * n_full], &mut spatial);
        }
        let meteo_in = self.meteo[start * N_VARIABLES..(start + t_in) * N_VARIABLES].to_vec();
        let mut utci_in = Vec::with_capacity(t_in * h * w);
        for t in start..start + t_in {
            cut(&self.utci[t * n_full..(t + 1) * n_full], &mut utci_in);
        }
        let mut target = Vec::with_capacity(t_out * h * w);
        for t in start + t_in..start + t_in + t_out {
            cut(&self.utci[t * n_full..(t + 1) * n_full], &mut target);
        }
        let mut mask = Vec::with_capacity(h * w);
        for r in row..row + h {
            for c in col..col + w {
                mask.push(self.mask.at(r, c));
            }
        }
        Ok(WindowSample {
            h,
            w,
            t_in,
            t_out,
            spatial,
            meteo_in,
            utci_in,
            target,
            mask,
            origin: (row, col, start),
        })
    }

    /// Uniformly random `size × size` crop of the window at `start`.
    pub fn random_crop(
        &self,
        start: usize,
        size: usize,
        t_in: usize,
        t_out: usize,
        rng: &mut impl Rng,
    ) -> Result<WindowSample, DatasetError> {
        let (row, col) = random_crop_origin(self.nrows, self.ncols, size, rng)?;
        self.sample(start, (row, col, size, size), t_in, t_out)
    }
}

/// Top-left corner drawn uniformly from all positions that fit the crop.
pub fn random_crop_origin(nrows: usize, ncols: usize, size: usize, rng: &mut impl Rng) -> Result<(usize, usize), DatasetError> {
    if nrows < size || ncols < size {
        return Err(DatasetError::FrameTooSmall { nrows, ncols, size });
    }
    Ok((rng.gen_range(0..=nrows - size), rng.gen_range(0..=ncols - size)))
}

/// Deterministic generator for the crop of window `index` in `epoch`.
pub fn crop_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayout {
    pub nrows: usize,
    pub ncols: usize,
    pub tile: usize,
    pub overlap: usize,
    /// Top-left corners in row-major order.
    pub origins: Vec<(usize, usize)>,
}

fn axis_origins(n: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        if o + tile >= n {
            out.push(n - tile);
            break;
        }
        out.push(o);
        o += stride;
    }
    out
}

pub fn plan_tiles_with(nrows: usize, ncols: usize, tile: usize, overlap: usize) -> Result<TileLayout, DatasetError> {
    if overlap >= tile {
        return Err(DatasetError::Invalid(format!("overlap {overlap} must be below tile size {tile}")));
    }
    if nrows < tile || ncols < tile {
        return Err(DatasetError::FrameTooSmall { nrows, ncols, size: tile });
    }
    let stride = tile - overlap;
    let rows = axis_origins(nrows, tile, stride);
    let cols = axis_origins(ncols, tile, stride);
    let origins = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    Ok(TileLayout {
        nrows,
        ncols,
        tile,
        overlap,
        origins,
    })
}

/// 64×64 tiles overlapping by 10 cells.
pub fn plan_tiles(nrows: usize, ncols: usize) -> Result<TileLayout, DatasetError> {
    plan_tiles_with(nrows, ncols, TILE_SIZE, TILE_OVERLAP)
}

/// Averages per-tile values into a full frame. `tiles[i]` is the
/// `tile × tile` content at `layout.origins[i]`.
pub fn merge_tiles(layout: &TileLayout, tiles: &[Grid<f64>]) -> Result<Grid<f64>, DatasetError> {
    if tiles.len() != layout.origins.len() {
        return Err(DatasetError::Invalid(format!(
            "{} tiles for {} origins",
            tiles.len(),
            layout.origins.len()
        )));
    }
    // running mean: exact when every contribution to a cell is identical
    let mut mean = Grid::filled(layout.nrows, layout.ncols, 0.0f64);
    let mut count = Grid::filled(layout.nrows, layout.ncols, 0u32);
    for (&(r0, c0), t) in layout.origins.iter().zip(tiles) {
        if t.shape() != (layout.tile, layout.tile) {
            return Err(DatasetError::Invalid(format!("tile shape {:?}", t.shape())));
        }
        for r in 0..layout.tile {
            for c in 0..layout.tile {
                let k = count.get_mut(r0 + r, c0 + c);
                *k += 1;
                let k = *k as f64;
                let m = mean.get_mut(r0 + r, c0 + c);
                *m += (t.at(r, c) - *m) / k;
            }
        }
    }
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Debug export of the window plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowManifest {
    pub t_in: usize,
    pub t_out: usize,
    pub stride: usize,
    pub origins: Vec<usize>,
    pub split: SplitManifest,
    pub stats: NormStats,
}
