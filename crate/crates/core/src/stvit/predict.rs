//! Tiled region forecasts and the persistence baseline.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use chrono::Duration;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::forward;
use super::params::{StVitConfig, StVitParams};
use super::StVitError;
use crate::dataset::{merge_tiles, plan_tiles, Dataset, NormStats, TileLayout, TILE_SIZE};
use crate::grid::{Grid, Raster};
use crate::meteo::MeteoSeries;
use crate::scene::GridScene;
use crate::stack::UtciStack;

/// Half-open cell rectangle `[r0, r1) × [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bbox {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl Bbox {
    pub fn full(nrows: usize, ncols: usize) -> Self {
        Self {
            r0: 0,
            c0: 0,
            r1: nrows,
            c1: ncols,
        }
    }

    pub fn nrows(&self) -> usize {
        self.r1.saturating_sub(self.r0)
    }

    pub fn ncols(&self) -> usize {
        self.c1.saturating_sub(self.c0)
    }
}

impl fmt::Display for Bbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.r0, self.c0, self.r1, self.c1)
    }
}

impl FromStr for Bbox {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("bbox `{s}` must be four non-negative integers r0,c0,r1,c1"))?;
        match parts[..] {
            [r0, c0, r1, c1] => Ok(Self { r0, c0, r1, c1 }),
            _ => Err(format!("bbox `{s}` must have exactly four fields")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegionForecast {
    /// `t_out` denormalized frames over the bbox, masked like the scene.
    pub stack: UtciStack,
    pub layout: TileLayout,
    /// Normalized per-tile outputs, `[tile][t_out]`.
    pub tiles: Vec<Vec<Grid<f64>>>,
    pub seconds: f64,
}

/// Forecasts the `t_out` hours following the last frame of `stack_tail`
/// over `bbox`: tile, run the model per tile, merge overlaps by averaging,
/// and denormalize.
#[allow(clippy::too_many_arguments)]
pub fn predict_region(
    params: &StVitParams,
    config: &StVitConfig,
    stats: &NormStats,
    scene: &GridScene,
    stack_tail: &UtciStack,
    meteo_tail: &MeteoSeries,
    bbox: Bbox,
) -> Result<RegionForecast, StVitError> {
    let started = Instant::now();
    let (nr, nc) = scene.shape();
    if bbox.r1 > nr || bbox.c1 > nc || bbox.nrows() < TILE_SIZE || bbox.ncols() < TILE_SIZE {
        return Err(StVitError::Region(format!(
            "bbox {bbox} must lie inside the {nr}×{nc} scene and span at least {TILE_SIZE}×{TILE_SIZE}"
        )));
    }
    let t_in = config.t_in;
    if stack_tail.len() < t_in || meteo_tail.len() < t_in {
        return Err(StVitError::Region(format!(
            "need {t_in} input hours, got {} frames and {} meteo records",
            stack_tail.len(),
            meteo_tail.len()
        )));
    }
    let stack_in = stack_tail.slice(stack_tail.len() - t_in, t_in);
    let meteo_in = meteo_tail.slice(meteo_tail.len() - t_in, t_in);
    let dataset = Dataset::new(scene, &stack_in, &meteo_in, stats)?;
    let layout = plan_tiles(bbox.nrows(), bbox.ncols())?;
    let t_out = config.t_out;

    let tiles = layout
        .origins
        .par_iter()
        .map(|&(tr, tc)| {
            let sample = dataset.sample(0, (bbox.r0 + tr, bbox.c0 + tc, TILE_SIZE, TILE_SIZE), t_in, 0)?;
            let y = forward(params, config, &sample)?;
            let n = TILE_SIZE * TILE_SIZE;
            Ok((0..t_out)
                .map(|tau| Grid::from_vec(TILE_SIZE, TILE_SIZE, y[tau * n..(tau + 1) * n].to_vec()))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, StVitError>>()?;

    let mask = stack_in.mask().crop(bbox.r0, bbox.c0, bbox.nrows(), bbox.ncols());
    let mut frames = Vec::with_capacity(t_out);
    for tau in 0..t_out {
        let per_tile: Vec<Grid<f64>> = tiles.iter().map(|t| t[tau].clone()).collect();
        let merged = merge_tiles(&layout, &per_tile)?;
        frames.push(Raster::from_vec(
            merged.nrows(),
            merged.ncols(),
            merged.iter().map(|&z| stats.utci.denormalize(z) as f32).collect(),
        ));
    }
    let last = *stack_in.times().last().expect("non-empty tail");
    let times = (1..=t_out as i64).map(|k| last + Duration::hours(k)).collect();
    Ok(RegionForecast {
        stack: UtciStack::new(times, frames, mask),
        layout,
        tiles,
        seconds: started.elapsed().as_secs_f64(),
    })
}

pub const PERSISTENCE_PERIOD: usize = 24;

/// Repeats the most recent 24 hours: the forecast for hour `t` is the
/// observation at `t − 24`.
pub fn persistence_baseline(stack_tail: &UtciStack, t_out: usize) -> Result<UtciStack, StVitError> {
    let len = stack_tail.len();
    if len < PERSISTENCE_PERIOD {
        return Err(StVitError::Region(format!(
            "persistence needs {PERSISTENCE_PERIOD} frames, got {len}"
        )));
    }
    let last = stack_tail.times()[len - 1];
    let frames = (0..t_out)
        .map(|k| stack_tail.frames()[len - PERSISTENCE_PERIOD + k % PERSISTENCE_PERIOD].clone())
        .collect();
    let times = (1..=t_out as i64).map(|k| last + Duration::hours(k)).collect();
    Ok(UtciStack::new(times, frames, stack_tail.mask().clone()))
}
