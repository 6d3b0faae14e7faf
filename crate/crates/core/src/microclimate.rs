//! Physics-lite radiation surrogate producing hourly UTCI rasters.
//!
//! Pipeline per hour: sun position, shade factor by ray marching toward the
//! sun, sky-view factor (once per scene), mean radiant temperature from a
//! linear short-wave gain by day and sky-view cooling by night, then a closed
//! form UTCI surrogate. Building cells are no-data throughout.

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Raster};
use crate::meteo::{MeteoRecord, MeteoSeries};
use crate::scene::{GridScene, LandCover};
use crate::solar::{solar_position, SunPosition};
use crate::stack::UtciStack;

#[derive(Debug, Error)]
pub enum MicroclimateError {
    #[error("non-finite UTCI input: {0}")]
    NonFinite(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("raster shape {found:?} does not match scene shape {expected:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// Short-wave gain multipliers per land-cover class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandcoverGain {
    pub paved: f64,
    pub bare: f64,
    pub grass: f64,
    pub tree: f64,
    pub water: f64,
}

impl Default for LandcoverGain {
    fn default() -> Self {
        Self {
            paved: 1.15,
            bare: 1.05,
            grass: 0.90,
            tree: 0.85,
            water: 0.70,
        }
    }
}

impl LandcoverGain {
    pub fn get(&self, class: LandCover) -> Option<f64> {
        match class {
            LandCover::Paved => Some(self.paved),
            LandCover::Bare => Some(self.bare),
            LandCover::Grass => Some(self.grass),
            LandCover::Tree => Some(self.tree),
            LandCover::Water => Some(self.water),
            LandCover::Building => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroclimateParams {
    /// Fraction of the direct beam passing through canopy.
    pub tree_transmissivity: f64,
    /// °C of T_mrt per 100 W/m² of absorbed short-wave.
    pub sw_gain: f64,
    /// Night-time T_mrt depression under a fully open sky, °C.
    pub night_svf_cooling: f64,
    pub landcover_gain: LandcoverGain,
    pub utci_wind_coeff: f64,
    pub utci_rh_coeff: f64,
    pub utci_mrt_weight: f64,
    pub svf_azimuths: usize,
    /// Horizon search radius for SVF and the shadow march, metres.
    pub svf_max_radius: f64,
}

impl Default for MicroclimateParams {
    fn default() -> Self {
        Self {
            tree_transmissivity: 0.05,
            sw_gain: 1.5,
            night_svf_cooling: 7.0,
            landcover_gain: LandcoverGain::default(),
            utci_wind_coeff: 2.0,
            utci_rh_coeff: 0.15,
            utci_mrt_weight: 0.4,
            svf_azimuths: 16,
            svf_max_radius: 100.0,
        }
    }
}

impl MicroclimateParams {
    pub fn validate(&self) -> Result<(), MicroclimateError> {
        let bad = |m: &str| Err(MicroclimateError::InvalidParams(m.into()));
        if !(0.0..=1.0).contains(&self.tree_transmissivity) {
            return bad("tree_transmissivity must lie in [0, 1]");
        }
        if !(self.sw_gain >= 0.0 && self.night_svf_cooling >= 0.0) {
            return bad("sw_gain and night_svf_cooling must be non-negative");
        }
        let g = &self.landcover_gain;
        if [g.paved, g.bare, g.grass, g.tree, g.water].iter().any(|&m| !(m > 0.0)) {
            return bad("land-cover multipliers must be positive");
        }
        if self.svf_azimuths == 0 || !(self.svf_max_radius > 0.0) {
            return bad("svf_azimuths and svf_max_radius must be positive");
        }
        Ok(())
    }
}

/// Wind speed limits of the UTCI regression domain, m/s.
pub const WIND_MIN: f64 = 0.5;
pub const WIND_MAX: f64 = 17.0;

#[inline]
fn sample_cell(row: usize, col: usize, k: f64, dir: (f64, f64)) -> (isize, isize) {
    (
        (row as f64 + 0.5 + k * dir.0).floor() as isize,
        (col as f64 + 0.5 + k * dir.1).floor() as isize,
    )
}

fn max_surface(scene: &GridScene) -> f64 {
    let (nr, nc) = scene.shape();
    let mut m = f64::NEG_INFINITY;
    for r in 0..nr {
        for c in 0..nc {
            m = m.max(scene.surface(r, c));
        }
    }
    m
}

fn row_parallel(nrows: usize, ncols: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Grid<f64> {
    let rows: Vec<Vec<f64>> = (0..nrows)
        .into_par_iter()
        .map(|r| (0..ncols).map(|c| f(r, c)).collect())
        .collect();
    Grid::from_vec(nrows, ncols, rows.concat())
}

/// Shade factor per cell: 0 behind a building, `tree_transmissivity` under or
/// behind canopy only, 1 in full sun. With the sun at or below the horizon
/// every cell is 0.
pub fn shadow_mask(scene: &GridScene, sun: SunPosition, params: &MicroclimateParams) -> Grid<f64> {
    let (nr, nc) = scene.shape();
    if !sun.is_up() {
        return Grid::filled(nr, nc, 0.0);
    }
    let dir = sun.grid_direction();
    let tan_e = sun.elevation.to_radians().tan();
    let top = max_surface(scene);
    let max_steps = (params.svf_max_radius / scene.cell_size).ceil() as usize;
    let tau = params.tree_transmissivity;
    row_parallel(nr, nc, |r, c| {
        let b0 = scene.building_height.at(r, c) as f64;
        let z0 = scene.dem.at(r, c) as f64 + b0;
        let mut canopy = b0 == 0.0 && scene.canopy_height.at(r, c) > 0.0;
        for k in 1..=max_steps {
            let ray = z0 + k as f64 * scene.cell_size * tan_e;
            if ray >= top {
                break;
            }
            let (rr, cc) = sample_cell(r, c, k as f64, dir);
            if !scene.dem.in_bounds(rr, cc) {
                break;
            }
            let (rr, cc) = (rr as usize, cc as usize);
            if (rr, cc) == (r, c) {
                continue;
            }
            let ground = scene.dem.at(rr, cc) as f64;
            let b = scene.building_height.at(rr, cc) as f64;
            if b > 0.0 && ground + b > ray {
                return 0.0;
            }
            let t = scene.canopy_height.at(rr, cc) as f64;
            if t > 0.0 && ground + t > ray {
                canopy = true;
            }
        }
        if canopy {
            tau
        } else {
            1.0
        }
    })
}

/// Sky-view factor: mean over `svf_azimuths` directions of cos² of the
/// horizon elevation angle, searched out to `svf_max_radius`.
pub fn sky_view_factor(scene: &GridScene, params: &MicroclimateParams) -> Grid<f64> {
    let (nr, nc) = scene.shape();
    let top = max_surface(scene);
    let max_steps = (params.svf_max_radius / scene.cell_size).ceil() as usize;
    let dirs: Vec<(f64, f64)> = (0..params.svf_azimuths)
        .map(|i| {
            let az = 2.0 * std::f64::consts::PI * i as f64 / params.svf_azimuths as f64;
            (-az.cos(), az.sin())
        })
        .collect();
    row_parallel(nr, nc, |r, c| {
        let z0 = scene.dem.at(r, c) as f64 + scene.building_height.at(r, c) as f64;
        let mut total = 0.0;
        for &dir in &dirs {
            let mut max_tan = 0.0f64;
            for k in 1..=max_steps {
                let dist = k as f64 * scene.cell_size;
                if (top - z0) / dist <= max_tan {
                    break;
                }
                let (rr, cc) = sample_cell(r, c, k as f64, dir);
                if !scene.dem.in_bounds(rr, cc) {
                    break;
                }
                let (rr, cc) = (rr as usize, cc as usize);
                if (rr, cc) == (r, c) {
                    continue;
                }
                let rise = scene.surface(rr, cc) - z0;
                if rise > 0.0 {
                    max_tan = max_tan.max(rise / dist);
                }
            }
            // cos²(atan x) = 1 / (1 + x²)
            total += 1.0 / (1.0 + max_tan * max_tan);
        }
        total / dirs.len() as f64
    })
}

/// Mean radiant temperature, NaN at building cells.
///
/// Day: `ta + sw_gain * m_lc * K / 100` with
/// `K = shade * dni * sin(elevation) + svf * dhi`.
/// Night: `ta - night_svf_cooling * svf`.
pub fn tmrt_map(
    scene: &GridScene,
    params: &MicroclimateParams,
    record: &MeteoRecord,
    sun: SunPosition,
    shade: &Grid<f64>,
    svf: &Grid<f64>,
) -> Result<Grid<f64>, MicroclimateError> {
    for g in [shade, svf] {
        if g.shape() != scene.shape() {
            return Err(MicroclimateError::Shape {
                expected: scene.shape(),
                found: g.shape(),
            });
        }
    }
    let (nr, nc) = scene.shape();
    let sin_e = sun.elevation.to_radians().sin();
    Ok(Grid::from_fn(nr, nc, |r, c| {
        let Some(gain) = scene
            .landcover_at(r, c)
            .and_then(|lc| params.landcover_gain.get(lc))
        else {
            return f64::NAN;
        };
        if sun.is_up() {
            let k = shade.at(r, c) * record.dni * sin_e + svf.at(r, c) * record.dhi;
            record.ta + params.sw_gain * gain * k / 100.0
        } else {
            record.ta - params.night_svf_cooling * svf.at(r, c)
        }
    }))
}

/// Closed-form UTCI surrogate, °C.
///
/// `ta + w_mrt (tmrt - ta) - c_w ln(va / 0.5) + c_rh ((rh - 50) / 10) max(0, ta - 25)`
/// with wind clamped to [0.5, 17] m/s. Equals `ta` at the reference condition
/// (tmrt = ta, va = 0.5, rh = 50).
pub fn utci_point(
    ta: f64,
    tmrt: f64,
    wind_speed: f64,
    rh: f64,
    params: &MicroclimateParams,
) -> Result<f64, MicroclimateError> {
    if !(ta.is_finite() && tmrt.is_finite() && wind_speed.is_finite() && rh.is_finite()) {
        return Err(MicroclimateError::NonFinite(format!(
            "ta={ta} tmrt={tmrt} va={wind_speed} rh={rh}"
        )));
    }
    let va = wind_speed.clamp(WIND_MIN, WIND_MAX);
    Ok(ta + params.utci_mrt_weight * (tmrt - ta) - params.utci_wind_coeff * (va / WIND_MIN).ln()
        + params.utci_rh_coeff * ((rh - 50.0) / 10.0) * (ta - 25.0).max(0.0))
}

/// UTCI raster for one hour given a precomputed sky-view factor.
pub fn utci_frame(
    scene: &GridScene,
    params: &MicroclimateParams,
    record: &MeteoRecord,
    svf: &Grid<f64>,
) -> Result<Raster, MicroclimateError> {
    let sun = solar_position(record.timestamp, scene.latitude, scene.longitude);
    let shade = shadow_mask(scene, sun, params);
    let tmrt = tmrt_map(scene, params, record, sun, &shade, svf)?;
    let mut data = Vec::with_capacity(tmrt.len());
    for &t in tmrt.iter() {
        if t.is_nan() {
            data.push(f32::NAN);
        } else {
            data.push(utci_point(record.ta, t, record.wind_speed, record.rh, params)? as f32);
        }
    }
    Ok(Raster::from_vec(scene.nrows(), scene.ncols(), data))
}

pub fn utci_map(
    scene: &GridScene,
    params: &MicroclimateParams,
    record: &MeteoRecord,
) -> Result<Raster, MicroclimateError> {
    params.validate()?;
    let svf = sky_view_factor(scene, params);
    utci_frame(scene, params, record, &svf)
}

/// Simulate every hour of `series`. Hours are evaluated in parallel; each
/// frame depends only on its own record, so the result equals a sequential run.
pub fn simulate_stack(
    scene: &GridScene,
    params: &MicroclimateParams,
    series: &MeteoSeries,
) -> Result<UtciStack, MicroclimateError> {
    params.validate()?;
    let svf = sky_view_factor(scene, params);
    simulate_with_svf(scene, params, series.records(), &svf)
}

pub fn simulate_with_svf(
    scene: &GridScene,
    params: &MicroclimateParams,
    records: &[MeteoRecord],
    svf: &Grid<f64>,
) -> Result<UtciStack, MicroclimateError> {
    let frames = records
        .par_iter()
        .map(|rec| utci_frame(scene, params, rec, svf))
        .collect::<Result<Vec<_>, _>>()?;
    let times: Vec<DateTime<Utc>> = records.iter().map(|r| r.timestamp).collect();
    Ok(UtciStack::new(times, frames, scene.valid_mask()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressCategory {
    No,
    Moderate,
    Strong,
    VeryStrong,
    Extreme,
}

impl StressCategory {
    pub const ALL: [StressCategory; 5] = [
        StressCategory::No,
        StressCategory::Moderate,
        StressCategory::Strong,
        StressCategory::VeryStrong,
        StressCategory::Extreme,
    ];

    /// Half-open `(lower, upper]` bounds in °C.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            StressCategory::No => (f64::NEG_INFINITY, 26.0),
            StressCategory::Moderate => (26.0, 32.0),
            StressCategory::Strong => (32.0, 38.0),
            StressCategory::VeryStrong => (38.0, 46.0),
            StressCategory::Extreme => (46.0, f64::INFINITY),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StressCategory::No => "no thermal stress",
            StressCategory::Moderate => "moderate heat stress",
            StressCategory::Strong => "strong heat stress",
            StressCategory::VeryStrong => "very strong heat stress",
            StressCategory::Extreme => "extreme heat stress",
        }
    }
}

pub fn stress_category(utci: f64) -> StressCategory {
    StressCategory::ALL
        .into_iter()
        .find(|c| utci <= c.bounds().1)
        .unwrap_or(StressCategory::Extreme)
}
