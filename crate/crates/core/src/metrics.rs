//! Forecast error metrics over masked raster pairs: MSE, RMSE, MAE and MAPE,
//! overall and broken down by hour and land cover.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meteo::fmt_ts;
use crate::scene::{GridScene, LandCover};
use crate::stack::UtciStack;

/// Cells with `|truth|` below this many °C are left out of MAPE.
pub const DEFAULT_MAPE_FLOOR: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("truth has {truth} values, prediction {pred}, mask {mask}")]
    Length { truth: usize, pred: usize, mask: usize },
    #[error("no unmasked cells to evaluate")]
    Empty,
    #[error("non-finite value at unmasked cell {index}")]
    NonFinite { index: usize },
    #[error("stacks share no timestamps")]
    NoCommonHours,
    #[error("stack shapes differ: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Percent; `None` when no cell reaches the MAPE floor.
    pub mape: Option<f64>,
    /// Cells evaluated for MSE, RMSE and MAE.
    pub m: usize,
    /// Cells evaluated for MAPE.
    pub m_mape: usize,
}

/// Running sums in a fixed order, so results are reproducible.
#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    sq: f64,
    abs: f64,
    pct: f64,
    m: usize,
    m_mape: usize,
}

impl Accumulator {
    fn push(&mut self, truth: f64, pred: f64, floor: f64) {
        let e = truth - pred;
        self.sq += e * e;
        self.abs += e.abs();
        self.m += 1;
        if truth.abs() >= floor {
            self.pct += (e / truth).abs();
            self.m_mape += 1;
        }
    }

    fn finish(&self) -> Option<Metrics> {
        if self.m == 0 {
            return None;
        }
        let mse = self.sq / self.m as f64;
        Some(Metrics {
            mse,
            rmse: mse.sqrt(),
            mae: self.abs / self.m as f64,
            mape: (self.m_mape > 0).then(|| 100.0 * self.pct / self.m_mape as f64),
            m: self.m,
            m_mape: self.m_mape,
        })
    }
}

/// Metrics over the cells where `mask` is true.
pub fn compute_metrics(truth: &[f64], pred: &[f64], mask: &[bool], mape_floor: f64) -> Result<Metrics, MetricsError> {
    if truth.len() != pred.len() || truth.len() != mask.len() {
        return Err(MetricsError::Length {
            truth: truth.len(),
            pred: pred.len(),
            mask: mask.len(),
        });
    }
    let mut acc = Accumulator::default();
    for (index, ((&t, &p), &valid)) in truth.iter().zip(pred).zip(mask).enumerate() {
        if !valid {
            continue;
        }
        if !(t.is_finite() && p.is_finite()) {
            return Err(MetricsError::NonFinite { index });
        }
        acc.push(t, p, mape_floor);
    }
    acc.finish().ok_or(MetricsError::Empty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourMetrics {
    #[serde(with = "ts")]
    pub time: DateTime<Utc>,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Metrics,
    pub per_hour: Vec<HourMetrics>,
    /// Keyed by land-cover name; empty when no scene was given.
    pub per_landcover: BTreeMap<String, Metrics>,
    pub mape_floor: f64,
}

mod ts {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::meteo::fmt_ts(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        crate::meteo::parse_ts(&s).ok_or_else(|| serde::de::Error::custom(format!("bad timestamp `{s}`")))
    }
}

/// Compares two stacks on their common hours and on cells valid in both.
/// With a scene, errors are also grouped by land cover.
pub fn evaluate_stacks(
    truth: &UtciStack,
    pred: &UtciStack,
    scene: Option<&GridScene>,
    mape_floor: f64,
) -> Result<EvalReport, MetricsError> {
    if truth.shape() != pred.shape() {
        return Err(MetricsError::Shape(format!("{:?} vs {:?}", truth.shape(), pred.shape())));
    }
    if let Some(s) = scene {
        if s.shape() != truth.shape() {
            return Err(MetricsError::Shape(format!("scene {:?} vs stack {:?}", s.shape(), truth.shape())));
        }
    }
    let mask: Vec<bool> = truth
        .mask()
        .iter()
        .zip(pred.mask().iter())
        .map(|(&a, &b)| a && b)
        .collect();
    let ncols = truth.shape().1;
    let classes: Option<Vec<Option<LandCover>>> =
        scene.map(|s| (0..mask.len()).map(|i| s.landcover_at(i / ncols, i % ncols)).collect());

    let mut overall = Accumulator::default();
    let mut per_class: BTreeMap<String, Accumulator> = BTreeMap::new();
    let mut per_hour = Vec::new();
    for (ti, t) in truth.times().iter().enumerate() {
        let Some(pi) = pred.position(*t) else { continue };
        let (tf, pf) = (&truth.frames()[ti], &pred.frames()[pi]);
        let mut hour = Accumulator::default();
        for (i, ((&a, &b), &valid)) in tf.iter().zip(pf.iter()).zip(&mask).enumerate() {
            if !valid {
                continue;
            }
            let (a, b) = (a as f64, b as f64);
            if !(a.is_finite() && b.is_finite()) {
                return Err(MetricsError::NonFinite { index: i });
            }
            hour.push(a, b, mape_floor);
            overall.push(a, b, mape_floor);
            if let Some(Some(class)) = classes.as_ref().map(|c| c[i]) {
                per_class.entry(class.name().to_string()).or_default().push(a, b, mape_floor);
            }
        }
        per_hour.push(HourMetrics {
            time: *t,
            metrics: hour.finish().ok_or(MetricsError::Empty)?,
        });
    }
    if per_hour.is_empty() {
        return Err(MetricsError::NoCommonHours);
    }
    Ok(EvalReport {
        overall: overall.finish().ok_or(MetricsError::Empty)?,
        per_hour,
        per_landcover: per_class
            .into_iter()
            .filter_map(|(k, a)| a.finish().map(|m| (k, m)))
            .collect(),
        mape_floor,
    })
}

impl EvalReport {
    /// Hour labels in the report's order, for tabular output.
    pub fn hour_labels(&self) -> Vec<String> {
        self.per_hour.iter().map(|h| fmt_ts(h.time)).collect()
    }
}
