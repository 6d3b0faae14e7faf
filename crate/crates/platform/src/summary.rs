//! Hourly heat-stress band proportions of a stack.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thermotwin_core::meteo::fmt_ts;
use thermotwin_core::microclimate::{stress_category, StressCategory};
use thermotwin_core::stack::UtciStack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub time: String,
    /// Share of unmasked cells in each band; every band is present.
    pub proportions: BTreeMap<StressCategory, f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub cells: usize,
}

/// Band definition as served to clients; open ends are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandInfo {
    pub category: StressCategory,
    pub label: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

pub fn bands() -> Vec<BandInfo> {
    StressCategory::ALL
        .iter()
        .map(|&c| {
            let (lo, hi) = c.bounds();
            BandInfo {
                category: c,
                label: c.label().into(),
                lower: lo.is_finite().then_some(lo),
                upper: hi.is_finite().then_some(hi),
            }
        })
        .collect()
}

/// One row per frame over the cells the mask keeps. A frame without such
/// cells gets zero proportions and NaN statistics.
pub fn summarize(stack: &UtciStack) -> Vec<SummaryRow> {
    let mask = stack.mask().as_slice();
    stack
        .times()
        .iter()
        .zip(stack.frames())
        .map(|(&t, frame)| {
            let mut counts: BTreeMap<StressCategory, usize> = StressCategory::ALL.iter().map(|&c| (c, 0)).collect();
            let (mut sum, mut min, mut max, mut n) = (0.0, f64::INFINITY, f64::NEG_INFINITY, 0usize);
            for (&v, _) in frame.as_slice().iter().zip(mask).filter(|(_, &m)| m) {
                let v = v as f64;
                *counts.get_mut(&stress_category(v)).expect("all bands present") += 1;
                sum += v;
                min = min.min(v);
                max = max.max(v);
                n += 1;
            }
            let share = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
            let empty = n == 0;
            SummaryRow {
                time: fmt_ts(t),
                proportions: counts.into_iter().map(|(c, k)| (c, share(k))).collect(),
                mean: if empty { f64::NAN } else { sum / n as f64 },
                min: if empty { f64::NAN } else { min },
                max: if empty { f64::NAN } else { max },
                cells: n,
            }
        })
        .collect()
}
