//! Hourly station weather: CSV ingestion, a seeded synthetic generator and
//! heat-wave detection from daily maximum air temperature.

use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveDateTime, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solar::solar_position;

/// Operative heat-wave threshold for the study site (98th percentile of
/// 1991-2020 daily maxima), °C.
pub const DEFAULT_HEATWAVE_THRESHOLD_C: f64 = 38.33;
pub const DEFAULT_MIN_CONSECUTIVE_DAYS: usize = 3;
pub const DEFAULT_PAD_DAYS: usize = 3;
/// Central Daylight Time.
pub const DEFAULT_UTC_OFFSET_HOURS: i32 = -5;

pub const CSV_HEADER: [&str; 8] = [
    "timestamp",
    "ta",
    "rh",
    "wind_speed",
    "wind_dir",
    "ghi",
    "dni",
    "dhi",
];

/// Number of meteorological variables fed to the forecaster.
pub const N_VARIABLES: usize = 7;

#[derive(Debug, Error)]
pub enum MeteoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: {field}={value} out of range ({rule})")]
    Range {
        row: usize,
        field: &'static str,
        value: f64,
        rule: &'static str,
    },
    #[error("series is not strictly hourly: {}", .0.join("; "))]
    NotHourly(Vec<String>),
    #[error("empty series")]
    Empty,
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("study window {start}..={end} exceeds available data {first}..={last}")]
    WindowOutOfRange {
        start: NaiveDate,
        end: NaiveDate,
        first: NaiveDate,
        last: NaiveDate,
    },
    #[error("percentile of an empty list")]
    EmptyPercentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteoRecord {
    pub timestamp: DateTime<Utc>,
    /// Air temperature, °C.
    pub ta: f64,
    /// Relative humidity, %.
    pub rh: f64,
    /// m/s.
    pub wind_speed: f64,
    /// Degrees, [0, 360).
    pub wind_dir: f64,
    pub ghi: f64,
    pub dni: f64,
    pub dhi: f64,
}

impl MeteoRecord {
    /// Variables in model channel order.
    pub fn variables(&self) -> [f64; N_VARIABLES] {
        [
            self.ta,
            self.rh,
            self.wind_speed,
            self.wind_dir,
            self.ghi,
            self.dni,
            self.dhi,
        ]
    }

    fn check_ranges(&self, row: usize) -> Result<(), MeteoError> {
        let checks: [(&'static str, f64, bool, &'static str); 7] = [
            ("ta", self.ta, (-90.0..=70.0).contains(&self.ta), "-90..=70 °C"),
            ("rh", self.rh, (0.0..=100.0).contains(&self.rh), "0..=100 %"),
            ("wind_speed", self.wind_speed, self.wind_speed >= 0.0 && self.wind_speed.is_finite(), ">= 0"),
            ("wind_dir", self.wind_dir, (0.0..360.0).contains(&self.wind_dir), "0..360"),
            ("ghi", self.ghi, self.ghi >= 0.0 && self.ghi.is_finite(), ">= 0"),
            ("dni", self.dni, self.dni >= 0.0 && self.dni.is_finite(), ">= 0"),
            ("dhi", self.dhi, self.dhi >= 0.0 && self.dhi.is_finite(), ">= 0"),
        ];
        for (field, value, ok, rule) in checks {
            if !ok {
                return Err(MeteoError::Range {
                    row,
                    field,
                    value,
                    rule,
                });
            }
        }
        Ok(())
    }
}

/// Strictly hourly, gap-free weather series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteoSeries {
    records: Vec<MeteoRecord>,
}

impl MeteoSeries {
    pub fn new(records: Vec<MeteoRecord>) -> Result<Self, MeteoError> {
        if records.is_empty() {
            return Err(MeteoError::Empty);
        }
        let mut problems = Vec::new();
        for r in &records {
            if r.timestamp.minute() != 0 || r.timestamp.second() != 0 || r.timestamp.nanosecond() != 0 {
                problems.push(format!("not on the hour at {}", fmt_ts(r.timestamp)));
            }
        }
        for w in records.windows(2) {
            let (a, b) = (w[0].timestamp, w[1].timestamp);
            let step = b - a;
            if step <= Duration::zero() {
                problems.push(format!("out of order at {}", fmt_ts(b)));
            } else if step > Duration::hours(1) {
                let mut missing = a + Duration::hours(1);
                while missing < b {
                    problems.push(format!("gap at {}", fmt_ts(missing)));
                    missing += Duration::hours(1);
                }
            } else if step < Duration::hours(1) {
                problems.push(format!("sub-hourly step at {}", fmt_ts(b)));
            }
        }
        if problems.is_empty() {
            Ok(Self { records })
        } else {
            Err(MeteoError::NotHourly(problems))
        }
    }

    pub fn records(&self) -> &[MeteoRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn times(&self) -> Vec<DateTime<Utc>> {
        self.records.iter().map(|r| r.timestamp).collect()
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.records[0].timestamp
    }

    /// Position of a timestamp in the series.
    pub fn position(&self, t: DateTime<Utc>) -> Option<usize> {
        let offset = (t - self.start()).num_hours();
        (offset >= 0 && (offset as usize) < self.len() && self.start() + Duration::hours(offset) == t)
            .then_some(offset as usize)
    }

    /// Contiguous sub-series `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> MeteoSeries {
        MeteoSeries {
            records: self.records[start..start + len].to_vec(),
        }
    }

    /// Daily maximum air temperature per local calendar day.
    pub fn daily_maxima(&self, utc_offset_hours: i32) -> Vec<(NaiveDate, f64)> {
        let tz = FixedOffset::east_opt(utc_offset_hours * 3600).expect("utc offset in range");
        let mut out: Vec<(NaiveDate, f64)> = Vec::new();
        for r in &self.records {
            let day = r.timestamp.with_timezone(&tz).date_naive();
            match out.last_mut() {
                Some((d, max)) if *d == day => *max = max.max(r.ta),
                _ => out.push((day, r.ta)),
            }
        }
        out
    }
}

pub fn fmt_ts(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_ts(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(n) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&n));
        }
    }
    None
}

pub fn load_meteo_csv(path: impl AsRef<Path>) -> Result<MeteoSeries, MeteoError> {
    let file = std::fs::File::open(path)?;
    read_meteo_csv(file)
}

pub fn read_meteo_csv(reader: impl std::io::Read) -> Result<MeteoSeries, MeteoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 8];
    for (k, name) in CSV_HEADER.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| MeteoError::MissingColumn(name.to_string()))?;
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row?;
        let field = |k: usize| row.get(idx[k]).unwrap_or("");
        let timestamp = parse_ts(field(0)).ok_or_else(|| MeteoError::Parse {
            row: line,
            message: format!("bad timestamp `{}`", field(0)),
        })?;
        let mut vals = [0.0f64; 7];
        for (k, v) in vals.iter_mut().enumerate() {
            let raw = field(k + 1);
            *v = raw.parse().map_err(|_| MeteoError::Parse {
                row: line,
                message: format!("bad {} `{raw}`", CSV_HEADER[k + 1]),
            })?;
        }
        let rec = MeteoRecord {
            timestamp,
            ta: vals[0],
            rh: vals[1],
            wind_speed: vals[2],
            wind_dir: vals[3],
            ghi: vals[4],
            dni: vals[5],
            dhi: vals[6],
        };
        rec.check_ranges(line)?;
        records.push(rec);
    }
    MeteoSeries::new(records)
}

pub fn write_meteo_csv(series: &MeteoSeries, writer: impl std::io::Write) -> Result<(), MeteoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in series.records() {
        w.write_record([
            fmt_ts(r.timestamp),
            r.ta.to_string(),
            r.rh.to_string(),
            r.wind_speed.to_string(),
            r.wind_dir.to_string(),
            r.ghi.to_string(),
            r.dni.to_string(),
            r.dhi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_meteo_csv(series: &MeteoSeries, path: impl AsRef<Path>) -> Result<(), MeteoError> {
    let file = std::fs::File::create(path)?;
    write_meteo_csv(series, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatwaveSpec {
    /// Zero-based index of the first heat-wave day.
    pub start_day: usize,
    pub length_days: usize,
    /// Added to air temperature on heat-wave days, °C.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteoGenSpec {
    pub n_days: usize,
    /// First local calendar day.
    pub start_date: NaiveDate,
    pub utc_offset_hours: i32,
    pub latitude: f64,
    pub longitude: f64,
    /// Mean daily maximum outside the heat wave, °C.
    pub base_tmax: f64,
    /// Mean daily max-min range, °C.
    pub diurnal_range: f64,
    pub heatwave: Option<HeatwaveSpec>,
}

impl Default for MeteoGenSpec {
    fn default() -> Self {
        Self {
            n_days: 14,
            start_date: NaiveDate::from_ymd_opt(2022, 7, 3).unwrap(),
            utc_offset_hours: DEFAULT_UTC_OFFSET_HOURS,
            latitude: crate::scene::DEFAULT_LATITUDE,
            longitude: crate::scene::DEFAULT_LONGITUDE,
            base_tmax: 35.5,
            diurnal_range: 11.0,
            heatwave: Some(HeatwaveSpec {
                start_day: 3,
                length_days: 8,
                amplitude: 4.0,
            }),
        }
    }
}

/// Hour of local time at which air temperature peaks.
const PEAK_HOUR: f64 = 15.0;

/// Seeded synthetic weather.
///
/// Air temperature follows a per-day cosine peaking at 15:00 local time; RH is
/// anti-phase; radiation follows a Meinel clear-sky beam scaled by a daily
/// clearness draw, with `ghi = dni * sin(elevation) + dhi`. The random draws
/// do not depend on the heat-wave amplitude, so amplitude 0 reproduces the
/// same weather as a run without a heat wave.
pub fn generate_synthetic_meteo(seed: u64, spec: &MeteoGenSpec) -> Result<MeteoSeries, MeteoError> {
    if spec.n_days == 0 {
        return Err(MeteoError::InvalidSpec("n_days must be at least 1".into()));
    }
    if let Some(hw) = spec.heatwave {
        if hw.length_days == 0 || hw.start_day + hw.length_days > spec.n_days {
            return Err(MeteoError::InvalidSpec(format!(
                "heat wave days {}..{} outside the {}-day series",
                hw.start_day,
                hw.start_day + hw.length_days,
                spec.n_days
            )));
        }
    }
    let tz = FixedOffset::east_opt(spec.utc_offset_hours * 3600)
        .ok_or_else(|| MeteoError::InvalidSpec("utc offset out of range".into()))?;
    let local_midnight = spec.start_date.and_hms_opt(0, 0, 0).unwrap();
    let start = tz
        .from_local_datetime(&local_midnight)
        .single()
        .ok_or_else(|| MeteoError::InvalidSpec("ambiguous start".into()))?
        .with_timezone(&Utc);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut records = Vec::with_capacity(spec.n_days * 24);
    for day in 0..spec.n_days {
        let tmax_noise: f64 = rng.gen_range(-1.0..=1.0);
        let range_noise: f64 = rng.gen_range(-1.0..=1.0);
        let clearness: f64 = rng.gen_range(0.7..=1.0);
        let wind_mean: f64 = rng.gen_range(1.5..=4.0);
        let wind_center: f64 = rng.gen_range(150.0..=210.0);
        let rh_mean: f64 = rng.gen_range(50.0..=60.0);
        let heat = match spec.heatwave {
            Some(hw) if day >= hw.start_day && day < hw.start_day + hw.length_days => hw.amplitude,
            _ => 0.0,
        };
        let tmax = spec.base_tmax + tmax_noise + heat;
        let range = spec.diurnal_range + range_noise;
        for hour in 0..24 {
            let timestamp = start + Duration::hours((day * 24 + hour) as i64);
            let phase = (two_pi * (hour as f64 - PEAK_HOUR) / 24.0).cos();
            // jitter only ever cools, so the 15:00 value is the daily maximum
            let jitter: f64 = rng.gen_range(0.0..=0.3);
            let ta = tmax - range / 2.0 * (1.0 - phase) - if hour == 15 { 0.0 } else { jitter };
            let rh = (rh_mean - 20.0 * phase + rng.gen_range(-2.0..=2.0)).clamp(5.0, 100.0);
            let wind_jitter: f64 = rng.gen_range(-0.2..=0.2);
            let wind_speed = (wind_mean * (1.0 + 0.3 * phase) + wind_jitter).max(0.0);
            let wind_dir = (wind_center + rng.gen_range(-20.0..=20.0)).rem_euclid(360.0);

            let sun = solar_position(timestamp, spec.latitude, spec.longitude);
            let (ghi, dni, dhi) = if sun.is_up() {
                let sin_e = sun.elevation.to_radians().sin();
                let air_mass = (1.0 / sin_e).min(38.0);
                let beam = 1361.0 * 0.7f64.powf(air_mass.powf(0.678));
                let dni = clearness * beam;
                let dhi = sin_e * (60.0 + 400.0 * (1.0 - clearness));
                (dni * sin_e + dhi, dni, dhi)
            } else {
                (0.0, 0.0, 0.0)
            };
            records.push(MeteoRecord {
                timestamp,
                ta,
                rh,
                wind_speed,
                wind_dir,
                ghi,
                dni,
                dhi,
            });
        }
    }
    MeteoSeries::new(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatWavePeriod {
    pub start_day: NaiveDate,
    pub end_day: NaiveDate,
    pub threshold: f64,
    /// Inclusive day range analysed around the event.
    pub study_window: (NaiveDate, NaiveDate),
}

impl HeatWavePeriod {
    pub fn length_days(&self) -> usize {
        ((self.end_day - self.start_day).num_days() + 1) as usize
    }

    pub fn window_days(&self) -> usize {
        ((self.study_window.1 - self.study_window.0).num_days() + 1) as usize
    }
}

/// Maximal runs of consecutive days with `max >= threshold` lasting at least
/// `min_consecutive` days, ordered by start. Days must be consecutive dates.
pub fn detect_heatwave_runs(
    daily_maxima: &[(NaiveDate, f64)],
    threshold: f64,
    min_consecutive: usize,
) -> Vec<HeatWavePeriod> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    let min_len = min_consecutive.max(1);
    let close = |start: usize, end: usize, out: &mut Vec<HeatWavePeriod>| {
        if end - start + 1 >= min_len {
            out.push(HeatWavePeriod {
                start_day: daily_maxima[start].0,
                end_day: daily_maxima[end].0,
                threshold,
                study_window: (daily_maxima[start].0, daily_maxima[end].0),
            });
        }
    };
    for (i, &(day, max)) in daily_maxima.iter().enumerate() {
        let continues = i > 0 && daily_maxima[i - 1].0.succ_opt() == Some(day);
        if max >= threshold {
            match run_start {
                Some(_) if continues => {}
                Some(s) => {
                    close(s, i - 1, &mut out);
                    run_start = Some(i);
                }
                None => run_start = Some(i),
            }
        } else if let Some(s) = run_start.take() {
            close(s, i - 1, &mut out);
        }
    }
    if let Some(s) = run_start {
        close(s, daily_maxima.len() - 1, &mut out);
    }
    out
}

pub fn detect_heatwaves(
    series: &MeteoSeries,
    threshold: f64,
    min_consecutive: usize,
    utc_offset_hours: i32,
) -> Vec<HeatWavePeriod> {
    detect_heatwave_runs(&series.daily_maxima(utc_offset_hours), threshold, min_consecutive)
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * n)` of the sorted list.
pub fn percentile_threshold(daily_maxima: &[f64], p: f64) -> Result<f64, MeteoError> {
    if daily_maxima.is_empty() {
        return Err(MeteoError::EmptyPercentile);
    }
    let mut sorted = daily_maxima.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // p * n first keeps integer products exact (0.98 * 100 is not)
    let rank = ((p * n as f64) / 100.0 - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok(sorted[rank - 1])
}

/// Pad an event by `pad_days` on each side; the window must stay within
/// `available` (inclusive first and last day of data).
pub fn study_window(
    event: &HeatWavePeriod,
    pad_days: usize,
    available: (NaiveDate, NaiveDate),
) -> Result<HeatWavePeriod, MeteoError> {
    let pad = Duration::days(pad_days as i64);
    let start = event.start_day - pad;
    let end = event.end_day + pad;
    if start < available.0 || end > available.1 {
        return Err(MeteoError::WindowOutOfRange {
            start,
            end,
            first: available.0,
            last: available.1,
        });
    }
    Ok(HeatWavePeriod {
        study_window: (start, end),
        ..event.clone()
    })
}
