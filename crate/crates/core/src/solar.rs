//! Solar geometry from the NOAA low-precision series (Spencer's Fourier fits
//! for declination and the equation of time). Accuracy is a few tenths of a
//! degree, which is well below the one-cell resolution of the shadow march.

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunPosition {
    /// Degrees above the horizon, in [-90, 90].
    pub elevation: f64,
    /// Degrees clockwise from north, in [0, 360).
    pub azimuth: f64,
}

impl SunPosition {
    pub fn new(elevation: f64, azimuth: f64) -> Self {
        Self {
            elevation: elevation.clamp(-90.0, 90.0),
            azimuth: azimuth.rem_euclid(360.0),
        }
    }

    pub fn is_up(&self) -> bool {
        self.elevation > 0.0
    }

    /// Unit step toward the sun in grid coordinates as (d_row, d_col); rows
    /// grow southward, columns grow eastward.
    pub fn grid_direction(&self) -> (f64, f64) {
        let az = self.azimuth.to_radians();
        (-az.cos(), az.sin())
    }
}

/// Position of the sun for a UTC instant at the given latitude/longitude
/// (degrees, east positive).
pub fn solar_position(timestamp: DateTime<Utc>, latitude: f64, longitude: f64) -> SunPosition {
    let doy = timestamp.ordinal() as f64;
    let hour = timestamp.hour() as f64
        + timestamp.minute() as f64 / 60.0
        + timestamp.second() as f64 / 3600.0;
    let days_in_year = if chrono::NaiveDate::from_ymd_opt(timestamp.year(), 12, 31)
        .map(|d| d.ordinal() == 366)
        .unwrap_or(false)
    {
        366.0
    } else {
        365.0
    };
    // fractional year in radians
    let g = 2.0 * std::f64::consts::PI / days_in_year * (doy - 1.0 + (hour - 12.0) / 24.0);

    // equation of time, minutes
    let eot = 229.18
        * (0.000075 + 0.001868 * g.cos()
            - 0.032077 * g.sin()
            - 0.014615 * (2.0 * g).cos()
            - 0.040849 * (2.0 * g).sin());
    // declination, radians
    let decl = 0.006918 - 0.399912 * g.cos() + 0.070257 * g.sin() - 0.006758 * (2.0 * g).cos()
        + 0.000907 * (2.0 * g).sin()
        - 0.002697 * (3.0 * g).cos()
        + 0.00148 * (3.0 * g).sin();

    let true_solar_minutes = hour * 60.0 + eot + 4.0 * longitude;
    let hour_angle = (true_solar_minutes / 4.0 - 180.0).to_radians();

    let lat = latitude.to_radians();
    let cos_zenith =
        (lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos()).clamp(-1.0, 1.0);
    let elevation = 90.0 - cos_zenith.acos().to_degrees();
    // azimuth measured from south, shifted to clockwise-from-north
    let az_south = hour_angle
        .sin()
        .atan2(hour_angle.cos() * lat.sin() - decl.tan() * lat.cos());
    let azimuth = az_south.to_degrees() + 180.0;
    SunPosition::new(elevation, azimuth)
}
