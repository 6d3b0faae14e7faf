//! Hourly UTCI raster stacks and their on-disk layout: one GRD per hour, a
//! mask GRD, and `index.json` naming the frames in time order.

use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grd::{self, GrdError, GrdRaster, DEFAULT_NODATA};
use crate::grid::{Mask, Raster};
use crate::meteo::{fmt_ts, parse_ts};

pub const INDEX_FILE: &str = "index.json";
pub const MASK_FILE: &str = "mask.grd";

#[derive(Debug, Error)]
pub enum StackError {
    #[error(transparent)]
    Grd(#[from] GrdError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid index: {0}")]
    Index(String),
    #[error("invalid stack: {0}")]
    Invalid(String),
}

/// Time-indexed UTCI frames sharing one valid-cell mask. Masked cells hold NaN.
#[derive(Debug, Clone)]
pub struct UtciStack {
    times: Vec<DateTime<Utc>>,
    frames: Vec<Raster>,
    mask: Mask,
}

impl PartialEq for UtciStack {
    /// Bitwise frame comparison, so NaN cells compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.times == other.times
            && self.mask == other.mask
            && self.frames.len() == other.frames.len()
            && self.frames.iter().zip(&other.frames).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl UtciStack {
    /// Builds a stack, forcing masked cells to NaN.
    ///
    /// Panics if the lengths or shapes disagree.
    pub fn new(times: Vec<DateTime<Utc>>, mut frames: Vec<Raster>, mask: Mask) -> Self {
        assert_eq!(times.len(), frames.len(), "one timestamp per frame");
        for f in &mut frames {
            assert_eq!(f.shape(), mask.shape(), "frame shape must match mask");
            for (v, &m) in f.as_mut_slice().iter_mut().zip(mask.iter()) {
                if !m {
                    *v = f32::NAN;
                }
            }
        }
        Self { times, frames, mask }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn times(&self) -> &[DateTime<Utc>] {
        &self.times
    }

    pub fn frames(&self) -> &[Raster] {
        &self.frames
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn position(&self, t: DateTime<Utc>) -> Option<usize> {
        self.times.binary_search(&t).ok()
    }

    pub fn slice(&self, start: usize, len: usize) -> UtciStack {
        Self {
            times: self.times[start..start + len].to_vec(),
            frames: self.frames[start..start + len].to_vec(),
            mask: self.mask.clone(),
        }
    }

    pub fn crop(&self, row: usize, col: usize, nrows: usize, ncols: usize) -> UtciStack {
        Self {
            times: self.times.clone(),
            frames: self.frames.iter().map(|f| f.crop(row, col, nrows, ncols)).collect(),
            mask: self.mask.crop(row, col, nrows, ncols),
        }
    }

    /// Checks the stack invariants: finite unmasked values and hourly times.
    pub fn validate(&self) -> Result<(), StackError> {
        for (i, f) in self.frames.iter().enumerate() {
            for (j, (v, &m)) in f.iter().zip(self.mask.iter()).enumerate() {
                if m && !v.is_finite() {
                    let (r, c) = (j / f.ncols(), j % f.ncols());
                    return Err(StackError::Invalid(format!(
                        "frame {i} has non-finite value at ({r}, {c})"
                    )));
                }
            }
        }
        for w in self.times.windows(2) {
            if w[1] - w[0] != Duration::hours(1) {
                return Err(StackError::Invalid(format!(
                    "times not hourly at {}",
                    fmt_ts(w[1])
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackIndex {
    pub cell_size: f64,
    pub times: Vec<String>,
    pub frames: Vec<String>,
    pub mask: String,
    /// Producer details (simulator parameters or model checkpoint hash).
    #[serde(default)]
    pub params: serde_json::Value,
}

fn io_err(path: &Path, source: std::io::Error) -> StackError {
    StackError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:04}.grd")
}

/// Writes the stack into `dir` (created if missing).
pub fn save_stack(
    stack: &UtciStack,
    dir: impl AsRef<Path>,
    cell_size: f64,
    params: serde_json::Value,
) -> Result<StackIndex, StackError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mask_raster = stack.mask.map(|&m| if m { 1.0 } else { 0.0 });
    grd::save(&GrdRaster::new(mask_raster, cell_size), dir.join(MASK_FILE))?;
    let mut frames = Vec::with_capacity(stack.len());
    for (i, f) in stack.frames.iter().enumerate() {
        let name = frame_file_name(i);
        grd::save(
            &GrdRaster::from_nan_raster(f, cell_size, DEFAULT_NODATA),
            dir.join(&name),
        )?;
        frames.push(name);
    }
    let index = StackIndex {
        cell_size,
        times: stack.times.iter().map(|&t| fmt_ts(t)).collect(),
        frames,
        mask: MASK_FILE.into(),
        params,
    };
    let path = dir.join(INDEX_FILE);
    let json = serde_json::to_vec_pretty(&index).expect("index serializes");
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(index)
}

pub fn read_index(dir: impl AsRef<Path>) -> Result<StackIndex, StackError> {
    let path = dir.as_ref().join(INDEX_FILE);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| StackError::Index(e.to_string()))
}

pub fn load_stack(dir: impl AsRef<Path>) -> Result<(UtciStack, StackIndex), StackError> {
    let dir = dir.as_ref();
    let index = read_index(dir)?;
    if index.times.len() != index.frames.len() {
        return Err(StackError::Index(format!(
            "{} times but {} frames",
            index.times.len(),
            index.frames.len()
        )));
    }
    let mask = grd::load(dir.join(&index.mask))?.raster.map(|&v| v != 0.0);
    let mut times = Vec::with_capacity(index.times.len());
    for s in &index.times {
        times.push(parse_ts(s).ok_or_else(|| StackError::Index(format!("bad timestamp `{s}`")))?);
    }
    let mut frames = Vec::with_capacity(index.frames.len());
    for name in &index.frames {
        let f = grd::load(dir.join(name))?;
        if f.raster.shape() != mask.shape() {
            return Err(StackError::Invalid(format!(
                "{name} has shape {:?}, mask has {:?}",
                f.raster.shape(),
                mask.shape()
            )));
        }
        frames.push(f.to_nan_raster());
    }
    let stack = UtciStack::new(times, frames, mask);
    stack.validate()?;
    Ok((stack, index))
}
