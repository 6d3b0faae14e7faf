//! GRD raster files: a short ASCII header followed by a little-endian `f32`
//! payload in row-major order, row 0 northernmost.
//!
//! ```text
//! GRD1
//! nrows <int>
//! ncols <int>
//! cell_size <float>
//! nodata <float>
//! dtype f32
//!
//! <nrows * ncols * 4 bytes>
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::grid::{Mask, Raster};

pub const MAGIC: &str = "GRD1";
pub const DEFAULT_NODATA: f32 = -9999.0;

#[derive(Debug, Error)]
pub enum GrdError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("header error at byte {offset}: {message}")]
    Header { offset: usize, message: String },
    #[error("payload size mismatch at byte {offset}: expected {expected} bytes, found {found}")]
    PayloadSize {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at byte {offset} (row {row}, col {col})")]
    NonFinite { offset: usize, row: usize, col: usize },
}

/// A raster as stored in a GRD file.
#[derive(Debug, Clone, PartialEq)]
pub struct GrdRaster {
    pub raster: Raster,
    pub cell_size: f64,
    pub nodata: f32,
}

impl GrdRaster {
    pub fn new(raster: Raster, cell_size: f64) -> Self {
        Self {
            raster,
            cell_size,
            nodata: DEFAULT_NODATA,
        }
    }

    fn is_nodata(&self, v: f32) -> bool {
        v.to_bits() == self.nodata.to_bits() || (self.nodata.is_nan() && v.is_nan())
    }

    /// Valid-cell mask: `false` wherever the payload holds the sentinel.
    pub fn mask(&self) -> Mask {
        self.raster.map(|&v| !self.is_nodata(v))
    }

    /// Raster with sentinel cells replaced by NaN.
    pub fn to_nan_raster(&self) -> Raster {
        self.raster
            .map(|&v| if self.is_nodata(v) { f32::NAN } else { v })
    }

    /// Wrap a NaN-masked raster, writing `nodata` at invalid cells.
    pub fn from_nan_raster(raster: &Raster, cell_size: f64, nodata: f32) -> Self {
        Self {
            raster: raster.map(|&v| if v.is_nan() { nodata } else { v }),
            cell_size,
            nodata,
        }
    }
}

pub fn encode(grd: &GrdRaster) -> Vec<u8> {
    let header = format!(
        "{MAGIC}\nnrows {}\nncols {}\ncell_size {}\nnodata {}\ndtype f32\n\n",
        grd.raster.nrows(),
        grd.raster.ncols(),
        grd.cell_size,
        grd.nodata
    );
    let mut out = Vec::with_capacity(header.len() + grd.raster.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for v in grd.raster.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn line(&mut self) -> Result<(usize, &'a str), GrdError> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or(GrdError::Header {
            offset: start,
            message: "unterminated header line".into(),
        })?;
        self.pos = start + nl + 1;
        let text = std::str::from_utf8(&rest[..nl]).map_err(|_| GrdError::Header {
            offset: start,
            message: "header is not ASCII".into(),
        })?;
        Ok((start, text))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str), GrdError> {
        let (offset, text) = self.line()?;
        match text.split_once(' ') {
            Some((k, v)) if k == key => Ok((offset, v.trim())),
            _ => Err(GrdError::Header {
                offset,
                message: format!("expected `{key} <value>`, found `{text}`"),
            }),
        }
    }
}

fn parse_num<T: std::str::FromStr>(offset: usize, key: &str, v: &str) -> Result<T, GrdError> {
    v.parse().map_err(|_| GrdError::Header {
        offset,
        message: format!("invalid {key} `{v}`"),
    })
}

pub fn decode(bytes: &[u8]) -> Result<GrdRaster, GrdError> {
    let mut rd = HeaderReader { bytes, pos: 0 };
    let (offset, magic) = rd.line()?;
    if magic != MAGIC {
        return Err(GrdError::Header {
            offset,
            message: format!("bad magic `{magic}`"),
        });
    }
    let (o, v) = rd.field("nrows")?;
    let nrows: usize = parse_num(o, "nrows", v)?;
    let (o, v) = rd.field("ncols")?;
    let ncols: usize = parse_num(o, "ncols", v)?;
    let (o, v) = rd.field("cell_size")?;
    let cell_size: f64 = parse_num(o, "cell_size", v)?;
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(GrdError::Header {
            offset: o,
            message: format!("cell_size must be positive, found {cell_size}"),
        });
    }
    let (o, v) = rd.field("nodata")?;
    let nodata: f32 = parse_num(o, "nodata", v)?;
    let (o, v) = rd.field("dtype")?;
    if v != "f32" {
        return Err(GrdError::Header {
            offset: o,
            message: format!("unsupported dtype `{v}`"),
        });
    }
    let (o, blank) = rd.line()?;
    if !blank.is_empty() {
        return Err(GrdError::Header {
            offset: o,
            message: "expected blank line after header".into(),
        });
    }
    let payload_start = rd.pos;
    let expected = nrows * ncols * 4;
    let found = bytes.len() - payload_start;
    if expected != found {
        return Err(GrdError::PayloadSize {
            offset: payload_start,
            expected,
            found,
        });
    }
    let nodata_is_nan = nodata.is_nan();
    let mut data = Vec::with_capacity(nrows * ncols);
    for (i, chunk) in bytes[payload_start..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let sentinel = v.to_bits() == nodata.to_bits() || (nodata_is_nan && v.is_nan());
        if !v.is_finite() && !sentinel {
            return Err(GrdError::NonFinite {
                offset: payload_start + i * 4,
                row: i / ncols,
                col: i % ncols,
            });
        }
        data.push(v);
    }
    Ok(GrdRaster {
        raster: Raster::from_vec(nrows, ncols, data),
        cell_size,
        nodata,
    })
}

pub fn save(grd: &GrdRaster, path: impl AsRef<Path>) -> Result<(), GrdError> {
    let path = path.as_ref();
    fs::write(path, encode(grd)).map_err(|source| GrdError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<GrdRaster, GrdError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| GrdError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
