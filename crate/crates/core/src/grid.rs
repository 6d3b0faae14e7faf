//! Row-major 2D grids shared by every raster layer.
//!
//! Row 0 is the northernmost row; column 0 is the westernmost column.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<T>,
}

/// Persisted raster layers are single precision, matching the GRD payload.
pub type Raster = Grid<f32>;

/// `true` marks a valid (evaluable) cell.
pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(nrows: usize, ncols: usize, value: T) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![value; nrows * ncols],
        }
    }

    /// Crop the half-open window starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, nrows: usize, ncols: usize) -> Self {
        assert!(row + nrows <= self.nrows && col + ncols <= self.ncols, "crop out of bounds");
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in row..row + nrows {
            let start = r * self.ncols + col;
            data.extend_from_slice(&self.data[start..start + ncols]);
        }
        Self { nrows, ncols, data }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(nrows: usize, ncols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "grid data length does not match shape");
        Self { nrows, ncols, data }
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in 0..nrows {
            for c in 0..ncols {
                data.push(f(r, c));
            }
        }
        Self { nrows, ncols, data }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    #[inline]
    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.nrows && (col as usize) < self.ncols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.ncols + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.ncols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.ncols + col] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            nrows: self.nrows,
            ncols: self.ncols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.shape() == other.shape()
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.ncols + col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_takes_rows_and_cols() {
        let g = Grid::from_fn(4, 5, |r, c| (r * 10 + c) as u32);
        let c = g.crop(1, 2, 2, 3);
        assert_eq!(c.shape(), (2, 3));
        assert_eq!(c.as_slice(), &[12, 13, 14, 22, 23, 24]);
    }

    #[test]
    fn bounds() {
        let g = Grid::filled(2, 3, 0u8);
        assert!(g.in_bounds(1, 2));
        assert!(!g.in_bounds(2, 0));
        assert!(!g.in_bounds(0, -1));
    }
}
