//! Row-major 2-D grids and pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pixel position. Serialized as a `[row, col]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct PixelCoord {
    pub row: usize,
    pub col: usize,
}

impl PixelCoord {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn distance(self, other: PixelCoord) -> f64 {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        (dr * dr + dc * dc).sqrt()
    }
}

impl From<[usize; 2]> for PixelCoord {
    fn from([row, col]: [usize; 2]) -> Self {
        Self { row, col }
    }
}

impl From<PixelCoord> for [usize; 2] {
    fn from(p: PixelCoord) -> Self {
        [p.row, p.col]
    }
}

/// Dense row-major grid of per-pixel values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Ground-truth class ids; 0 means unannotated.
pub type ClassGrid = Grid<u16>;

impl<T> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::data(format!("grid dimensions must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::data(format!(
                "grid size mismatch: {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(PixelCoord) -> T) -> Self {
        let data = (0..rows * cols)
            .map(|i| f(PixelCoord::new(i / cols, i % cols)))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn contains(&self, p: PixelCoord) -> bool {
        p.row < self.rows && p.col < self.cols
    }

    pub fn index_of(&self, p: PixelCoord) -> usize {
        debug_assert!(self.contains(p));
        p.row * self.cols + p.col
    }

    pub fn coord_of(&self, index: usize) -> PixelCoord {
        PixelCoord::new(index / self.cols, index % self.cols)
    }

    pub fn get(&self, p: PixelCoord) -> Option<&T> {
        self.contains(p).then(|| &self.data[p.row * self.cols + p.col])
    }

    pub fn set(&mut self, p: PixelCoord, value: T) {
        let i = self.index_of(p);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn coords(&self) -> impl Iterator<Item = PixelCoord> + '_ {
        (0..self.data.len()).map(move |i| self.coord_of(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (PixelCoord, &T)> + '_ {
        self.data.iter().enumerate().map(move |(i, v)| (self.coord_of(i), v))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// In-bounds 4-neighbours in N, S, W, E order.
    pub fn neighbors4(&self, p: PixelCoord) -> impl Iterator<Item = PixelCoord> {
        let (rows, cols) = (self.rows, self.cols);
        let north = (p.row > 0).then(|| PixelCoord::new(p.row - 1, p.col));
        let south = (p.row + 1 < rows).then(|| PixelCoord::new(p.row + 1, p.col));
        let west = (p.col > 0).then(|| PixelCoord::new(p.row, p.col - 1));
        let east = (p.col + 1 < cols).then(|| PixelCoord::new(p.row, p.col + 1));
        [north, south, west, east].into_iter().flatten()
    }
}

impl<T> std::ops::Index<PixelCoord> for Grid<T> {
    type Output = T;

    fn index(&self, p: PixelCoord) -> &T {
        assert!(self.contains(p), "pixel {p:?} outside {}x{} grid", self.rows, self.cols);
        &self.data[p.row * self.cols + p.col]
    }
}

impl ClassGrid {
    /// Number of pixels carrying `class`.
    pub fn count_class(&self, class: u16) -> usize {
        self.data.iter().filter(|&&c| c == class).count()
    }

    /// Number of distinct non-zero class ids.
    pub fn class_count(&self) -> usize {
        let mut seen: Vec<u16> = self.data.iter().copied().filter(|&c| c != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}
