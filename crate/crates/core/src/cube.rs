//! Hyperspectral cube storage, per-channel normalization and patch extraction.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::PixelCoord;

/// A `rows x cols x channels` reflectance volume stored row-major as
/// `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl HsiCube {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::data(format!(
                "cube dimensions must be positive, got {rows}x{cols}x{channels}"
            )));
        }
        let expected = rows * cols * channels;
        if data.len() != expected {
            return Err(Error::data(format!(
                "size mismatch: {rows}x{cols}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            data,
            normalized: false,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn contains(&self, p: PixelCoord) -> bool {
        p.row < self.rows && p.col < self.cols
    }

    pub fn value(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.cols + col) * self.channels + channel]
    }

    /// Spectrum of pixel `p`.
    pub fn spectrum(&self, p: PixelCoord) -> &[f64] {
        self.spectrum_at(p.row * self.cols + p.col)
    }

    /// Spectrum by row-major pixel index.
    pub fn spectrum_at(&self, index: usize) -> &[f64] {
        let start = index * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn spectra(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.channels)
    }

    /// Rescales each channel to `[0, 1]` with `(x - min) / (max - min)`.
    ///
    /// Constant channels become all zeros.
    pub fn normalize(&self) -> Result<HsiCube> {
        if self.normalized {
            return Err(Error::data("cube is already normalized"));
        }
        let mut mins = vec![f64::INFINITY; self.channels];
        let mut maxs = vec![f64::NEG_INFINITY; self.channels];
        for spectrum in self.spectra() {
            for (c, &v) in spectrum.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::data(format!("non-finite value {v} in channel {c}")));
                }
                mins[c] = mins[c].min(v);
                maxs[c] = maxs[c].max(v);
            }
        }
        let mut data = self.data.clone();
        for spectrum in data.chunks_exact_mut(self.channels) {
            for (c, v) in spectrum.iter_mut().enumerate() {
                let range = maxs[c] - mins[c];
                *v = if range > 0.0 { (*v - mins[c]) / range } else { 0.0 };
            }
        }
        Ok(HsiCube {
            data,
            normalized: true,
            ..*self
        })
    }

    /// The `p x p` spatial window centred on `center`, across all channels.
    ///
    /// Positions past the border are mirrored without repeating the edge
    /// pixel, so index -1 reads index 1.
    pub fn extract_patch(&self, center: PixelCoord, size: usize) -> Result<Patch> {
        let mut values = Vec::with_capacity(size * size * self.channels);
        self.write_patch(center, size, &mut values)?;
        Ok(Patch {
            center,
            size,
            channels: self.channels,
            values,
        })
    }

    /// Appends the flattened patch to `out`. Used by the training loops to avoid
    /// a `Patch` allocation per example.
    pub fn write_patch(&self, center: PixelCoord, size: usize, out: &mut Vec<f64>) -> Result<()> {
        if size % 2 == 0 {
            return Err(Error::config(format!("patch size must be odd, got {size}")));
        }
        if !self.contains(center) {
            return Err(Error::data(format!(
                "patch center {center:?} outside {}x{} scene",
                self.rows, self.cols
            )));
        }
        let half = (size / 2) as isize;
        for dr in -half..=half {
            let r = reflect(center.row as isize + dr, self.rows);
            for dc in -half..=half {
                let c = reflect(center.col as isize + dc, self.cols);
                out.extend_from_slice(self.spectrum_at(r * self.cols + c));
            }
        }
        Ok(())
    }

    /// SHA-256 over dimensions and the little-endian bytes of every value.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for dim in [self.rows, self.cols, self.channels] {
            hasher.update((dim as u64).to_le_bytes());
        }
        hasher.update([self.normalized as u8]);
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Mirror an out-of-range index back into `0..len` (edge pixel not repeated).
fn reflect(mut i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let n = len as isize;
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// A `size x size x channels` neighbourhood stored as `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: PixelCoord,
    pub size: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl Patch {
    pub fn value(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.size + col) * self.channels + channel]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.size + col) * self.channels;
        &self.values[start..start + self.channels]
    }
}
