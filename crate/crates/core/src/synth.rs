//! Seeded synthetic scenes: rectangular class regions over a background class,
//! each pixel drawn as its class mean plus i.i.d. Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::grid::ClassGrid;
use crate::scene_io::Scene;

/// Axis-aligned rectangle painted with one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub class: u16,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    /// Per-channel offset added to the class mean inside this region only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_shift: Option<Vec<f64>>,
}

impl Region {
    fn overlaps(&self, other: &Region) -> bool {
        self.row < other.row + other.height
            && other.row < self.row + self.height
            && self.col < other.col + other.width
            && other.col < self.col + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// Mean spectrum of class id `i + 1`.
    pub class_means: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    /// Class painted on pixels not covered by any region.
    pub background_class: u16,
    pub regions: Vec<Region>,
}

impl SyntheticSpec {
    /// 64x64x8 three-class scene. Class 2 occupies two disconnected 16x17
    /// patches (544 pixels, prior 0.1328); class 3 one 30x24 patch; class 1 is
    /// background. Every pair of class means is at least 0.56 apart. The second
    /// class-2 patch is offset by `variability` in every channel.
    pub fn three_class_demo(noise_sigma: f64, variability: f64) -> Self {
        let base = [0.20, 0.22, 0.25, 0.30, 0.36, 0.42, 0.47, 0.50];
        let step = [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
        let alt = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let c1 = base.to_vec();
        let c2 = base.iter().zip(step).map(|(b, s)| b + 0.2 * s).collect();
        let c3 = base.iter().zip(alt).map(|(b, s)| b + 0.2 * s).collect();
        let shift = (variability != 0.0).then(|| vec![variability; 8]);
        Self {
            rows: 64,
            cols: 64,
            channels: 8,
            class_means: vec![c1, c2, c3],
            noise_sigma,
            background_class: 1,
            regions: vec![
                Region { class: 2, row: 6, col: 6, height: 16, width: 17, mean_shift: None },
                Region { class: 2, row: 42, col: 40, height: 16, width: 17, mean_shift: shift },
                Region { class: 3, row: 30, col: 4, height: 30, width: 24, mean_shift: None },
            ],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.channels == 0 {
            return Err(Error::config("synthetic scene dimensions must be positive"));
        }
        if self.class_means.is_empty() || self.class_means.len() >= u16::MAX as usize {
            return Err(Error::config("synthetic scene needs between 1 and 65534 classes"));
        }
        if let Some(i) = self.class_means.iter().position(|m| m.len() != self.channels) {
            return Err(Error::config(format!(
                "class {} mean has {} channels, scene has {}",
                i + 1,
                self.class_means[i].len(),
                self.channels
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        let valid_class = |c: u16| c >= 1 && (c as usize) <= self.class_means.len();
        if !valid_class(self.background_class) {
            return Err(Error::config(format!("unknown background class {}", self.background_class)));
        }
        for (i, region) in self.regions.iter().enumerate() {
            if !valid_class(region.class) {
                return Err(Error::config(format!("region {i} has unknown class {}", region.class)));
            }
            if region.height == 0
                || region.width == 0
                || region.row + region.height > self.rows
                || region.col + region.width > self.cols
            {
                return Err(Error::config(format!("region {i} lies outside the scene")));
            }
            if let Some(shift) = &region.mean_shift {
                if shift.len() != self.channels {
                    return Err(Error::config(format!("region {i} mean shift has wrong length")));
                }
            }
            if let Some(j) = self.regions[..i].iter().position(|r| r.overlaps(region)) {
                return Err(Error::config(format!("regions {j} and {i} overlap")));
            }
        }
        Ok(())
    }

    /// Class layout without noise.
    pub fn layout(&self) -> Result<ClassGrid> {
        self.validate()?;
        let mut ids = vec![self.background_class; self.rows * self.cols];
        for region in &self.regions {
            for r in region.row..region.row + region.height {
                for c in region.col..region.col + region.width {
                    ids[r * self.cols + c] = region.class;
                }
            }
        }
        ClassGrid::from_vec(self.rows, self.cols, ids)
    }

    pub fn generate(&self, seed: u64) -> Result<Scene> {
        let layout = self.layout()?;
        let mut region_of = vec![None; self.rows * self.cols];
        for (k, region) in self.regions.iter().enumerate() {
            for r in region.row..region.row + region.height {
                for c in region.col..region.col + region.width {
                    region_of[r * self.cols + c] = Some(k);
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
        let mut data = Vec::with_capacity(self.rows * self.cols * self.channels);
        for (i, &class) in layout.as_slice().iter().enumerate() {
            let mean = &self.class_means[class as usize - 1];
            let shift = region_of[i].and_then(|k| self.regions[k].mean_shift.as_deref());
            for (ch, &m) in mean.iter().enumerate() {
                let offset = shift.map_or(0.0, |s| s[ch]);
                let eps = if self.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push(m + offset + eps);
            }
        }
        Ok(Scene {
            cube: HsiCube::new(self.rows, self.cols, self.channels, data)?,
            ground_truth: Some(layout),
            band_names: None,
        })
    }
}

pub fn make_synthetic_scene(spec: &SyntheticSpec, seed: u64) -> Result<Scene> {
    spec.generate(seed)
}
