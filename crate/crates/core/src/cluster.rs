//! Spectral clustering of a scene with seeded k-means, plus an on-disk cache
//! keyed by scene hash, cluster count and seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::grid::{Grid, PixelCoord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Grid<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from each pixel to its centroid.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn label(&self, p: PixelCoord) -> usize {
        self.labels[p]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in self.labels.as_slice() {
            sizes[l] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_k(cube: &HsiCube, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::config(format!("cluster count must be at least 2, got {k}")));
    }
    if k > cube.pixel_count() {
        return Err(Error::config(format!(
            "cluster count {k} exceeds pixel count {}",
            cube.pixel_count()
        )));
    }
    Ok(())
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance to the nearest chosen centre. Falls back to a uniform pick among
/// unchosen pixels once every pixel coincides with some centre.
fn plus_plus_init(cube: &HsiCube, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = cube.pixel_count();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![cube.spectrum_at(first).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(cube.spectrum_at(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive mass")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        let c = cube.spectrum_at(next).to_vec();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(cube.spectrum_at(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

pub fn kmeans(cube: &HsiCube, params: &KMeansParams) -> Result<ClusterAssignment> {
    check_k(cube, params.k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = plus_plus_init(cube, params.k, &mut rng);
    kmeans_from_centroids(cube, init, params.max_iters, params.tol)
}

fn assign(cube: &HsiCube, centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    (0..cube.pixel_count())
        .into_par_iter()
        .map(|i| {
            let s = cube.spectrum_at(i);
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(s, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Lloyd iterations from the given initial centroids until the largest
/// centroid move drops below `tol` or `max_iters` is reached. An emptied
/// cluster is re-seeded at the pixel farthest from its current centroid.
pub fn kmeans_from_centroids(
    cube: &HsiCube,
    mut centroids: Vec<Vec<f64>>,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    let k = centroids.len();
    check_k(cube, k)?;
    if centroids.iter().any(|c| c.len() != cube.channels()) {
        return Err(Error::config("initial centroid length differs from channel count"));
    }
    let channels = cube.channels();
    let mut history = Vec::new();
    let mut labels;
    let mut iterations = 0;
    loop {
        let (assigned, dists) = assign(cube, &centroids);
        labels = assigned;
        let inertia: f64 = dists.iter().sum();
        if let Some(&prev) = history.last() {
            // Lloyd never increases inertia; allow for summation rounding only.
            if inertia > prev * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::numeric(format!(
                    "k-means inertia increased from {prev} to {inertia} at iteration {iterations}"
                )));
            }
        }
        history.push(inertia);
        if iterations >= max_iters {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; channels]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (acc, v) in sums[l].iter_mut().zip(cube.spectrum_at(i)) {
                *acc += v;
            }
        }
        let mut shift: f64 = 0.0;
        let mut taken = vec![false; cube.pixel_count()];
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                let far = dists
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best })
                    .0;
                taken[far] = true;
                cube.spectrum_at(far).to_vec()
            };
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < tol {
            break;
        }
    }

    let inertia = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(cube.spectrum_at(i), &centroids[l]))
        .sum();
    Ok(ClusterAssignment {
        k,
        labels: Grid::from_vec(cube.rows(), cube.cols(), labels)?,
        centroids,
        inertia,
        iterations,
        inertia_history: history,
    })
}

/// Directory of cached assignments, one JSON file per (scene, k, seed).
#[derive(Debug, Clone)]
pub struct ClusterCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    scene_hash: String,
    params: KMeansParams,
    assignment: ClusterAssignment,
}

impl ClusterCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, scene_hash: &str, k: usize, seed: u64) -> PathBuf {
        self.dir.join(format!("kmeans-{}-k{k}-s{seed}.json", &scene_hash[..16.min(scene_hash.len())]))
    }

    fn read(path: &Path) -> Option<CacheEntry> {
        let bytes = fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Returns the cached assignment when one exists for the same scene and
    /// parameters, otherwise runs k-means and stores the result.
    pub fn get_or_compute(&self, cube: &HsiCube, params: &KMeansParams) -> Result<(ClusterAssignment, bool)> {
        let scene_hash = cube.content_hash();
        let path = self.path_for(&scene_hash, params.k, params.seed);
        if let Some(entry) = Self::read(&path) {
            if entry.scene_hash == scene_hash && entry.params == *params {
                return Ok((entry.assignment, true));
            }
        }
        let assignment = kmeans(cube, params)?;
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let entry = CacheEntry {
            scene_hash,
            params: *params,
            assignment,
        };
        let bytes = serde_json::to_vec(&entry).map_err(|e| Error::json("cluster cache", e))?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok((entry.assignment, false))
    }
}

/// Fraction of pixels on which two labelings agree under the best one-to-one
/// relabeling (exhaustive over permutations; intended for small `k`).
pub fn best_permutation_agreement(a: &[usize], b: &[usize], k: usize) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut confusion = vec![vec![0usize; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        confusion[x][y] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits: usize = (0..k).map(|i| confusion[i][p[i]]).sum();
        best = best.max(hits);
    });
    best as f64 / a.len() as f64
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut dyn FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}
