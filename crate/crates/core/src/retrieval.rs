//! Retrieval models that estimate how likely each unlabelled pixel is to be
//! the query material, and weighted sampling of pseudo-negatives.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};
use crate::grid::{Grid, PixelCoord};
use crate::labels::LabelState;
use crate::raster::{encode_pgm16, quantize16};

pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalModel {
    /// Distance to the nearest labeled positive.
    Spatial,
    /// Share of labeled positives in the pixel's cluster.
    Spectral,
    /// Product of the two.
    Hybrid,
}

impl FromStr for RetrievalModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Self::Spatial),
            "spectral" => Ok(Self::Spectral),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(Error::config(format!("unknown retrieval model '{other}'"))),
        }
    }
}

impl fmt::Display for RetrievalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Spatial => "spatial",
            Self::Spectral => "spectral",
            Self::Hybrid => "hybrid",
        })
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    /// Distance (pixels) at which the spatial factor is 0.5.
    pub baseline: f64,
    /// Softness of the spatial falloff, in pixels.
    pub temperature: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub model: RetrievalModel,
}

/// Named `(baseline, temperature)` pairs tuned for three benchmark scenes.
pub const PRESETS: [(&str, f64, f64); 3] = [
    ("indian-pines-like", 32.0, 24.0),
    ("salinas-like", 26.0, 22.0),
    ("pavia-like", 26.0, 14.0),
];

impl RetrievalParams {
    pub fn new(baseline: f64, temperature: f64, model: RetrievalModel) -> Result<Self> {
        let params = Self {
            baseline,
            temperature,
            epsilon: DEFAULT_EPSILON,
            model,
        };
        params.validate()?;
        Ok(params)
    }

    /// Hybrid model with a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        let (_, b, t) = PRESETS
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| Error::config(format!("unknown retrieval preset '{name}'")))?;
        Self::new(*b, *t, RetrievalModel::Hybrid)
    }

    /// Baseline and temperature multiplied by `factor`, e.g. to carry a preset
    /// over to a smaller scene.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let params = Self {
            baseline: self.baseline * factor,
            temperature: self.temperature * factor,
            ..*self
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.baseline >= 0.0 && self.baseline.is_finite()) {
            return Err(Error::config(format!("baseline must be >= 0, got {}", self.baseline)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// `1 / (1 + exp((distance - b) / T))`.
pub fn spatial_probability(distance: f64, params: &RetrievalParams) -> f64 {
    1.0 / (1.0 + ((distance - params.baseline) / params.temperature).exp())
}

/// `min(1, (m + eps) / n)` for `m` labeled positives in a cluster of `n`.
pub fn spectral_probability(m: usize, n: usize, epsilon: f64) -> f64 {
    ((m as f64 + epsilon) / n as f64).min(1.0)
}

fn require_positives(labels: &LabelState) -> Result<()> {
    if labels.positives().is_empty() {
        return Err(Error::data("no labeled positives"));
    }
    Ok(())
}

/// Euclidean pixel distance from `x` to the nearest labeled positive.
pub fn distance_to_nearest_positive(x: PixelCoord, labels: &LabelState) -> Result<f64> {
    require_positives(labels)?;
    Ok(labels
        .positives()
        .iter()
        .map(|&p| x.distance(p))
        .fold(f64::INFINITY, f64::min))
}

pub fn spatial_score(x: PixelCoord, labels: &LabelState, params: &RetrievalParams) -> Result<f64> {
    Ok(spatial_probability(distance_to_nearest_positive(x, labels)?, params))
}

pub fn spectral_score(
    x: PixelCoord,
    labels: &LabelState,
    clusters: &ClusterAssignment,
    params: &RetrievalParams,
) -> Result<f64> {
    check_cluster_shape(labels, clusters)?;
    let c = clusters.label(x);
    let n = clusters.labels.as_slice().iter().filter(|&&l| l == c).count();
    let m = labels.positives().iter().filter(|&&p| clusters.label(p) == c).count();
    Ok(spectral_probability(m, n, params.epsilon))
}

pub fn hybrid_score(
    x: PixelCoord,
    labels: &LabelState,
    clusters: &ClusterAssignment,
    params: &RetrievalParams,
) -> Result<f64> {
    Ok(spectral_score(x, labels, clusters, params)? * spatial_score(x, labels, params)?)
}

fn check_cluster_shape(labels: &LabelState, clusters: &ClusterAssignment) -> Result<()> {
    if clusters.labels.rows() != labels.rows() || clusters.labels.cols() != labels.cols() {
        return Err(Error::data("cluster map and label state dimensions differ"));
    }
    Ok(())
}

/// Exact Euclidean distance from every pixel to the nearest `true` cell
/// (separable lower-envelope transform). Infinite when the mask is empty.
pub fn distance_transform(mask: &Grid<bool>) -> Grid<f64> {
    let (rows, cols) = (mask.rows(), mask.cols());
    let mut sq: Vec<f64> = mask
        .as_slice()
        .iter()
        .map(|&m| if m { 0.0 } else { f64::INFINITY })
        .collect();
    let mut column = vec![0.0; rows];
    let mut out = vec![0.0; rows.max(cols)];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = sq[r * cols + c];
        }
        lower_envelope(&column, &mut out[..rows]);
        for r in 0..rows {
            sq[r * cols + c] = out[r];
        }
    }
    for r in 0..rows {
        let row = &mut sq[r * cols..(r + 1) * cols];
        lower_envelope(row, &mut out[..cols]);
        row.copy_from_slice(&out[..cols]);
    }
    Grid::from_vec(rows, cols, sq.into_iter().map(f64::sqrt).collect()).expect("shape preserved")
}

/// `out[q] = min_p (q - p)^2 + f[p]` over finite `f[p]`.
fn lower_envelope(f: &[f64], out: &mut [f64]) {
    let mut v: Vec<usize> = Vec::with_capacity(f.len());
    let mut z: Vec<f64> = Vec::with_capacity(f.len());
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        while let Some(&p) = v.last() {
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= *z.last().expect("z tracks v") {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
}

/// Positive-class probability for every unlabelled pixel; `None` elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub params: RetrievalParams,
    pub scores: Grid<Option<f64>>,
}

impl RetrievalScores {
    pub fn get(&self, p: PixelCoord) -> Option<f64> {
        self.scores.get(p).copied().flatten()
    }

    /// `(pixel, score)` over the unlabelled set in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (PixelCoord, f64)> + '_ {
        self.scores.iter().filter_map(|(p, s)| s.map(|s| (p, s)))
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scores serialize")
    }

    /// Binary 16-bit PGM; scores map to `round(s * 65535)`, pixels without a
    /// score are 0.
    pub fn to_pgm16(&self, text: &[(&str, &str)]) -> Vec<u8> {
        let data: Vec<u16> = self.scores.as_slice().iter().map(|s| s.map_or(0, quantize16)).collect();
        encode_pgm16(self.scores.cols(), self.scores.rows(), &data, text)
    }
}

/// Scores every unlabelled pixel. `clusters` is required for the spectral
/// and hybrid models.
pub fn score_unlabelled(
    labels: &LabelState,
    clusters: Option<&ClusterAssignment>,
    params: &RetrievalParams,
) -> Result<RetrievalScores> {
    params.validate()?;
    require_positives(labels)?;
    let (rows, cols) = (labels.rows(), labels.cols());

    let spatial = match params.model {
        RetrievalModel::Spatial | RetrievalModel::Hybrid => {
            let mask = Grid::from_fn(rows, cols, |p| labels.is_positive(p));
            Some(distance_transform(&mask).map(|&d| spatial_probability(d, params)))
        }
        RetrievalModel::Spectral => None,
    };
    let spectral = match params.model {
        RetrievalModel::Spectral | RetrievalModel::Hybrid => {
            let clusters = clusters
                .ok_or_else(|| Error::config(format!("the {} retrieval model needs a cluster assignment", params.model)))?;
            check_cluster_shape(labels, clusters)?;
            let sizes = clusters.cluster_sizes();
            let mut hits = vec![0usize; clusters.k];
            for &p in labels.positives() {
                hits[clusters.label(p)] += 1;
            }
            let per_cluster: Vec<f64> = (0..clusters.k)
                .map(|c| if sizes[c] == 0 { 0.0 } else { spectral_probability(hits[c], sizes[c], params.epsilon) })
                .collect();
            Some(clusters.labels.map(|&c| per_cluster[c]))
        }
        RetrievalModel::Spatial => None,
    };

    let mut scores = Grid::from_fn(rows, cols, |_| None);
    for &p in labels.unlabelled() {
        let a = spatial.as_ref().map_or(1.0, |g| g[p]);
        let b = spectral.as_ref().map_or(1.0, |g| g[p]);
        scores.set(p, Some(a * b));
    }
    Ok(RetrievalScores { params: *params, scores })
}

/// Draws `count` distinct unlabelled pixels, each with probability
/// proportional to `1 - Pr+`. Returned in draw order.
///
/// Uses one exponential key per pixel; taking the largest keys is
/// distributed exactly like repeated renormalized weighted draws.
pub fn sample_negatives(
    labels: &LabelState,
    scores: &RetrievalScores,
    count: usize,
    seed: u64,
) -> Result<Vec<PixelCoord>> {
    let pool: Vec<(PixelCoord, f64)> = labels
        .unlabelled()
        .iter()
        .map(|&p| {
            scores
                .get(p)
                .map(|s| (p, (1.0 - s).max(0.0)))
                .ok_or_else(|| Error::data(format!("no retrieval score for unlabelled pixel [{}, {}]", p.row, p.col)))
        })
        .collect::<Result<_>>()?;
    weighted_sample_without_replacement(&pool, count, seed)
}

/// Weighted sampling without replacement over `(item, weight)` pairs.
pub fn weighted_sample_without_replacement<T: Copy>(pool: &[(T, f64)], count: usize, seed: u64) -> Result<Vec<T>> {
    if count > pool.len() {
        return Err(Error::data(format!("cannot draw {count} from a pool of {}", pool.len())));
    }
    let eligible = pool.iter().filter(|(_, w)| *w > 0.0).count();
    if eligible == 0 && count > 0 {
        return Err(Error::numeric("sampling weights sum to zero"));
    }
    if count > eligible {
        return Err(Error::numeric(format!(
            "only {eligible} pixels have non-zero sampling weight, {count} requested"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, usize)> = pool
        .iter()
        .enumerate()
        .map(|(i, &(_, w))| {
            let u: f64 = rng.random();
            let key = if w > 0.0 { (1.0 - u).ln() / w } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keyed[..count].iter().map(|&(_, i)| pool[i].0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    use proptest::prelude::*;

    fn params(b: f64, t: f64) -> RetrievalParams {
        RetrievalParams::new(b, t, RetrievalModel::Spatial).unwrap()
    }

    fn open_scope(rows: usize, cols: usize) -> Grid<bool> {
        Grid::from_fn(rows, cols, |_| true)
    }

    #[test]
    fn spatial_examples() {
        let p = params(32.0, 24.0);
        assert!((spatial_probability(32.0, &p) - 0.5).abs() < 1e-10);
        let expected = 1.0 / (1.0 + std::f64::consts::E);
        assert!((spatial_probability(56.0, &p) - expected).abs() < 1e-10);
        assert!((spatial_probability(56.0, &p) - 0.2689).abs() < 1e-4);
        assert!(spatial_probability(1e6, &p) < 1e-10);
        assert!(spatial_probability(1.0, &params(1e4, 1.0)) > 1.0 - 1e-10);
        let at_zero = 1.0 / (1.0 + (-32.0f64 / 24.0).exp());
        assert!((spatial_probability(0.0, &p) - at_zero).abs() < 1e-15);
    }

    #[test]
    fn spectral_examples() {
        assert!((spectral_probability(0, 10, 1e-4) - 1e-5).abs() < 1e-10);
        assert_eq!(spectral_probability(7, 7, 1e-4), 1.0);
        assert!((spectral_probability(5, 50, 1e-4) - 0.100002).abs() < 1e-10);
    }

    #[test]
    fn hybrid_is_product_of_factors() {
        let scope = open_scope(2, 3);
        let labels = LabelState::new(&scope, [PixelCoord::new(0, 0)], None).unwrap();
        let clusters = ClusterAssignment {
            k: 2,
            labels: Grid::from_vec(2, 3, vec![0, 0, 1, 0, 1, 1]).unwrap(),
            centroids: vec![vec![0.0], vec![1.0]],
            inertia: 0.0,
            iterations: 0,
            inertia_history: vec![],
        };
        let rp = RetrievalParams::new(1.0, 0.5, RetrievalModel::Hybrid).unwrap();
        let x = PixelCoord::new(1, 2);
        let a = spatial_score(x, &labels, &rp).unwrap();
        let b = spectral_score(x, &labels, &clusters, &rp).unwrap();
        assert!((b - 1e-4 / 3.0).abs() < 1e-15);
        assert_eq!(hybrid_score(x, &labels, &clusters, &rp).unwrap(), a * b);
        let all = score_unlabelled(&labels, Some(&clusters), &rp).unwrap();
        assert_eq!(all.len(), 5);
        assert_eq!(all.get(PixelCoord::new(0, 0)), None);
        for (p, s) in all.iter() {
            let direct = hybrid_score(p, &labels, &clusters, &rp).unwrap();
            assert!((s - direct).abs() < 1e-12);
        }
        assert!(matches!(
            score_unlabelled(&labels, None, &rp),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn spectral_invariant_to_cluster_relabeling() {
        let scope = open_scope(2, 3);
        let labels = LabelState::new(&scope, [PixelCoord::new(0, 0), PixelCoord::new(1, 2)], None).unwrap();
        let ids = vec![0, 2, 1, 0, 1, 2];
        let swapped = ids.iter().map(|&c| [2, 0, 1][c]).collect();
        let make = |labels_vec| ClusterAssignment {
            k: 3,
            labels: Grid::from_vec(2, 3, labels_vec).unwrap(),
            centroids: vec![vec![0.0]; 3],
            inertia: 0.0,
            iterations: 0,
            inertia_history: vec![],
        };
        let rp = RetrievalParams::new(1.0, 1.0, RetrievalModel::Spectral).unwrap();
        let a = score_unlabelled(&labels, Some(&make(ids)), &rp).unwrap();
        let b = score_unlabelled(&labels, Some(&make(swapped)), &rp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_positive_set_is_rejected() {
        let labels = LabelState::new(&open_scope(2, 2), [], None).unwrap();
        assert!(spatial_score(PixelCoord::new(0, 0), &labels, &params(1.0, 1.0)).is_err());
    }

    #[test]
    fn presets_and_scaling() {
        let ip = RetrievalParams::preset("indian-pines-like").unwrap();
        assert_eq!((ip.baseline, ip.temperature), (32.0, 24.0));
        let pv = RetrievalParams::preset("pavia-like").unwrap();
        assert_eq!((pv.baseline, pv.temperature), (26.0, 14.0));
        let sa = RetrievalParams::preset("salinas-like").unwrap();
        assert_eq!((sa.baseline, sa.temperature), (26.0, 22.0));
        let half = ip.scaled(0.5).unwrap();
        assert_eq!((half.baseline, half.temperature), (16.0, 12.0));
        assert!(RetrievalParams::preset("nope").is_err());
        assert!(RetrievalParams::new(1.0, 0.0, RetrievalModel::Spatial).is_err());
    }

    fn brute_force_edt(mask: &Grid<bool>) -> Grid<f64> {
        Grid::from_fn(mask.rows(), mask.cols(), |p| {
            mask.iter()
                .filter(|(_, &m)| m)
                .map(|(q, _)| p.distance(q))
                .fold(f64::INFINITY, f64::min)
        })
    }

    proptest! {
        #[test]
        fn distance_transform_matches_brute_force(
            rows in 1usize..12, cols in 1usize..12,
            bits in proptest::collection::vec(proptest::bool::weighted(0.15), 144),
        ) {
            let mask = Grid::from_fn(rows, cols, |p| bits[p.row * 12 + p.col]);
            let fast = distance_transform(&mask);
            let slow = brute_force_edt(&mask);
            for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
                prop_assert!(a == b || (a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }

        #[test]
        fn spatial_strictly_decreasing(d1 in 0.0f64..100.0, gap in 1e-3f64..50.0, b in 0.0f64..40.0, t in 0.5f64..30.0) {
            let p = params(b, t);
            prop_assert!(spatial_probability(d1 + gap, &p) < spatial_probability(d1, &p));
        }

        #[test]
        fn hybrid_bounded_by_each_factor(
            d in 0.0f64..100.0, b in 0.0f64..40.0, t in 0.5f64..30.0,
            n in 1usize..200, m_frac in 0.0f64..=1.0,
        ) {
            let m = ((n as f64) * m_frac) as usize;
            let a = spatial_probability(d, &params(b, t));
            let s = spectral_probability(m, n, DEFAULT_EPSILON);
            let h = a * s;
            prop_assert!(h <= a && h <= s);
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }

    fn two_pixel_scores(pr_plus: [f64; 2]) -> (LabelState, RetrievalScores) {
        let scope = Grid::from_fn(1, 3, |_| true);
        let labels = LabelState::new(&scope, [PixelCoord::new(0, 2)], None).unwrap();
        let mut scores = Grid::from_fn(1, 3, |_| None);
        scores.set(PixelCoord::new(0, 0), Some(pr_plus[0]));
        scores.set(PixelCoord::new(0, 1), Some(pr_plus[1]));
        (labels, RetrievalScores { params: params(1.0, 1.0), scores })
    }

    #[test]
    fn single_draw_frequency_follows_negative_mass() {
        let (labels, scores) = two_pixel_scores([0.25, 0.75]);
        let hits = (0..10_000)
            .filter(|&seed| sample_negatives(&labels, &scores, 1, seed).unwrap()[0] == PixelCoord::new(0, 0))
            .count();
        assert!((7250..=7750).contains(&hits), "{hits}");
    }

    #[test]
    fn zero_mass_pixels_never_drawn() {
        let (labels, scores) = two_pixel_scores([0.0, 1.0]);
        for seed in 0..200 {
            assert_eq!(sample_negatives(&labels, &scores, 1, seed).unwrap(), vec![PixelCoord::new(0, 0)]);
        }
        let (labels, scores) = two_pixel_scores([1.0, 1.0]);
        assert!(matches!(sample_negatives(&labels, &scores, 1, 0), Err(Error::Numeric(_))));
    }

    /// Probability of each ordered outcome under sequential renormalized draws.
    fn sequential_oracle(weights: &[f64], count: usize) -> HashMap<Vec<usize>, f64> {
        fn rec(weights: &[f64], count: usize, prefix: &mut Vec<usize>, prob: f64, out: &mut HashMap<Vec<usize>, f64>) {
            if prefix.len() == count {
                out.insert(prefix.clone(), prob);
                return;
            }
            let remaining: f64 = (0..weights.len()).filter(|i| !prefix.contains(i)).map(|i| weights[i]).sum();
            for i in 0..weights.len() {
                if prefix.contains(&i) || weights[i] == 0.0 {
                    continue;
                }
                prefix.push(i);
                rec(weights, count, prefix, prob * weights[i] / remaining, out);
                prefix.pop();
            }
        }
        let mut out = HashMap::new();
        rec(weights, count, &mut Vec::new(), 1.0, &mut out);
        out
    }

    #[test]
    fn key_sampling_matches_sequential_oracle() {
        let weights = [0.5, 0.1, 0.9, 0.3, 0.0, 0.2];
        let pool: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
        let trials = 40_000;
        for count in [1, 2, 3] {
            let oracle = sequential_oracle(&weights, count);
            let total: f64 = oracle.values().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
            for seed in 0..trials {
                let draw = weighted_sample_without_replacement(&pool, count, seed as u64).unwrap();
                *seen.entry(draw).or_default() += 1;
            }
            for outcome in seen.keys() {
                assert!(oracle.contains_key(outcome), "impossible outcome {outcome:?}");
            }
            for (outcome, prob) in oracle {
                let expected = prob * trials as f64;
                let sd = (trials as f64 * prob * (1.0 - prob)).sqrt();
                let got = *seen.get(&outcome).unwrap_or(&0) as f64;
                assert!((got - expected).abs() <= 5.0 * sd + 1.0, "{outcome:?}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn pgm_export_layout() {
        let (_, scores) = two_pixel_scores([0.5, 1.0]);
        let pgm = scores.to_pgm16(&[]);
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        let body = &pgm[header.len()..];
        assert_eq!(body, &[0x80, 0x00, 0xff, 0xff, 0x00, 0x00]);
    }
}
