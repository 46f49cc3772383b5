//! Non-local derivatives, weights and the total-variation objective over a
//! pixel graph. Only evaluation is provided; nothing here minimizes the
//! objective.

use rayon::prelude::*;

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::grid::{Grid, PixelCoord};

/// Per-pixel cluster likelihood.
pub type LabelFunction = Grid<f64>;

/// Non-negative dissimilarity between two pixels.
pub trait Divergence {
    fn divergence(&self, x: PixelCoord, y: PixelCoord) -> f64;
}

/// Euclidean distance between the spectra of two pixels.
#[derive(Debug, Clone, Copy)]
pub struct SpectralDistance<'a> {
    cube: &'a HsiCube,
}

impl<'a> SpectralDistance<'a> {
    pub fn new(cube: &'a HsiCube) -> Self {
        Self { cube }
    }
}

impl Divergence for SpectralDistance<'_> {
    fn divergence(&self, x: PixelCoord, y: PixelCoord) -> f64 {
        squared_distance(self.cube.spectrum(x), self.cube.spectrum(y)).sqrt()
    }
}

impl<F: Fn(PixelCoord, PixelCoord) -> f64> Divergence for F {
    fn divergence(&self, x: PixelCoord, y: PixelCoord) -> f64 {
        self(x, y)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn check_divergence(d: f64) -> Result<()> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::numeric(format!("divergence must be positive and finite, got {d}")));
    }
    Ok(())
}

/// `w = d^-2`.
pub fn nonlocal_weight(d: f64) -> Result<f64> {
    check_divergence(d)?;
    Ok(d.powi(-2))
}

/// `(u(y) - u(x)) / d(x, y)`.
pub fn nonlocal_derivative(u: &LabelFunction, x: PixelCoord, y: PixelCoord, d: &impl Divergence) -> Result<f64> {
    let dist = d.divergence(x, y);
    check_divergence(dist)?;
    Ok((u[y] - u[x]) / dist)
}

/// The same derivative written with the weight: `sqrt(w) * (u(y) - u(x))`.
pub fn weighted_derivative(u: &LabelFunction, x: PixelCoord, y: PixelCoord, weight: f64) -> f64 {
    weight.sqrt() * (u[y] - u[x])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlocalEdge {
    pub from: PixelCoord,
    pub to: PixelCoord,
    pub weight: f64,
}

/// Directed weighted edges over the pixels of a `rows x cols` region.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalGraph {
    rows: usize,
    cols: usize,
    /// Outgoing `(neighbour index, weight)` per row-major pixel index.
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl NonlocalGraph {
    /// Graph from explicit `(x, y, divergence)` triples.
    pub fn from_divergences(
        rows: usize,
        cols: usize,
        pairs: impl IntoIterator<Item = (PixelCoord, PixelCoord, f64)>,
    ) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); rows * cols];
        for (x, y, d) in pairs {
            if x.row >= rows || x.col >= cols || y.row >= rows || y.col >= cols {
                return Err(Error::data(format!("edge {x:?} -> {y:?} outside {rows}x{cols} region")));
            }
            neighbors[x.row * cols + x.col].push((y.row * cols + y.col, nonlocal_weight(d)?));
        }
        Ok(Self { rows, cols, neighbors })
    }

    /// Links every pixel to its `k` nearest pixels by spectral distance.
    /// Pairs at distance zero have no finite weight and are skipped.
    pub fn knn(cube: &HsiCube, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("neighbour count must be at least 1"));
        }
        let n = cube.pixel_count();
        let neighbors = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = cube.spectrum_at(i);
                let mut cands: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (squared_distance(xi, cube.spectrum_at(j)), j))
                    .filter(|&(d2, _)| d2 > 0.0)
                    .collect();
                let take = k.min(cands.len());
                if take < cands.len() {
                    cands.select_nth_unstable_by(take, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    cands.truncate(take);
                }
                cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cands.into_iter().map(|(d2, j)| (j, 1.0 / d2)).collect()
            })
            .collect();
        Ok(Self {
            rows: cube.rows(),
            cols: cube.cols(),
            neighbors,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn neighbors(&self, p: PixelCoord) -> &[(usize, f64)] {
        &self.neighbors[p.row * self.cols + p.col]
    }

    pub fn edges(&self) -> impl Iterator<Item = NonlocalEdge> + '_ {
        let cols = self.cols;
        let coord = move |i: usize| PixelCoord::new(i / cols, i % cols);
        self.neighbors.iter().enumerate().flat_map(move |(i, list)| {
            list.iter().map(move |&(j, weight)| NonlocalEdge {
                from: coord(i),
                to: coord(j),
                weight,
            })
        })
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

/// Data term `S(u)` of the objective.
pub trait Fidelity {
    fn evaluate(&self, u: &LabelFunction) -> Result<f64>;
}

/// `S(u) = sum_x u(x)^2 r(x)` with a caller-supplied residual `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFidelity {
    pub residual: Grid<f64>,
}

impl Fidelity for QuadraticFidelity {
    fn evaluate(&self, u: &LabelFunction) -> Result<f64> {
        if !self.residual.same_shape(u) {
            return Err(Error::data("fidelity residual and label function dimensions differ"));
        }
        Ok(u.as_slice().iter().zip(self.residual.as_slice()).map(|(v, r)| v * v * r).sum())
    }
}

/// `sum over edges |sqrt(w) (u(y) - u(x))| + lambda S(u)`.
pub fn nltv_objective(u: &LabelFunction, graph: &NonlocalGraph, fidelity: &impl Fidelity, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
    }
    if u.rows() != graph.rows || u.cols() != graph.cols {
        return Err(Error::data("label function and graph dimensions differ"));
    }
    if let Some(v) = u.as_slice().iter().find(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("label function holds non-finite value {v}")));
    }
    let tv: f64 = graph.edges().map(|e| weighted_derivative(u, e.from, e.to, e.weight).abs()).sum();
    Ok(tv + lambda * fidelity.evaluate(u)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(values: &[f64]) -> LabelFunction {
        Grid::from_vec(1, values.len(), values.to_vec()).unwrap()
    }

    fn p(c: usize) -> PixelCoord {
        PixelCoord::new(0, c)
    }

    fn zero_fidelity(n: usize) -> QuadraticFidelity {
        QuadraticFidelity {
            residual: Grid::from_vec(1, n, vec![0.0; n]).unwrap(),
        }
    }

    #[test]
    fn derivative_examples() {
        let d = |_: PixelCoord, _: PixelCoord| 2.0;
        assert_eq!(nonlocal_derivative(&line(&[3.0, 3.0]), p(0), p(1), &d).unwrap(), 0.0);
        assert_eq!(nonlocal_derivative(&line(&[1.0, 3.0]), p(0), p(1), &d).unwrap(), 1.0);
        let zero = |_: PixelCoord, _: PixelCoord| 0.0;
        assert!(nonlocal_derivative(&line(&[1.0, 3.0]), p(0), p(1), &zero).is_err());
        assert!(nonlocal_weight(0.0).is_err());
    }

    #[test]
    fn divergence_and_weight_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let u = line(&[rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
            let dist: f64 = rng.random_range(1e-3..10.0);
            let a = nonlocal_derivative(&u, p(0), p(1), &|_: PixelCoord, _: PixelCoord| dist).unwrap();
            let b = weighted_derivative(&u, p(0), p(1), nonlocal_weight(dist).unwrap());
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn antisymmetric_for_symmetric_divergence() {
        let cube = HsiCube::new(1, 2, 2, vec![0.1, 0.4, 0.9, 0.2]).unwrap();
        let d = SpectralDistance::new(&cube);
        let u = line(&[0.3, -1.2]);
        let a = nonlocal_derivative(&u, p(0), p(1), &d).unwrap();
        let b = nonlocal_derivative(&u, p(1), p(0), &d).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn objective_examples() {
        let graph = NonlocalGraph::from_divergences(1, 2, [(p(0), p(1), 0.5)]).unwrap();
        assert_eq!(graph.edges().next().unwrap().weight, 4.0);
        let obj = nltv_objective(&line(&[0.0, 1.0]), &graph, &zero_fidelity(2), 0.0).unwrap();
        assert!((obj - 2.0).abs() < 1e-10);
        let flat = nltv_objective(&line(&[0.7, 0.7]), &graph, &zero_fidelity(2), 0.0).unwrap();
        assert_eq!(flat, 0.0);
        assert!(nltv_objective(&line(&[0.0, 1.0]), &graph, &zero_fidelity(2), -1.0).is_err());
    }

    #[test]
    fn knn_graph_weights_are_inverse_squared_distances() {
        let cube = HsiCube::new(2, 2, 1, vec![0.0, 0.1, 0.5, 0.5]).unwrap();
        let graph = NonlocalGraph::knn(&cube, 2).unwrap();
        // Pixels (1,0) and (1,1) share a spectrum; their mutual edge is skipped.
        let n = graph.neighbors(PixelCoord::new(1, 0));
        assert_eq!(n.len(), 2);
        assert!(n.iter().all(|&(j, _)| j < 2));
        let first = graph.neighbors(PixelCoord::new(0, 0))[0];
        assert_eq!(first.0, 1);
        assert!((first.1 - 100.0).abs() < 1e-9);
        for e in graph.edges() {
            let d = SpectralDistance::new(&cube).divergence(e.from, e.to);
            assert!((e.weight - nonlocal_weight(d).unwrap()).abs() < 1e-9 * e.weight);
        }
    }

    proptest! {
        #[test]
        fn objective_is_linear_in_lambda(
            u in proptest::collection::vec(-3.0f64..3.0, 4),
            r in proptest::collection::vec(0.0f64..2.0, 4),
            d in proptest::collection::vec(0.1f64..4.0, 3),
            lambda in 0.0f64..5.0,
        ) {
            let u = line(&u);
            let fid = QuadraticFidelity { residual: line(&r) };
            let graph = NonlocalGraph::from_divergences(
                1, 4, [(p(0), p(1), d[0]), (p(1), p(3), d[1]), (p(2), p(0), d[2])],
            ).unwrap();
            let s = fid.evaluate(&u).unwrap();
            let o1 = nltv_objective(&u, &graph, &fid, lambda).unwrap();
            let o2 = nltv_objective(&u, &graph, &fid, 2.0 * lambda).unwrap();
            prop_assert!(o1 >= 0.0);
            prop_assert!((o2 - o1 - lambda * s).abs() <= 1e-10 * o2.abs().max(1.0));
        }
    }
}
