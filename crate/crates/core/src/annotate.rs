//! Simulated annotators that pick the labeled-positive set from ground truth.
//!
//! Connectivity is 4-adjacency and breadth-first search enqueues neighbours in
//! N, S, W, E order.

use std::collections::VecDeque;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ClassGrid, Grid, PixelCoord};
use crate::labels::{LabelState, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationModel {
    /// Uniform sample over every positive pixel.
    Uniform,
    /// Breadth-first blobs, one connected component at a time.
    Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub positive_class: u16,
    /// Share of the positive class to label, in `(0, 1]`.
    pub fraction: f64,
    pub model: AnnotationModel,
    pub seed: u64,
    #[serde(default)]
    pub scope: Scope,
}

/// Maximal 4-connected regions of one class, ordered by their first pixel in
/// row-major order. Pixels within a component are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDecomposition {
    pub components: Vec<Vec<PixelCoord>>,
    /// Component index per pixel (`None` outside the class).
    pub membership: Grid<Option<usize>>,
}

impl ComponentDecomposition {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn population(&self) -> usize {
        self.components.iter().map(Vec::len).sum()
    }
}

pub fn connected_components(gt: &ClassGrid, positive_class: u16) -> Result<ComponentDecomposition> {
    let in_class = gt.map(|&c| c == positive_class);
    connected_components_of_mask(&in_class).and_then(|d| {
        if d.is_empty() {
            Err(Error::data(format!("class {positive_class} has no pixels")))
        } else {
            Ok(d)
        }
    })
}

/// Components of the `true` cells of a mask.
pub fn connected_components_of_mask(mask: &Grid<bool>) -> Result<ComponentDecomposition> {
    let mut membership: Grid<Option<usize>> = mask.map(|_| None);
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for (start, &inside) in mask.iter() {
        if !inside || membership[start].is_some() {
            continue;
        }
        let id = components.len();
        let mut pixels = vec![start];
        membership.set(start, Some(id));
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in mask.neighbors4(p) {
                if mask[q] && membership[q].is_none() {
                    membership.set(q, Some(id));
                    pixels.push(q);
                    queue.push_back(q);
                }
            }
        }
        pixels.sort_unstable();
        components.push(pixels);
    }
    Ok(ComponentDecomposition {
        components,
        membership,
    })
}

/// `round(fraction * population)` with halves rounded up. A zero quota is an error.
pub fn quota(fraction: f64, population: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("label fraction must be in (0, 1], got {fraction}")));
    }
    let q = (fraction * population as f64 + 0.5 + 1e-9).floor() as usize;
    if q == 0 {
        return Err(Error::config(format!(
            "fraction {fraction} of {population} positive pixels rounds to zero labels"
        )));
    }
    Ok(q.min(population))
}

pub fn annotate(gt: &ClassGrid, request: &AnnotationRequest) -> Result<LabelState> {
    match request.model {
        AnnotationModel::Uniform => annotate_uniform(gt, request),
        AnnotationModel::Blob => annotate_blob(gt, request),
    }
}

fn label_state(gt: &ClassGrid, request: &AnnotationRequest, picked: Vec<PixelCoord>) -> Result<LabelState> {
    let scope = request.scope.mask(gt.rows(), gt.cols(), Some(gt));
    LabelState::new(&scope, picked, Some(gt.clone()))
}

pub fn annotate_uniform(gt: &ClassGrid, request: &AnnotationRequest) -> Result<LabelState> {
    if request.model != AnnotationModel::Uniform {
        return Err(Error::config("annotate_uniform called with a non-uniform request"));
    }
    let picked = uniform_selection(gt, request)?;
    label_state(gt, request, picked)
}

fn uniform_selection(gt: &ClassGrid, request: &AnnotationRequest) -> Result<Vec<PixelCoord>> {
    let population: Vec<PixelCoord> = gt
        .iter()
        .filter(|(_, &c)| c == request.positive_class)
        .map(|(p, _)| p)
        .collect();
    if population.is_empty() {
        return Err(Error::data(format!("class {} has no pixels", request.positive_class)));
    }
    let amount = quota(request.fraction, population.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    Ok(index::sample(&mut rng, population.len(), amount)
        .into_iter()
        .map(|i| population[i])
        .collect())
}

pub fn annotate_blob(gt: &ClassGrid, request: &AnnotationRequest) -> Result<LabelState> {
    if request.model != AnnotationModel::Blob {
        return Err(Error::config("annotate_blob called with a non-blob request"));
    }
    let picked = blob_sequence(gt, request)?;
    label_state(gt, request, picked)
}

/// Labeled pixels in the order the blob annotator picks them.
pub fn blob_sequence(gt: &ClassGrid, request: &AnnotationRequest) -> Result<Vec<PixelCoord>> {
    let decomposition = connected_components(gt, request.positive_class)?;
    let amount = quota(request.fraction, decomposition.population())?;
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let mut started = vec![false; decomposition.len()];
    let mut taken = gt.map(|_| false);
    let mut sequence = Vec::with_capacity(amount);
    let mut queue = VecDeque::new();

    while sequence.len() < amount {
        // Uniform over pixels of components not yet entered.
        let candidates: usize = decomposition
            .components
            .iter()
            .zip(&started)
            .filter(|(_, &s)| !s)
            .map(|(c, _)| c.len())
            .sum();
        let mut pick = rng.random_range(0..candidates);
        let (id, start) = decomposition
            .components
            .iter()
            .enumerate()
            .filter(|(i, _)| !started[*i])
            .find_map(|(i, c)| {
                if pick < c.len() {
                    Some((i, c[pick]))
                } else {
                    pick -= c.len();
                    None
                }
            })
            .expect("candidate index within range");
        started[id] = true;

        taken.set(start, true);
        sequence.push(start);
        queue.clear();
        queue.push_back(start);
        'bfs: while let Some(p) = queue.pop_front() {
            for q in gt.neighbors4(p) {
                if sequence.len() == amount {
                    break 'bfs;
                }
                if gt[q] == request.positive_class && !taken[q] {
                    taken.set(q, true);
                    sequence.push(q);
                    queue.push_back(q);
                }
            }
        }
    }
    Ok(sequence)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> ClassGrid {
        let cols = rows[0].len();
        let ids = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| if b == b'#' { 1 } else { 2 }))
            .collect();
        ClassGrid::from_vec(rows.len(), cols, ids).unwrap()
    }

    fn request(model: AnnotationModel, fraction: f64, seed: u64) -> AnnotationRequest {
        AnnotationRequest {
            positive_class: 1,
            fraction,
            model,
            seed,
            scope: Scope::All,
        }
    }

    /// Independent flood fill used as an oracle.
    fn flood_oracle(gt: &ClassGrid, class: u16) -> Vec<Vec<PixelCoord>> {
        let mut seen = vec![false; gt.len()];
        let mut out = Vec::new();
        for start in gt.coords() {
            let i = gt.index_of(start);
            if gt[start] != class || seen[i] {
                continue;
            }
            let mut stack = vec![start];
            seen[i] = true;
            let mut comp = Vec::new();
            while let Some(p) = stack.pop() {
                comp.push(p);
                let (r, c) = (p.row as isize, p.col as isize);
                for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= gt.rows() as isize || nc >= gt.cols() as isize {
                        continue;
                    }
                    let q = PixelCoord::new(nr as usize, nc as usize);
                    let j = gt.index_of(q);
                    if gt[q] == class && !seen[j] {
                        seen[j] = true;
                        stack.push(q);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    #[test]
    fn single_pixel_component() {
        let gt = grid(&["...", ".#.", "..."]);
        let d = connected_components(&gt, 1).unwrap();
        assert_eq!(d.components, vec![vec![PixelCoord::new(1, 1)]]);
    }

    #[test]
    fn diagonal_touch_is_two_components() {
        let gt = grid(&["#.", ".#"]);
        let d = connected_components(&gt, 1).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.components, flood_oracle(&gt, 1));
    }

    #[test]
    fn full_block_is_one_component() {
        let gt = grid(&["###", "###", "###"]);
        let d = connected_components(&gt, 1).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.components[0].len(), 9);
    }

    #[test]
    fn empty_class_is_error() {
        let gt = grid(&["..", ".."]);
        assert!(connected_components(&gt, 1).is_err());
    }

    #[test]
    fn quota_rounding() {
        assert_eq!(quota(0.10, 100).unwrap(), 10);
        assert_eq!(quota(0.10, 105).unwrap(), 11);
        assert_eq!(quota(0.10, 104).unwrap(), 10);
        assert_eq!(quota(1.0, 7).unwrap(), 7);
        assert!(quota(0.01, 10).is_err());
        assert!(quota(0.0, 10).is_err());
        assert!(quota(1.5, 10).is_err());
    }

    #[test]
    fn uniform_full_fraction_labels_everything() {
        let gt = grid(&["#.#", "##.", "..#"]);
        let state = annotate_uniform(&gt, &request(AnnotationModel::Uniform, 1.0, 1)).unwrap();
        assert_eq!(state.positives().len(), 5);
        assert_eq!(state.unlabelled().len(), 4);
    }

    #[test]
    fn uniform_ten_percent_of_hundred() {
        let rows: Vec<String> = (0..10).map(|_| "#".repeat(10) + "..").collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let gt = grid(&refs);
        let state = annotate_uniform(&gt, &request(AnnotationModel::Uniform, 0.10, 9)).unwrap();
        assert_eq!(state.positives().len(), 10);
        assert!(state.positives().iter().all(|&p| gt[p] == 1));
    }

    #[test]
    fn uniform_single_draw_is_uniform() {
        // 4 positives, fraction 0.25 -> one label per draw.
        let gt = grid(&["#.#", "...", "#.#"]);
        let mut counts = [0usize; 4];
        let positives = [(0, 0), (0, 2), (2, 0), (2, 2)].map(|(r, c)| PixelCoord::new(r, c));
        for seed in 0..10_000 {
            let state = annotate_uniform(&gt, &request(AnnotationModel::Uniform, 0.25, seed)).unwrap();
            let p = *state.positives().iter().next().unwrap();
            counts[positives.iter().position(|&q| q == p).unwrap()] += 1;
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
        // chi-square(3) critical value at p = 0.01.
        assert!(chi2 < 11.345, "chi2 {chi2} counts {counts:?}");
        assert!(counts.iter().all(|&c| (2350..=2650).contains(&c)), "{counts:?}");
    }

    #[test]
    fn blob_within_one_component_is_connected() {
        // Components of 8 and 4 pixels; quota 3 fits inside either.
        let gt = grid(&["####....", "####....", "........", "....####"]);
        for seed in 0..20 {
            let req = request(AnnotationModel::Blob, 0.25, seed);
            let seq = blob_sequence(&gt, &req).unwrap();
            assert_eq!(seq.len(), 3);
            let mask = Grid::from_fn(gt.rows(), gt.cols(), |p| seq.contains(&p));
            let comps = connected_components_of_mask(&mask).unwrap();
            assert_eq!(comps.len(), 1, "seed {seed}: {seq:?}");
            assert!(comps.components[0].contains(&seq[0]));
        }
    }

    #[test]
    fn blob_full_quota_labels_whole_class() {
        let gt = grid(&["##..#", "#...#", "..#.."]);
        let state = annotate_blob(&gt, &request(AnnotationModel::Blob, 1.0, 5)).unwrap();
        assert_eq!(state.positives().len(), 6);
    }

    /// BFS order from `start` restricted to `class`, N/S/W/E, computed without
    /// the annotator.
    fn bfs_order(gt: &ClassGrid, start: PixelCoord) -> Vec<PixelCoord> {
        let mut order = vec![start];
        let mut head = 0;
        while head < order.len() {
            let p = order[head];
            head += 1;
            let cand = [
                (p.row.wrapping_sub(1), p.col),
                (p.row + 1, p.col),
                (p.row, p.col.wrapping_sub(1)),
                (p.row, p.col + 1),
            ];
            for (r, c) in cand {
                let q = PixelCoord::new(r, c);
                if gt.get(q) == Some(&1) && !order.contains(&q) {
                    order.push(q);
                }
            }
        }
        order
    }

    #[test]
    fn blob_two_components_six_and_eight_quota_ten() {
        // A: 2x3 block (6 pixels). B: 2x4 block (8 pixels).
        let gt = grid(&["###.....", "###.....", "........", "....####", "....####"]);
        let a = connected_components(&gt, 1).unwrap();
        assert_eq!(a.components.iter().map(Vec::len).collect::<Vec<_>>(), vec![6, 8]);
        let mut starts_seen = [false; 2];
        for seed in 0..40 {
            let req = request(AnnotationModel::Blob, 10.0 / 14.0, seed);
            let seq = blob_sequence(&gt, &req).unwrap();
            assert_eq!(seq.len(), 10);
            let first = a.membership[seq[0]].unwrap();
            starts_seen[first] = true;
            let full = &a.components[first];
            let size = full.len();
            // The first component is exhausted before anything else is labeled.
            let mut head: Vec<_> = seq[..size].to_vec();
            head.sort_unstable();
            assert_eq!(&head, full);
            // The remainder is a BFS prefix of the other component.
            let tail = &seq[size..];
            assert_eq!(tail.len(), 10 - size);
            let expected = bfs_order(&gt, tail[0]);
            assert_eq!(tail, &expected[..tail.len()]);
            let mask = Grid::from_fn(gt.rows(), gt.cols(), |p| tail.contains(&p));
            assert_eq!(connected_components_of_mask(&mask).unwrap().len(), 1);
        }
        assert_eq!(starts_seen, [true, true]);
    }

    #[test]
    fn blob_prefix_component_bound() {
        let gt = grid(&["#.#.#.##", "#.#...##", "..#.#...", "##..#..#"]);
        let comps = connected_components(&gt, 1).unwrap();
        for seed in 0..30 {
            let seq = blob_sequence(&gt, &request(AnnotationModel::Blob, 1.0, seed)).unwrap();
            for k in 1..=seq.len() {
                let prefix = &seq[..k];
                let mask = Grid::from_fn(gt.rows(), gt.cols(), |p| prefix.contains(&p));
                let labeled_comps = connected_components_of_mask(&mask).unwrap().len();
                let exhausted = comps
                    .components
                    .iter()
                    .filter(|c| c.iter().all(|p| prefix.contains(p)))
                    .count();
                assert!(labeled_comps <= exhausted + 1, "seed {seed} prefix {k}");
            }
        }
    }

    #[test]
    fn annotation_is_deterministic_and_disjoint() {
        let gt = grid(&["##.##", "#..##", "...#."]);
        for model in [AnnotationModel::Uniform, AnnotationModel::Blob] {
            let req = request(model, 0.5, 77);
            let a = annotate(&gt, &req).unwrap();
            let b = annotate(&gt, &req).unwrap();
            assert_eq!(a, b);
            assert!(a.positives().is_disjoint(a.unlabelled()));
            assert!(a.positives().iter().all(|&p| gt[p] == 1));
            assert_eq!(a.positives().len(), quota(0.5, 8).unwrap());
        }
    }
}
