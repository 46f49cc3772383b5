//! Labeled-positive / unlabelled partition of a scene.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ClassGrid, Grid, PixelCoord};

/// Which pixels take part in labeling and training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Every pixel of the scene.
    All,
    /// Pixels with a non-zero ground-truth id (falls back to all pixels when
    /// there is no ground truth).
    #[default]
    Annotated,
}

impl Scope {
    pub fn mask(self, rows: usize, cols: usize, gt: Option<&ClassGrid>) -> Grid<bool> {
        match (self, gt) {
            (Scope::Annotated, Some(gt)) => gt.map(|&c| c != 0),
            _ => Grid::from_fn(rows, cols, |_| true),
        }
    }
}

/// `positives` is the labeled set, `unlabelled` the rest of the in-scope
/// pixels. The two sets are disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelState {
    rows: usize,
    cols: usize,
    positives: BTreeSet<PixelCoord>,
    unlabelled: BTreeSet<PixelCoord>,
    ground_truth: Option<ClassGrid>,
}

/// On-disk form: scene dimensions plus the sorted positive coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub rows: usize,
    pub cols: usize,
    pub positives: Vec<PixelCoord>,
}

impl LabelState {
    /// Partitions the pixels selected by `scope` into `positives` and the
    /// unlabelled remainder.
    pub fn new(
        scope: &Grid<bool>,
        positives: impl IntoIterator<Item = PixelCoord>,
        ground_truth: Option<ClassGrid>,
    ) -> Result<Self> {
        let positives: BTreeSet<PixelCoord> = positives.into_iter().collect();
        for &p in &positives {
            match scope.get(p) {
                None => {
                    return Err(Error::data(format!(
                        "labeled pixel [{}, {}] outside {}x{} scene",
                        p.row,
                        p.col,
                        scope.rows(),
                        scope.cols()
                    )))
                }
                Some(false) => {
                    return Err(Error::data(format!("labeled pixel [{}, {}] is out of scope", p.row, p.col)))
                }
                Some(true) => {}
            }
        }
        if let Some(gt) = &ground_truth {
            if !gt.same_shape(scope) {
                return Err(Error::data("ground truth and label scope dimensions differ"));
            }
        }
        let unlabelled = scope
            .iter()
            .filter(|(p, &in_scope)| in_scope && !positives.contains(p))
            .map(|(p, _)| p)
            .collect();
        Ok(Self {
            rows: scope.rows(),
            cols: scope.cols(),
            positives,
            unlabelled,
            ground_truth,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn positives(&self) -> &BTreeSet<PixelCoord> {
        &self.positives
    }

    pub fn unlabelled(&self) -> &BTreeSet<PixelCoord> {
        &self.unlabelled
    }

    pub fn ground_truth(&self) -> Option<&ClassGrid> {
        self.ground_truth.as_ref()
    }

    pub fn is_positive(&self, p: PixelCoord) -> bool {
        self.positives.contains(&p)
    }

    /// Copy with `pixels` removed from the unlabelled pool (e.g. a held-out
    /// validation split).
    pub fn without_unlabelled(&self, pixels: &BTreeSet<PixelCoord>) -> Self {
        Self {
            unlabelled: self.unlabelled.difference(pixels).copied().collect(),
            ..self.clone()
        }
    }

    pub fn to_file(&self) -> LabelFile {
        LabelFile {
            rows: self.rows,
            cols: self.cols,
            positives: self.positives.iter().copied().collect(),
        }
    }

    /// Canonical JSON; identical label sets give identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("label file serializes")
    }

    pub fn from_file(file: &LabelFile, scope: &Grid<bool>, ground_truth: Option<ClassGrid>) -> Result<Self> {
        if file.rows != scope.rows() || file.cols != scope.cols() {
            return Err(Error::data(format!(
                "label file is for a {}x{} scene, scene is {}x{}",
                file.rows,
                file.cols,
                scope.rows(),
                scope.cols()
            )));
        }
        Self::new(scope, file.positives.iter().copied(), ground_truth)
    }
}
