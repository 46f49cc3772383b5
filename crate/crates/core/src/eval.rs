//! ROC analysis, cost-based operating points, precision/recall and confusion
//! maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::raster::{encode_pgm8, encode_png, PngPixels};

/// JSON has no infinity; an infinite threshold is written as `null`.
pub mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.is_finite() {
            s.serialize_f64(*t)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive. Infinite at `(0, 0)`.
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From `(0, 0)` to `(1, 1)`, one vertex per distinct score.
    pub points: Vec<RocPoint>,
    pub positives: usize,
    pub negatives: usize,
}

/// ROC by sweeping the threshold over distinct scores, and its trapezoidal
/// area. Tied scores move together, so ties contribute half credit.
pub fn roc_and_auc(scores: &[f64], truth: &[bool]) -> Result<(RocCurve, f64)> {
    if scores.len() != truth.len() {
        return Err(Error::data(format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::numeric(format!("score {s} is not a number")));
    }
    let pos = truth.iter().filter(|&&t| t).count() as u64;
    let neg = truth.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::data("ROC needs both classes in the ground truth"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    // Twice the area, in units of 1 / (pos * neg).
    let mut area2: u128 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }
    let auc = area2 as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok((
        RocCurve {
            points,
            positives: pos as usize,
            negatives: neg as usize,
        },
        auc,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    /// `(1 - pi_p) alpha fpr + pi_p beta (1 - tpr)`.
    pub cost: f64,
    pub alpha: f64,
    pub beta: f64,
    pub pi_p: f64,
}

pub fn operating_cost(fpr: f64, tpr: f64, pi_p: f64, alpha: f64, beta: f64) -> f64 {
    (1.0 - pi_p) * alpha * fpr + pi_p * beta * (1.0 - tpr)
}

/// ROC vertex of least expected misclassification cost; ties go to the
/// higher true-positive rate.
pub fn select_operating_point(roc: &RocCurve, pi_p: f64, alpha: f64, beta: f64) -> Result<OperatingPoint> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::config(format!("costs must be positive, got alpha={alpha} beta={beta}")));
    }
    if !(0.0..=1.0).contains(&pi_p) {
        return Err(Error::config(format!("class prior must lie in [0, 1], got {pi_p}")));
    }
    let mut best: Option<OperatingPoint> = None;
    for p in &roc.points {
        let cost = operating_cost(p.fpr, p.tpr, pi_p, alpha, beta);
        let better = match &best {
            None => true,
            Some(b) => cost < b.cost || (cost == b.cost && p.tpr > b.tpr),
        };
        if better {
            best = Some(OperatingPoint {
                threshold: p.threshold,
                fpr: p.fpr,
                tpr: p.tpr,
                cost,
                alpha,
                beta,
                pi_p,
            });
        }
    }
    best.ok_or_else(|| Error::data("empty ROC curve"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; `None` when either is
    /// undefined or both are zero.
    pub fn f_score(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
    }

    fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::TruePositive => self.tp += 1,
            Outcome::FalsePositive => self.fp += 1,
            Outcome::TrueNegative => self.tn += 1,
            Outcome::FalseNegative => self.fn_ += 1,
            Outcome::Ignored => {}
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Threshold metrics. Undefined ratios are `None` and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_score: Option<f64>,
    pub auc: Option<f64>,
    pub counts: ConfusionCounts,
    pub evaluated_pixels: usize,
}

/// Per-pixel outcome; the discriminant is the palette index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Outcome {
    Ignored = 0,
    TruePositive = 1,
    FalsePositive = 2,
    TrueNegative = 3,
    FalseNegative = 4,
}

/// RGB per palette index: ignored black, TP green, FP red, TN light grey,
/// FN blue.
pub const CONFUSION_PALETTE: [[u8; 3]; 5] = [[0, 0, 0], [0, 170, 0], [220, 30, 30], [200, 200, 200], [30, 90, 255]];

fn check_congruent<A, B, C>(a: &Grid<A>, b: &Grid<B>, c: &Grid<C>) -> Result<()> {
    if !a.same_shape(b) || !a.same_shape(c) {
        return Err(Error::data("prediction, truth and mask dimensions differ"));
    }
    Ok(())
}

pub fn confusion_map(predicted: &Grid<bool>, truth: &Grid<bool>, mask: &Grid<bool>) -> Result<(Grid<Outcome>, ConfusionCounts)> {
    check_congruent(predicted, truth, mask)?;
    let mut counts = ConfusionCounts::default();
    let data = (0..predicted.len())
        .map(|i| {
            let outcome = match (mask.as_slice()[i], predicted.as_slice()[i], truth.as_slice()[i]) {
                (false, _, _) => Outcome::Ignored,
                (true, true, true) => Outcome::TruePositive,
                (true, true, false) => Outcome::FalsePositive,
                (true, false, false) => Outcome::TrueNegative,
                (true, false, true) => Outcome::FalseNegative,
            };
            counts.add(outcome);
            outcome
        })
        .collect();
    Ok((Grid::from_vec(predicted.rows(), predicted.cols(), data)?, counts))
}

/// Precision, recall and F over the pixels selected by `mask`.
pub fn prf(predicted: &Grid<bool>, truth: &Grid<bool>, mask: &Grid<bool>) -> Result<EvalReport> {
    let (_, counts) = confusion_map(predicted, truth, mask)?;
    Ok(EvalReport {
        precision: counts.precision(),
        recall: counts.recall(),
        f_score: counts.f_score(),
        auc: None,
        counts,
        evaluated_pixels: counts.total(),
    })
}

pub fn confusion_png(map: &Grid<Outcome>, text: &[(&str, &str)]) -> Result<Vec<u8>> {
    let indices: Vec<u8> = map.as_slice().iter().map(|&o| o as u8).collect();
    let palette: Vec<u8> = CONFUSION_PALETTE.iter().flatten().copied().collect();
    encode_png(map.cols(), map.rows(), PngPixels::Indexed(&indices, &palette), text)
}

/// 8-bit PGM holding palette indices.
pub fn confusion_pgm(map: &Grid<Outcome>, text: &[(&str, &str)]) -> Vec<u8> {
    let indices: Vec<u8> = map.as_slice().iter().map(|&o| o as u8).collect();
    encode_pgm8(map.cols(), map.rows(), &indices, text)
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}
