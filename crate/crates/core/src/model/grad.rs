use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{check_weights, LossKind, LossSpec};
use super::mlp::{sigmoid, Classifier};
use crate::error::{Error, Result};

/// Role of a training example. Positives carry label 1, the other two
/// label 0; unlabelled examples enter the PU risk through its negative part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleTag {
    Positive,
    Unlabelled,
    SampledNegative,
}

impl ExampleTag {
    pub fn label(self) -> bool {
        self == ExampleTag::Positive
    }
}

/// Flattened inputs with one tag and optional relative weight per example.
/// Weights are normalized within each group (positives and the rest).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingBatch {
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub tags: Vec<ExampleTag>,
    pub weights: Option<Vec<f64>>,
}

impl TrainingBatch {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            ..Self::default()
        }
    }

    pub fn push(&mut self, input: &[f64], tag: ExampleTag) {
        debug_assert_eq!(input.len(), self.input_dim);
        self.inputs.extend_from_slice(input);
        self.tags.push(tag);
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

/// Loss value of one batch and whether the defuse branch was taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    /// Negative-risk correction (PU loss only).
    pub correction: Option<f64>,
    pub defused: bool,
}

/// Examples per parallel work unit. Fixed so the reduction order does not
/// depend on the thread count.
const CHUNK: usize = 16;

/// Per-example coefficient on `d(logit)/d(params)` for the selected loss.
fn coefficients(batch: &TrainingBatch, scores: &[f64], spec: &LossSpec) -> Result<(BatchLoss, Vec<f64>)> {
    let n = batch.len();
    let weights = match &batch.weights {
        Some(w) => {
            check_weights(w, n)?;
            w.clone()
        }
        None => vec![1.0; n],
    };
    let sur = spec.surrogate;
    let mut coef = vec![0.0; n];
    match spec.kind {
        LossKind::PnCrossEntropy => {
            let total_w: f64 = weights.iter().sum();
            let mut loss = 0.0;
            for i in 0..n {
                let y = batch.tags[i].label();
                let w = weights[i] / total_w;
                loss += w * sur.loss(scores[i], y);
                coef[i] = w * sur.dlogit(scores[i], y);
            }
            Ok((
                BatchLoss {
                    total: loss,
                    correction: None,
                    defused: false,
                },
                coef,
            ))
        }
        LossKind::NnrePu => {
            spec.validate()?;
            let pi = spec.prior();
            let (mut wp, mut wu) = (0.0, 0.0);
            for (t, w) in batch.tags.iter().zip(&weights) {
                match t {
                    ExampleTag::Positive => wp += w,
                    _ => wu += w,
                }
            }
            if wp <= 0.0 {
                return Err(Error::data("batch has no positive examples"));
            }
            if wu <= 0.0 {
                return Err(Error::data("batch has no unlabelled examples"));
            }
            let (mut r_p_plus, mut r_p_minus, mut r_u_minus) = (0.0, 0.0, 0.0);
            // Gradients of pi R_p+ and of the correction, kept apart.
            let mut g_plus = vec![0.0; n];
            let mut g_corr = vec![0.0; n];
            for i in 0..n {
                let s = scores[i];
                if batch.tags[i] == ExampleTag::Positive {
                    let w = weights[i] / wp;
                    r_p_plus += w * sur.loss(s, true);
                    r_p_minus += w * sur.loss(s, false);
                    g_plus[i] = pi * w * sur.dlogit(s, true);
                    g_corr[i] = -pi * w * sur.dlogit(s, false);
                } else {
                    let w = weights[i] / wu;
                    r_u_minus += w * sur.loss(s, false);
                    g_corr[i] = w * sur.dlogit(s, false);
                }
            }
            let correction = r_u_minus - pi * r_p_minus;
            let defused = correction < 0.0;
            for i in 0..n {
                coef[i] = if defused {
                    -spec.gamma * g_corr[i]
                } else {
                    g_plus[i] + g_corr[i]
                };
            }
            Ok((
                BatchLoss {
                    total: pi * r_p_plus + correction.max(0.0),
                    correction: Some(correction),
                    defused,
                },
                coef,
            ))
        }
    }
}

/// Loss of `batch` and its exact gradient with respect to the classifier
/// parameters.
///
/// For the PU loss, a negative correction switches to the defuse step: the
/// gradient becomes `-gamma * grad(correction)`, which pushes the correction
/// back up.
pub fn backward(classifier: &Classifier, batch: &TrainingBatch, spec: &LossSpec) -> Result<(BatchLoss, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    if batch.input_dim != classifier.input_dim() || batch.inputs.len() != batch.len() * batch.input_dim {
        return Err(Error::data(format!(
            "batch inputs have width {}, classifier expects {}",
            batch.input_dim,
            classifier.input_dim()
        )));
    }
    let caches: Vec<(f64, Vec<Vec<f64>>)> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let mut acts = Vec::new();
            let logit = classifier.forward_cached(batch.input(i), &mut acts);
            (sigmoid(logit), acts)
        })
        .collect();
    let scores: Vec<f64> = caches.iter().map(|c| c.0).collect();
    let (loss, coef) = coefficients(batch, &scores, spec)?;

    let np = classifier.params().len();
    let partials: Vec<Vec<f64>> = caches
        .par_chunks(CHUNK)
        .zip(coef.par_chunks(CHUNK))
        .map(|(cache, coef)| {
            let mut g = vec![0.0; np];
            for ((_, acts), &c) in cache.iter().zip(coef) {
                if c != 0.0 {
                    classifier.backprop(acts, c, &mut g);
                }
            }
            g
        })
        .collect();
    let mut grad = vec![0.0; np];
    for part in &partials {
        for (g, p) in grad.iter_mut().zip(part) {
            *g += p;
        }
    }
    for (l, (off, fan_in, fan_out)) in classifier.layers().into_iter().enumerate() {
        if grad[off..off + fan_in * fan_out + fan_out].iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient in layer {l}")));
        }
    }
    if !loss.total.is_finite() {
        return Err(Error::numeric(format!("non-finite loss {}", loss.total)));
    }
    Ok((loss, grad))
}

/// Loss of `batch` without the gradient.
pub fn batch_loss(classifier: &Classifier, batch: &TrainingBatch, spec: &LossSpec) -> Result<BatchLoss> {
    let scores = batch_scores(classifier, batch)?;
    Ok(coefficients(batch, &scores, spec)?.0)
}

pub fn batch_scores(classifier: &Classifier, batch: &TrainingBatch) -> Result<Vec<f64>> {
    (0..batch.len())
        .into_par_iter()
        .map(|i| classifier.forward(batch.input(i)))
        .collect()
}
