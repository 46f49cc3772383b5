use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores are kept this far from 0 and 1 before taking logarithms.
pub const SCORE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    /// Cross-entropy: `-ln s` for positives, `-ln(1 - s)` for negatives.
    Logistic,
    /// Bounded: `1 - s` for positives, `s` for negatives.
    Sigmoid,
}

impl Surrogate {
    /// Loss of score `s` when the target is positive (`true`) or negative.
    pub fn loss(self, s: f64, positive: bool) -> f64 {
        match (self, positive) {
            (Self::Logistic, true) => -s.max(SCORE_CLAMP).ln(),
            (Self::Logistic, false) => -(1.0 - s).max(SCORE_CLAMP).ln(),
            (Self::Sigmoid, true) => 1.0 - s,
            (Self::Sigmoid, false) => s,
        }
    }

    /// Derivative of [`Self::loss`] with respect to the logit, where
    /// `s = sigmoid(logit)`.
    pub fn dlogit(self, s: f64, positive: bool) -> f64 {
        match (self, positive) {
            (Self::Logistic, true) if s > SCORE_CLAMP => -(1.0 - s),
            (Self::Logistic, false) if 1.0 - s > SCORE_CLAMP => s,
            (Self::Logistic, _) => 0.0,
            (Self::Sigmoid, true) => -s * (1.0 - s),
            (Self::Sigmoid, false) => s * (1.0 - s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    PnCrossEntropy,
    NnrePu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub surrogate: Surrogate,
    /// Class prior; required for the non-negative PU risk only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_p: Option<f64>,
    /// Step scale applied when the negative-risk correction goes below zero.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    1.0
}

impl LossSpec {
    pub fn pn() -> Self {
        Self {
            kind: LossKind::PnCrossEntropy,
            surrogate: Surrogate::Logistic,
            pi_p: None,
            gamma: 1.0,
        }
    }

    pub fn nnre_pu(pi_p: f64) -> Self {
        Self {
            kind: LossKind::NnrePu,
            surrogate: Surrogate::Sigmoid,
            pi_p: Some(pi_p),
            gamma: 1.0,
        }
    }

    pub fn with_surrogate(self, surrogate: Surrogate) -> Self {
        Self { surrogate, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.pi_p) {
            (LossKind::NnrePu, Some(pi)) if pi > 0.0 && pi < 1.0 => {}
            (LossKind::NnrePu, Some(pi)) => {
                return Err(Error::config(format!("class prior must lie in (0, 1), got {pi}")))
            }
            (LossKind::NnrePu, None) => return Err(Error::config("non-negative PU loss needs a class prior")),
            (LossKind::PnCrossEntropy, Some(_)) => {
                return Err(Error::config("class prior only applies to the non-negative PU loss"))
            }
            (LossKind::PnCrossEntropy, None) => {}
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    pub(crate) fn prior(&self) -> f64 {
        self.pi_p.unwrap_or(0.0)
    }
}

fn mean_loss(scores: &[f64], positive: bool, surrogate: Surrogate) -> f64 {
    scores.iter().map(|&s| surrogate.loss(s, positive)).sum::<f64>() / scores.len() as f64
}

fn weighted_loss(scores: &[f64], weights: &[f64], positive: bool, surrogate: Surrogate) -> f64 {
    let total: f64 = weights.iter().sum();
    scores
        .iter()
        .zip(weights)
        .map(|(&s, &w)| w * surrogate.loss(s, positive))
        .sum::<f64>()
        / total
}

pub(crate) fn check_weights(weights: &[f64], len: usize) -> Result<()> {
    if weights.len() != len {
        return Err(Error::data(format!("{} weights for {len} examples", weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::numeric("example weights must be non-negative with a positive sum"));
    }
    Ok(())
}

/// Mean binary cross-entropy; `labels[i]` is true for the positive class.
pub fn pn_loss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    pn_risk(scores, labels, Surrogate::Logistic)
}

/// Mean surrogate loss over labeled examples.
pub fn pn_risk(scores: &[f64], labels: &[bool], surrogate: Surrogate) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::data(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::data("empty batch"));
    }
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| surrogate.loss(s, y))
        .sum::<f64>()
        / scores.len() as f64)
}

/// Class-prior weighted risk `pi_p R_p+ + (1 - pi_p) R_n-` from separate
/// positive and negative samples.
pub fn prior_weighted_pn_risk(scores_p: &[f64], scores_n: &[f64], pi_p: f64, surrogate: Surrogate) -> Result<f64> {
    if scores_p.is_empty() || scores_n.is_empty() {
        return Err(Error::data("both classes need at least one example"));
    }
    Ok(pi_p * mean_loss(scores_p, true, surrogate) + (1.0 - pi_p) * mean_loss(scores_n, false, surrogate))
}

/// Components of the non-negative PU risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnreRisk {
    /// Positives scored as positive.
    pub r_p_plus: f64,
    /// Positives scored as negative.
    pub r_p_minus: f64,
    /// Unlabelled scored as negative.
    pub r_u_minus: f64,
    /// `r_u_minus - pi_p r_p_minus`; an estimate of the negative-class risk.
    pub correction: f64,
    /// `pi_p r_p_plus + max(0, correction)`.
    pub total: f64,
}

impl NnreRisk {
    /// The unclipped estimate `pi_p r_p_plus + correction`, which can go
    /// negative.
    pub fn unbiased(&self, pi_p: f64) -> f64 {
        pi_p * self.r_p_plus + self.correction
    }
}

pub fn nnre_pu_loss(scores_p: &[f64], scores_u: &[f64], spec: &LossSpec) -> Result<NnreRisk> {
    nnre_pu_loss_weighted(scores_p, scores_u, None, spec)
}

/// As [`nnre_pu_loss`], with optional relative weights on the unlabelled
/// examples.
pub fn nnre_pu_loss_weighted(
    scores_p: &[f64],
    scores_u: &[f64],
    weights_u: Option<&[f64]>,
    spec: &LossSpec,
) -> Result<NnreRisk> {
    if spec.kind != LossKind::NnrePu {
        return Err(Error::config("loss spec is not a non-negative PU loss"));
    }
    spec.validate()?;
    if scores_p.is_empty() {
        return Err(Error::data("empty positive batch"));
    }
    if scores_u.is_empty() {
        return Err(Error::data("empty unlabelled batch"));
    }
    let pi = spec.prior();
    let r_p_plus = mean_loss(scores_p, true, spec.surrogate);
    let r_p_minus = mean_loss(scores_p, false, spec.surrogate);
    let r_u_minus = match weights_u {
        Some(w) => {
            check_weights(w, scores_u.len())?;
            weighted_loss(scores_u, w, false, spec.surrogate)
        }
        None => mean_loss(scores_u, false, spec.surrogate),
    };
    let correction = r_u_minus - pi * r_p_minus;
    Ok(NnreRisk {
        r_p_plus,
        r_p_minus,
        r_u_minus,
        correction,
        total: pi * r_p_plus + correction.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pn_loss_examples() {
        assert!((pn_loss(&[0.5, 0.5], &[true, false]).unwrap() - 2f64.ln()).abs() < 1e-10);
        let expected = -0.5 * (0.9f64.ln() + 0.8f64.ln());
        assert!((pn_loss(&[0.9, 0.2], &[true, false]).unwrap() - expected).abs() < 1e-10);
        assert!((expected - 0.1643).abs() < 1e-4);
        assert!(pn_loss(&[1.0 - 1e-15, 1e-15], &[true, false]).unwrap() < 1e-12);
        let clamped = pn_loss(&[0.0], &[true]).unwrap();
        assert!((clamped + SCORE_CLAMP.ln()).abs() < 1e-10);
    }

    #[test]
    fn pn_loss_is_permutation_invariant() {
        let s = [0.1, 0.7, 0.4, 0.95];
        let y = [false, true, true, false];
        let a = pn_loss(&s, &y).unwrap();
        let b = pn_loss(&[0.95, 0.4, 0.1, 0.7], &[false, true, false, true]).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn nnre_hand_instance() {
        let spec = LossSpec::nnre_pu(0.5).with_surrogate(Surrogate::Logistic);
        let r = nnre_pu_loss(&[0.8], &[0.3], &spec).unwrap();
        assert!((r.r_p_plus + 0.8f64.ln()).abs() < 1e-10);
        assert!((r.r_p_minus + 0.2f64.ln()).abs() < 1e-10);
        assert!((r.r_u_minus + 0.7f64.ln()).abs() < 1e-10);
        assert!(r.correction < 0.0);
        assert!((r.total - 0.5 * -(0.8f64.ln())).abs() < 1e-10);
        assert!((r.total - 0.1116).abs() < 1e-4);
    }

    #[test]
    fn nnre_errors() {
        let spec = LossSpec::nnre_pu(0.3);
        assert!(nnre_pu_loss(&[], &[0.1], &spec).is_err());
        assert!(nnre_pu_loss(&[0.1], &[], &spec).is_err());
        assert!(nnre_pu_loss(&[0.1], &[0.1], &LossSpec::nnre_pu(1.0)).is_err());
        assert!(nnre_pu_loss(&[0.1], &[0.1], &LossSpec::pn()).is_err());
    }

    #[test]
    fn surrogate_derivatives_match_finite_differences() {
        let h = 1e-6;
        for surrogate in [Surrogate::Logistic, Surrogate::Sigmoid] {
            for positive in [true, false] {
                for t in [-3.0, -0.2, 0.0, 1.1, 4.0] {
                    let s = crate::model::sigmoid(t);
                    let numeric = (surrogate.loss(crate::model::sigmoid(t + h), positive)
                        - surrogate.loss(crate::model::sigmoid(t - h), positive))
                        / (2.0 * h);
                    let analytic = surrogate.dlogit(s, positive);
                    assert!((numeric - analytic).abs() < 1e-7, "{surrogate:?} {positive} {t}");
                }
            }
        }
    }
}
