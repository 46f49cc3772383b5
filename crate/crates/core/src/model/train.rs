use rand::seq::{index, SliceRandom};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grad::{backward, batch_loss, batch_scores, ExampleTag, TrainingBatch};
use super::loss::{LossSpec, Surrogate};
use super::mlp::{Classifier, ClassifierConfig};
use crate::cluster::ClusterAssignment;
use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::grid::{Grid, PixelCoord};
use crate::labels::LabelState;
use crate::retrieval::{sample_negatives, score_unlabelled, RetrievalParams, RetrievalScores};

pub const MAX_EPOCHS: usize = 100;
pub const DEFAULT_UNLABELLED_SAMPLES: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStop {
    /// Stop once validation loss has not improved for `patience` epochs.
    #[default]
    ValLossRise,
    /// Stop once validation recall has stayed below its best for `patience`
    /// epochs.
    ValRecallDrop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub early_stop: EarlyStop,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: MAX_EPOCHS,
            batch_size: 64,
            learning_rate: 0.01,
            validation_fraction: 0.07,
            early_stop: EarlyStop::ValLossRise,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.epochs > MAX_EPOCHS {
            return Err(Error::config(format!("epochs must be in 1..={MAX_EPOCHS}, got {}", self.epochs)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        Ok(())
    }
}

/// Everything that shapes a training run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub patch_size: usize,
    pub classifier: ClassifierConfig,
    pub training: TrainConfig,
    /// Surrogate loss for either route; logistic when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<Surrogate>,
    /// Defuse step scale for the PU loss.
    pub gamma: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            patch_size: 3,
            classifier: ClassifierConfig::default(),
            training: TrainConfig::default(),
            surrogate: None,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Unlabelled validation examples count as negatives here.
    pub val_precision: Option<f64>,
    pub val_recall: Option<f64>,
    /// Batches that took the defuse step (PU loss only).
    pub defused_batches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub pixel: PixelCoord,
    pub tag: ExampleTag,
    pub validation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Classifier from the best validation epoch.
    pub classifier: Classifier,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub examples: Vec<ExampleRecord>,
}

/// Result of PN training over sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PnPuOutcome {
    pub training: TrainOutcome,
    pub retrieval: RetrievalScores,
}

fn require_normalized(cube: &HsiCube, labels: &LabelState) -> Result<()> {
    if !cube.is_normalized() {
        return Err(Error::data("training needs a normalized cube"));
    }
    if cube.rows() != labels.rows() || cube.cols() != labels.cols() {
        return Err(Error::data("cube and label state dimensions differ"));
    }
    if labels.positives().is_empty() {
        return Err(Error::data("no labeled positives"));
    }
    Ok(())
}

/// Shuffles and holds out `round(fraction * n)` items, keeping at least one
/// on each side when `n >= 2`. Both halves come back sorted.
fn holdout<T: Ord + Copy>(items: &[T], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<T>, Vec<T>) {
    let mut shuffled = items.to_vec();
    shuffled.shuffle(rng);
    let n = shuffled.len();
    let v = if n >= 2 {
        ((fraction * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let mut val = shuffled.split_off(n - v);
    shuffled.sort();
    val.sort();
    (shuffled, val)
}

fn build_batch(cube: &HsiCube, patch_size: usize, groups: &[(&[PixelCoord], ExampleTag)]) -> Result<TrainingBatch> {
    let mut batch = TrainingBatch::new(patch_size * patch_size * cube.channels());
    for (pixels, tag) in groups {
        for &p in *pixels {
            cube.write_patch(p, patch_size, &mut batch.inputs)?;
            batch.tags.push(*tag);
        }
    }
    Ok(batch)
}

fn subset(batch: &TrainingBatch, idx: &[usize]) -> TrainingBatch {
    let mut out = TrainingBatch::new(batch.input_dim);
    for &i in idx {
        out.push(batch.input(i), batch.tags[i]);
    }
    out
}

fn records(groups: &[(&[PixelCoord], ExampleTag, bool)]) -> Vec<ExampleRecord> {
    groups
        .iter()
        .flat_map(|(pixels, tag, validation)| {
            pixels.iter().map(move |&pixel| ExampleRecord {
                pixel,
                tag: *tag,
                validation: *validation,
            })
        })
        .collect()
}

struct ValidationStats {
    loss: Option<f64>,
    precision: Option<f64>,
    recall: Option<f64>,
}

fn validate_epoch(clf: &Classifier, val: &TrainingBatch, spec: &LossSpec) -> Result<ValidationStats> {
    if val.is_empty() {
        return Ok(ValidationStats {
            loss: None,
            precision: None,
            recall: None,
        });
    }
    let has_pos = val.tags.iter().any(|t| t.label());
    let has_other = val.tags.iter().any(|t| !t.label());
    let loss = if has_pos && has_other || spec.kind == super::loss::LossKind::PnCrossEntropy {
        Some(batch_loss(clf, val, spec)?.total)
    } else {
        None
    };
    let scores = batch_scores(clf, val)?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (s, t) in scores.iter().zip(&val.tags) {
        match (*s >= 0.5, t.label()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(ValidationStats {
        loss,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
    })
}

/// Minibatch gradient descent with early stopping on the validation split.
fn fit(
    mut clf: Classifier,
    train: &TrainingBatch,
    val: &TrainingBatch,
    spec: &LossSpec,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    progress: &mut dyn FnMut(&EpochMetrics),
) -> Result<(Classifier, Vec<EpochMetrics>, usize, bool)> {
    let pos: Vec<usize> = (0..train.len()).filter(|&i| train.tags[i].label()).collect();
    let rest: Vec<usize> = (0..train.len()).filter(|&i| !train.tags[i].label()).collect();
    let pu = spec.kind == super::loss::LossKind::NnrePu;
    if pu && (pos.is_empty() || rest.is_empty()) {
        return Err(Error::data("PU training needs both positive and unlabelled examples"));
    }

    let mut history = Vec::new();
    let mut best: Option<(f64, Classifier, usize)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut pos_order = pos.clone();
    let mut pos_cursor = pos_order.len();

    for epoch in 1..=config.epochs {
        // PU: one pass over the unlabelled examples, each batch paired with
        // the next block of positives from a reshuffled cycle. PN: one pass
        // over everything.
        let mut order = if pu { rest.clone() } else { (0..train.len()).collect::<Vec<_>>() };
        order.shuffle(rng);
        let pos_block = config.batch_size.min(pos.len());
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut defused = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut idx = chunk.to_vec();
            if pu {
                for _ in 0..pos_block {
                    if pos_cursor == pos_order.len() {
                        pos_order.shuffle(rng);
                        pos_cursor = 0;
                    }
                    idx.push(pos_order[pos_cursor]);
                    pos_cursor += 1;
                }
            }
            let batch = subset(train, &idx);
            let (loss, grad) = backward(&clf, &batch, spec)?;
            for (p, g) in clf.params_mut().iter_mut().zip(&grad) {
                *p -= config.learning_rate * g;
            }
            if clf.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::numeric(format!(
                    "parameters overflowed at epoch {epoch}; lower the learning rate"
                )));
            }
            loss_sum += loss.total;
            batches += 1;
            defused += loss.defused as usize;
        }

        let stats = validate_epoch(&clf, val, spec)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss: stats.loss,
            val_precision: stats.precision,
            val_recall: stats.recall,
            defused_batches: defused,
        };
        if !metrics.train_loss.is_finite() {
            return Err(Error::numeric(format!("training loss diverged at epoch {epoch}")));
        }
        progress(&metrics);

        // Higher is better for both keys; ties keep the earlier loss but the
        // later recall.
        let key = match config.early_stop {
            EarlyStop::ValLossRise => metrics.val_loss.map(|l| -l),
            EarlyStop::ValRecallDrop => metrics.val_recall,
        };
        history.push(metrics);
        let Some(key) = key else {
            best = Some((f64::NEG_INFINITY, clf.clone(), epoch));
            continue;
        };
        let improved = match &best {
            None => true,
            Some((b, _, _)) => match config.early_stop {
                EarlyStop::ValLossRise => key > *b,
                EarlyStop::ValRecallDrop => key >= *b,
            },
        };
        if improved {
            best = Some((key, clf.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (_, clf, best_epoch) = best.expect("at least one epoch ran");
    Ok((clf, history, best_epoch, stopped_early))
}

/// Non-negative PU training: positives against a uniform sample of the
/// unlabelled pool.
pub fn train_nnre_pu(
    cube: &HsiCube,
    labels: &LabelState,
    pi_p: f64,
    unlabelled_samples: usize,
    options: &TrainOptions,
    progress: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    // Cross-entropy unless overridden: the bounded sigmoid loss saturates
    // under plain gradient descent and stalls on overlapping classes.
    let mut spec = LossSpec::nnre_pu(pi_p).with_surrogate(options.surrogate.unwrap_or(Surrogate::Logistic));
    spec.gamma = options.gamma;
    spec.validate()?;
    options.training.validate()?;
    require_normalized(cube, labels)?;
    if unlabelled_samples == 0 || labels.unlabelled().is_empty() {
        return Err(Error::data("PU training needs unlabelled pixels"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.training.seed);
    let clf = Classifier::new(options.patch_size, cube.channels(), &options.classifier, rng.next_u64())?;
    let pool: Vec<PixelCoord> = labels.unlabelled().iter().copied().collect();
    let take = unlabelled_samples.min(pool.len());
    let mut sampled: Vec<PixelCoord> = index::sample(&mut rng, pool.len(), take).into_iter().map(|i| pool[i]).collect();
    sampled.sort();

    let positives: Vec<PixelCoord> = labels.positives().iter().copied().collect();
    let frac = options.training.validation_fraction;
    let (p_train, p_val) = holdout(&positives, frac, &mut rng);
    let (u_train, u_val) = holdout(&sampled, frac, &mut rng);

    let p = options.patch_size;
    let train = build_batch(cube, p, &[(&p_train, ExampleTag::Positive), (&u_train, ExampleTag::Unlabelled)])?;
    let val = build_batch(cube, p, &[(&p_val, ExampleTag::Positive), (&u_val, ExampleTag::Unlabelled)])?;
    let (classifier, history, best_epoch, stopped_early) =
        fit(clf, &train, &val, &spec, &options.training, &mut rng, progress)?;
    Ok(TrainOutcome {
        classifier,
        history,
        best_epoch,
        stopped_early,
        examples: records(&[
            (&p_train, ExampleTag::Positive, false),
            (&p_val, ExampleTag::Positive, true),
            (&u_train, ExampleTag::Unlabelled, false),
            (&u_val, ExampleTag::Unlabelled, true),
        ]),
    })
}

/// PN training on positives against negatives drawn from the retrieval
/// model's `1 - Pr+`. `negative_count` defaults to the number of positives.
pub fn train_pn_pu(
    cube: &HsiCube,
    labels: &LabelState,
    clusters: Option<&ClusterAssignment>,
    retrieval: &RetrievalParams,
    negative_count: Option<usize>,
    options: &TrainOptions,
    progress: &mut dyn FnMut(&EpochMetrics),
) -> Result<PnPuOutcome> {
    let mut spec = LossSpec::pn();
    if let Some(s) = options.surrogate {
        spec.surrogate = s;
    }
    options.training.validate()?;
    require_normalized(cube, labels)?;

    let mut rng = ChaCha8Rng::seed_from_u64(options.training.seed);
    let clf = Classifier::new(options.patch_size, cube.channels(), &options.classifier, rng.next_u64())?;
    let scores = score_unlabelled(labels, clusters, retrieval)?;
    let count = negative_count.unwrap_or(labels.positives().len());
    let mut negatives = sample_negatives(labels, &scores, count, rng.next_u64())?;
    negatives.sort();

    let positives: Vec<PixelCoord> = labels.positives().iter().copied().collect();
    let frac = options.training.validation_fraction;
    let (p_train, p_val) = holdout(&positives, frac, &mut rng);
    let (n_train, n_val) = holdout(&negatives, frac, &mut rng);

    let p = options.patch_size;
    let train = build_batch(cube, p, &[(&p_train, ExampleTag::Positive), (&n_train, ExampleTag::SampledNegative)])?;
    let val = build_batch(cube, p, &[(&p_val, ExampleTag::Positive), (&n_val, ExampleTag::SampledNegative)])?;
    let (classifier, history, best_epoch, stopped_early) =
        fit(clf, &train, &val, &spec, &options.training, &mut rng, progress)?;
    Ok(PnPuOutcome {
        training: TrainOutcome {
            classifier,
            history,
            best_epoch,
            stopped_early,
            examples: records(&[
                (&p_train, ExampleTag::Positive, false),
                (&p_val, ExampleTag::Positive, true),
                (&n_train, ExampleTag::SampledNegative, false),
                (&n_val, ExampleTag::SampledNegative, true),
            ]),
        },
        retrieval: scores,
    })
}

/// Per-pixel scores and the thresholded map over the whole scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub scores: Grid<f64>,
    pub positive: Grid<bool>,
}

/// Scores every pixel; a pixel is positive when its score is at least
/// `threshold`.
pub fn predict_map(classifier: &Classifier, cube: &HsiCube, threshold: f64) -> Result<PredictionMap> {
    if cube.channels() != classifier.channels() {
        return Err(Error::data(format!(
            "classifier expects {} channels, cube has {}",
            classifier.channels(),
            cube.channels()
        )));
    }
    let p = classifier.patch_size();
    let scores: Vec<f64> = (0..cube.pixel_count())
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            buf.clear();
            let coord = PixelCoord::new(i / cube.cols(), i % cube.cols());
            cube.write_patch(coord, p, buf)?;
            classifier.forward(buf)
        })
        .collect::<Result<_>>()?;
    let scores = Grid::from_vec(cube.rows(), cube.cols(), scores)?;
    let positive = scores.map(|&s| s >= threshold);
    Ok(PredictionMap { scores, positive })
}
