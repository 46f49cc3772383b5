//! Patch classifier, PN and non-negative PU losses, and the two training
//! routes.

pub mod checkpoint;
mod grad;
mod loss;
mod mlp;
mod train;

pub use grad::{backward, batch_loss, batch_scores, BatchLoss, ExampleTag, TrainingBatch};
pub use loss::{
    nnre_pu_loss, nnre_pu_loss_weighted, pn_loss, pn_risk, prior_weighted_pn_risk, LossKind, LossSpec, NnreRisk,
    Surrogate, SCORE_CLAMP,
};
pub use mlp::{sigmoid, Activation, Classifier, ClassifierConfig};
pub use train::{
    predict_map, train_nnre_pu, train_pn_pu, EarlyStop, EpochMetrics, ExampleRecord, PnPuOutcome, PredictionMap,
    TrainConfig, TrainOptions, TrainOutcome, DEFAULT_UNLABELLED_SAMPLES, MAX_EPOCHS,
};
