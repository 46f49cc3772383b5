//! End-to-end experiments: scene, labels, training, evaluation and the files
//! a run leaves behind.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotate::{annotate, AnnotationModel, AnnotationRequest};
use crate::cluster::{kmeans, ClusterAssignment, ClusterCache, KMeansParams};
use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::eval::{
    confusion_map, confusion_pgm, confusion_png, roc_and_auc, select_operating_point, EvalReport, OperatingPoint,
    Outcome,
};
use crate::grid::{ClassGrid, Grid, PixelCoord};
use crate::labels::{LabelState, Scope};
use crate::model::{
    checkpoint, predict_map, train_nnre_pu, train_pn_pu, EpochMetrics, ExampleRecord, ExampleTag, PredictionMap,
    TrainOptions, TrainOutcome, DEFAULT_UNLABELLED_SAMPLES,
};
use crate::raster::{encode_pgm16, encode_png, quantize16, quantize8, PngPixels};
use crate::retrieval::{RetrievalParams, RetrievalScores};
use crate::scene_io::{load_scene, Scene};
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    /// Scene header file.
    File { path: PathBuf },
    Synthetic { spec: SyntheticSpec, seed: u64 },
    /// The built-in 64x64x8 three-class scene.
    Demo {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_noise")]
        noise_sigma: f64,
        #[serde(default)]
        variability: f64,
    },
}

fn default_noise() -> f64 {
    0.05
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Demo {
            seed: 0,
            noise_sigma: default_noise(),
            variability: 0.0,
        }
    }
}

impl SceneSource {
    pub fn load(&self) -> Result<Scene> {
        match self {
            SceneSource::File { path } => load_scene(path),
            SceneSource::Synthetic { spec, seed } => spec.generate(*seed),
            SceneSource::Demo {
                seed,
                noise_sigma,
                variability,
            } => SyntheticSpec::three_class_demo(*noise_sigma, *variability).generate(*seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelSource {
    /// Labels drawn from the ground truth of the positive class.
    Simulated {
        model: AnnotationModel,
        #[serde(default = "default_fraction")]
        fraction: f64,
    },
    /// Explicit positive pixels, e.g. painted by a user.
    Provided { positives: Vec<PixelCoord> },
}

fn default_fraction() -> f64 {
    0.1
}

impl Default for LabelSource {
    fn default() -> Self {
        LabelSource::Simulated {
            model: AnnotationModel::Uniform,
            fraction: default_fraction(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    NnrePu,
    PnPu,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::NnrePu => "nnre_pu",
            Method::PnPu => "pn_pu",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nnre_pu" | "nnre-pu" => Ok(Method::NnrePu),
            "pn_pu" | "pn-pu" => Ok(Method::PnPu),
            other => Err(Error::config(format!("unknown method '{other}' (nnre_pu, pn_pu)"))),
        }
    }
}

/// Class prior handed to the PU loss and the operating-point rule. `True`
/// reads it off the ground truth. Serialized as `"true"` or a number.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "PriorRepr", into = "PriorRepr")]
pub enum PriorSetting {
    #[default]
    True,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PriorRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<PriorRepr> for PriorSetting {
    type Error = String;

    fn try_from(r: PriorRepr) -> std::result::Result<Self, String> {
        match r {
            PriorRepr::Number(v) => Ok(PriorSetting::Value(v)),
            PriorRepr::Text(s) if s == "true" => Ok(PriorSetting::True),
            PriorRepr::Text(s) => s
                .parse()
                .map(PriorSetting::Value)
                .map_err(|_| format!("prior must be \"true\" or a number, got '{s}'")),
        }
    }
}

impl From<PriorSetting> for PriorRepr {
    fn from(p: PriorSetting) -> Self {
        match p {
            PriorSetting::True => PriorRepr::Text("true".into()),
            PriorSetting::Value(v) => PriorRepr::Number(v),
        }
    }
}

impl std::str::FromStr for PriorSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PriorSetting::try_from(PriorRepr::Text(s.to_string())).map_err(Error::config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSettings {
    /// Cluster count; the number of ground-truth classes when unset, or
    /// [`FALLBACK_CLUSTERS`] for scenes without ground truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub max_iters: usize,
}

pub const FALLBACK_CLUSTERS: usize = 16;

impl Default for ClusterSettings {
    fn default() -> Self {
        Self { k: None, max_iters: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Share of the annotated unlabelled pixels held out (with their ground
    /// truth) to pick the operating point. These pixels are not trained on.
    pub split_fraction: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            split_fraction: 0.07,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// One experiment. Every random choice derives from `seed`; the seed inside
/// `train.training` is overwritten with the derived training seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub positive_class: u16,
    pub scope: Scope,
    pub labels: LabelSource,
    pub method: Method,
    pub retrieval: RetrievalParams,
    pub clusters: ClusterSettings,
    pub pi_p: PriorSetting,
    pub unlabelled_samples: usize,
    /// PN-PU negative count; defaults to the number of positives.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negatives: Option<usize>,
    pub train: TrainOptions,
    pub eval: EvalSettings,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_cache: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSource::default(),
            positive_class: 2,
            scope: Scope::Annotated,
            labels: LabelSource::default(),
            method: Method::NnrePu,
            retrieval: RetrievalParams::preset("indian-pines-like").expect("built-in preset"),
            clusters: ClusterSettings::default(),
            pi_p: PriorSetting::True,
            unlabelled_samples: DEFAULT_UNLABELLED_SAMPLES,
            negatives: None,
            train: TrainOptions::default(),
            eval: EvalSettings::default(),
            seed: 0,
            output_dir: None,
            cluster_cache: None,
        }
    }
}

const STREAM_ANNOTATE: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_CLUSTER: u64 = 4;

/// Independent sub-seed for one consumer of the master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("experiment config", e))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Copy with derived seeds filled in.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.training.seed = derive_seed(self.seed, STREAM_TRAIN);
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.train.training.validate()?;
        if self.train.patch_size == 0 || self.train.patch_size % 2 == 0 {
            return Err(Error::config(format!("patch size must be odd, got {}", self.train.patch_size)));
        }
        if self.unlabelled_samples == 0 {
            return Err(Error::config("unlabelled sample count must be positive"));
        }
        if self.clusters.k == Some(0) {
            return Err(Error::config("cluster count must be positive"));
        }
        if let PriorSetting::Value(v) = self.pi_p {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("class prior must lie in (0, 1), got {v}")));
            }
        }
        let e = &self.eval;
        if !(e.split_fraction > 0.0 && e.split_fraction < 1.0) {
            return Err(Error::config(format!("split fraction must lie in (0, 1), got {}", e.split_fraction)));
        }
        if !(e.alpha > 0.0 && e.beta > 0.0) {
            return Err(Error::config("misclassification costs must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the resolved config, leaving out the
    /// output and cache locations.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self.resolved()).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
            map.remove("cluster_cache");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

/// Scene and labels ready for training, shared by every run over the same
/// data.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scene: Scene,
    pub cube: HsiCube,
    pub scope: Grid<bool>,
    /// All positives and unlabelled pixels, split included.
    pub labels: LabelState,
    /// `gt == positive_class`, when ground truth exists.
    pub truth: Option<Grid<bool>>,
    pub true_pi_p: Option<f64>,
    /// Held-out unlabelled pixels with ground truth; empty without it.
    pub split: BTreeSet<PixelCoord>,
}

impl Prepared {
    /// Labels used for training: the split is removed from the unlabelled
    /// pool.
    pub fn training_labels(&self) -> LabelState {
        self.labels.without_unlabelled(&self.split)
    }

    /// Annotated pixels outside the labeled positives and the split.
    pub fn universe(&self) -> Option<Grid<bool>> {
        let gt = self.scene.ground_truth.as_ref()?;
        Some(Grid::from_fn(gt.rows(), gt.cols(), |p| {
            gt[p] != 0 && self.scope[p] && !self.labels.is_positive(p) && !self.split.contains(&p)
        }))
    }
}

fn class_prior(gt: &ClassGrid, scope: &Grid<bool>, class: u16) -> Option<f64> {
    let in_scope = scope.as_slice().iter().filter(|&&s| s).count();
    let hits = gt
        .as_slice()
        .iter()
        .zip(scope.as_slice())
        .filter(|&(&c, &s)| s && c == class)
        .count();
    (in_scope > 0).then(|| hits as f64 / in_scope as f64)
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let scene = config.scene.load()?;
    prepare_scene(config, scene)
}

/// As [`prepare`] with an already loaded scene.
pub fn prepare_scene(config: &ExperimentConfig, scene: Scene) -> Result<Prepared> {
    config.validate()?;
    let cube = scene.cube.normalize()?;
    let gt = scene.ground_truth.as_ref();
    let (rows, cols) = (cube.rows(), cube.cols());
    let scope = config.scope.mask(rows, cols, gt);
    let labels = match &config.labels {
        LabelSource::Simulated { model, fraction } => {
            let gt = gt.ok_or_else(|| Error::data("simulated labels need ground truth"))?;
            annotate(
                gt,
                &AnnotationRequest {
                    positive_class: config.positive_class,
                    fraction: *fraction,
                    model: *model,
                    seed: derive_seed(config.seed, STREAM_ANNOTATE),
                    scope: config.scope,
                },
            )?
        }
        LabelSource::Provided { positives } => LabelState::new(&scope, positives.iter().copied(), gt.cloned())?,
    };
    if labels.positives().is_empty() {
        return Err(Error::data("no labeled positives"));
    }
    let truth = gt.map(|g| g.map(|&c| c == config.positive_class));
    let true_pi_p = gt.and_then(|g| class_prior(g, &scope, config.positive_class));

    let mut split = BTreeSet::new();
    if let Some(gt) = gt {
        let pool: Vec<PixelCoord> = labels.unlabelled().iter().copied().filter(|&p| gt[p] != 0).collect();
        let n = ((pool.len() as f64) * config.eval.split_fraction).round() as usize;
        let n = n.min(pool.len().saturating_sub(1));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SPLIT));
        split = index::sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    }
    Ok(Prepared {
        scene,
        cube,
        scope,
        labels,
        truth,
        true_pi_p,
        split,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub best_val_loss: Option<f64>,
    pub positives_train: usize,
    pub positives_val: usize,
    /// Unlabelled samples (PU) or sampled negatives (PN).
    pub others_train: usize,
    pub others_val: usize,
}

impl TrainingSummary {
    fn new(outcome: &TrainOutcome) -> Self {
        let count = |pos: bool, val: bool| {
            outcome
                .examples
                .iter()
                .filter(|e| (e.tag == ExampleTag::Positive) == pos && e.validation == val)
                .count()
        };
        Self {
            epochs_run: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            stopped_early: outcome.stopped_early,
            best_val_loss: outcome.history.get(outcome.best_epoch.wrapping_sub(1)).and_then(|m| m.val_loss),
            positives_train: count(true, false),
            positives_val: count(true, true),
            others_train: count(false, false),
            others_val: count(false, true),
        }
    }
}

pub const UNIVERSE_DESCRIPTION: &str =
    "annotated in-scope pixels, excluding labeled positives and the operating-point split";

/// Metric summary of a run. Contains nothing that depends on timing or on
/// where the output goes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub method: Method,
    pub pi_p: f64,
    pub true_pi_p: Option<f64>,
    pub threshold: f64,
    pub operating_point: Option<OperatingPoint>,
    pub split_size: usize,
    pub metrics: Option<EvalReport>,
    pub universe: String,
    pub labeled_positives: usize,
    pub training: TrainingSummary,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything a finished run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub report: RunReport,
    pub training: TrainOutcome,
    pub prediction: PredictionMap,
    pub retrieval: Option<RetrievalScores>,
    pub confusion: Option<Grid<Outcome>>,
    pub training_labels: LabelState,
}

fn resolve_prior(config: &ExperimentConfig, prepared: &Prepared) -> Result<f64> {
    match config.pi_p {
        PriorSetting::Value(v) => Ok(v),
        PriorSetting::True => match prepared.true_pi_p {
            Some(v) if v > 0.0 && v < 1.0 => Ok(v),
            Some(v) => Err(Error::data(format!("ground-truth class prior {v} is degenerate"))),
            None => Err(Error::config("pi_p \"true\" needs ground truth; give a number")),
        },
    }
}

fn clusters_for(config: &ExperimentConfig, scene: &Scene, cube: &HsiCube) -> Result<ClusterAssignment> {
    let k = config.clusters.k.unwrap_or_else(|| {
        scene.ground_truth.as_ref().map_or(FALLBACK_CLUSTERS, |gt| gt.class_count().max(2))
    });
    let mut params = KMeansParams::new(k, derive_seed(config.seed, STREAM_CLUSTER));
    params.max_iters = config.clusters.max_iters;
    match &config.cluster_cache {
        Some(dir) => Ok(ClusterCache::new(dir).get_or_compute(cube, &params)?.0),
        None => kmeans(cube, &params),
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let prepared = prepare(config)?;
    execute(config, &prepared, &mut |_| {})
}

/// Trains and evaluates one configuration on prepared data. `progress` sees
/// every finished epoch.
pub fn execute(
    config: &ExperimentConfig,
    prepared: &Prepared,
    progress: &mut dyn FnMut(&EpochMetrics),
) -> Result<RunOutput> {
    config.validate()?;
    let config = config.resolved();
    let config_hash = config.hash();
    let pi_p = resolve_prior(&config, prepared)?;
    let labels = prepared.training_labels();

    let (training, retrieval) = match config.method {
        Method::NnrePu => {
            let out = train_nnre_pu(&prepared.cube, &labels, pi_p, config.unlabelled_samples, &config.train, progress)?;
            (out, None)
        }
        Method::PnPu => {
            let clusters = if config.retrieval.model == crate::retrieval::RetrievalModel::Spatial {
                None
            } else {
                Some(clusters_for(&config, &prepared.scene, &prepared.cube)?)
            };
            let out = train_pn_pu(
                &prepared.cube,
                &labels,
                clusters.as_ref(),
                &config.retrieval,
                config.negatives,
                &config.train,
                progress,
            )?;
            (out.training, Some(out.retrieval))
        }
    };

    // Operating point from the held-out split.
    let scores = predict_map(&training.classifier, &prepared.cube, 0.5)?.scores;
    let mut operating_point = None;
    if let Some(truth) = &prepared.truth {
        let s: Vec<f64> = prepared.split.iter().map(|&p| scores[p]).collect();
        let t: Vec<bool> = prepared.split.iter().map(|&p| truth[p]).collect();
        if t.iter().any(|&b| b) && t.iter().any(|&b| !b) {
            let (roc, _) = roc_and_auc(&s, &t)?;
            operating_point = Some(select_operating_point(&roc, pi_p, config.eval.alpha, config.eval.beta)?);
        }
    }
    let threshold = operating_point.map_or(0.5, |op| op.threshold);
    let positive = scores.map(|&s| s >= threshold);
    let prediction = PredictionMap { scores, positive };

    let mut metrics = None;
    let mut confusion = None;
    if let (Some(truth), Some(universe)) = (&prepared.truth, prepared.universe()) {
        let (map, counts) = confusion_map(&prediction.positive, truth, &universe)?;
        let mut s = Vec::new();
        let mut t = Vec::new();
        for (p, &inside) in universe.iter() {
            if inside {
                s.push(prediction.scores[p]);
                t.push(truth[p]);
            }
        }
        let auc = roc_and_auc(&s, &t).ok().map(|(_, a)| a);
        metrics = Some(EvalReport {
            precision: counts.precision(),
            recall: counts.recall(),
            f_score: counts.f_score(),
            auc,
            counts,
            evaluated_pixels: counts.total(),
        });
        confusion = Some(map);
    }

    let report = RunReport {
        config_hash,
        seed: config.seed,
        method: config.method,
        pi_p,
        true_pi_p: prepared.true_pi_p,
        threshold,
        operating_point,
        split_size: prepared.split.len(),
        metrics,
        universe: UNIVERSE_DESCRIPTION.to_string(),
        labeled_positives: prepared.labels.positives().len(),
        training: TrainingSummary::new(&training),
    };
    Ok(RunOutput {
        config,
        report,
        training,
        prediction,
        retrieval,
        confusion,
        training_labels: labels,
    })
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn stamped_json<T: Serialize>(hash: &str, seed: u64, body: T) -> Vec<u8> {
    serde_json::to_vec_pretty(&Stamped {
        config_hash: hash,
        seed,
        body,
    })
    .expect("artifact serializes")
}

/// Colours for the training-data view.
pub const TRAINING_COLORS: [(&str, [u8; 3]); 4] = [
    ("positive", [0, 200, 0]),
    ("positive (validation)", [150, 255, 150]),
    ("unlabelled or negative", [220, 40, 40]),
    ("unlabelled or negative (validation)", [255, 160, 160]),
];

fn training_rgb(rows: usize, cols: usize, examples: &[ExampleRecord]) -> Vec<u8> {
    let mut rgb = vec![0u8; rows * cols * 3];
    for e in examples {
        let k = match (e.tag == ExampleTag::Positive, e.validation) {
            (true, false) => 0,
            (true, true) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        let i = (e.pixel.row * cols + e.pixel.col) * 3;
        rgb[i..i + 3].copy_from_slice(&TRAINING_COLORS[k].1);
    }
    rgb
}

/// 8-bit score map over the whole scene.
pub fn score_png(scores: &Grid<f64>, text: &[(&str, &str)]) -> Result<Vec<u8>> {
    let data: Vec<u8> = scores.as_slice().iter().map(|&s| quantize8(s)).collect();
    encode_png(scores.cols(), scores.rows(), PngPixels::Gray8(&data), text)
}

/// 256-bin histogram of the 8-bit scores.
pub fn score_histogram(scores: &Grid<f64>) -> Vec<usize> {
    let mut bins = vec![0usize; 256];
    for &s in scores.as_slice() {
        bins[quantize8(s) as usize] += 1;
    }
    bins
}

/// Writes every artifact of `output` into `dir`, finishing with
/// `status.json`.
pub fn write_artifacts(output: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = output.report.config_hash.as_str();
    let seed = output.report.seed;
    let seed_text = seed.to_string();
    let text = [("config_hash", hash), ("seed", seed_text.as_str())];
    let (rows, cols) = (output.prediction.scores.rows(), output.prediction.scores.cols());

    write(dir, "config.json", output.config.to_json_pretty().as_bytes())?;
    write(dir, "report.json", output.report.to_json().as_bytes())?;
    write(dir, "epochs.json", &stamped_json(hash, seed, serde_json::json!({ "epochs": output.training.history })))?;
    write(dir, "labels.json", &stamped_json(hash, seed, output.training_labels.to_file()))?;

    let rgb = training_rgb(rows, cols, &output.training.examples);
    write(dir, "training.png", &encode_png(cols, rows, PngPixels::Rgb8(&rgb), &text)?)?;

    let universe = output.confusion.as_ref().map(|m| m.map(|&o| o != Outcome::Ignored));
    let pred: Vec<u8> = output
        .prediction
        .positive
        .iter()
        .map(|(p, &pos)| match (&universe, pos) {
            (Some(u), _) if !u[p] => 0,
            (_, true) => 255,
            (_, false) => 64,
        })
        .collect();
    write(dir, "prediction.png", &encode_png(cols, rows, PngPixels::Gray8(&pred), &text)?)?;

    let s16: Vec<u16> = output.prediction.scores.as_slice().iter().map(|&s| quantize16(s)).collect();
    write(dir, "scores.pgm", &encode_pgm16(cols, rows, &s16, &text))?;
    write(dir, "scores.png", &score_png(&output.prediction.scores, &text)?)?;

    if let Some(map) = &output.confusion {
        write(dir, "confusion.png", &confusion_png(map, &text)?)?;
        write(dir, "confusion.pgm", &confusion_pgm(map, &text))?;
    }
    if let Some(r) = &output.retrieval {
        write(dir, "retrieval.pgm", &r.to_pgm16(&text))?;
    }
    checkpoint::save(&output.training.classifier, dir.join("classifier.pnch"))?;
    write(
        dir,
        "classifier.json",
        &stamped_json(hash, seed, serde_json::json!({ "file": "classifier.pnch", "format": "PNCH1" })),
    )?;
    write_status(dir, hash, seed, None)
}

/// `status.json`: `done`, or `failed` with the error text.
pub fn write_status(dir: &Path, hash: &str, seed: u64, error: Option<&str>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let status = RunStatus {
        status: if error.is_some() { "failed" } else { "done" }.into(),
        error: error.map(str::to_string),
    };
    write(dir, "status.json", &stamped_json(hash, seed, status))
}

/// Runs `config` and writes its artifacts to `dir`. On failure whatever was
/// written stays, and `status.json` records the error.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let hash = config.hash();
    let result = run_experiment(config).and_then(|out| write_artifacts(&out, dir).map(|_| out));
    if let Err(e) = &result {
        // Best effort: the original error matters more than a failed status write.
        let _ = write_status(dir, &hash, config.seed, Some(&e.to_string()));
    }
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pi_p: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_score: Option<f64>,
    pub auc: Option<f64>,
    pub threshold: f64,
    /// This row uses the ground-truth prior.
    pub is_true: bool,
    pub config_hash: String,
}

/// Sorted, de-duplicated sweep values with the true prior added when it is
/// missing.
pub fn sweep_values(values: &[f64], true_pi_p: Option<f64>) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::config("empty prior sweep"));
    }
    let mut v = values.to_vec();
    if let Some(t) = true_pi_p {
        v.push(t);
    }
    for &x in &v {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::config(format!("sweep prior {x} outside (0, 1)")));
        }
    }
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);
    Ok(v)
}

/// Trains one PU model per prior value (runs in parallel) and reports the
/// operating-point metrics of each. Rows are sorted by prior.
pub fn pi_p_sweep(config: &ExperimentConfig, values: &[f64]) -> Result<Vec<SweepRow>> {
    let prepared = prepare(config)?;
    let values = sweep_values(values, prepared.true_pi_p)?;
    values
        .par_iter()
        .map(|&v| {
            let mut c = config.clone();
            c.method = Method::NnrePu;
            c.pi_p = PriorSetting::Value(v);
            let out = execute(&c, &prepared, &mut |_| {})?;
            let m = out.report.metrics.as_ref();
            Ok(SweepRow {
                pi_p: v,
                precision: m.and_then(|m| m.precision),
                recall: m.and_then(|m| m.recall),
                f_score: m.and_then(|m| m.f_score),
                auc: m.and_then(|m| m.auc),
                threshold: out.report.threshold,
                is_true: prepared.true_pi_p.is_some_and(|t| (t - v).abs() <= 1e-9),
                config_hash: out.report.config_hash,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let mut out = String::from("pi_p,precision,recall,f_score,auc,threshold,is_true,config_hash\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.pi_p,
            opt(r.precision),
            opt(r.recall),
            opt(r.f_score),
            opt(r.auc),
            r.threshold,
            r.is_true,
            r.config_hash
        ));
    }
    out
}

/// Runs the sweep and writes `sweep.csv` and `sweep.json` to `dir`.
pub fn run_sweep(config: &ExperimentConfig, values: &[f64], dir: &Path) -> Result<Vec<SweepRow>> {
    let rows = pi_p_sweep(config, values)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = config.hash();
    let mut csv = format!("# config_hash: {hash}\n# seed: {}\n", config.seed);
    csv.push_str(&sweep_csv(&rows));
    write(dir, "sweep.csv", csv.as_bytes())?;
    write(dir, "sweep.json", &stamped_json(&hash, config.seed, serde_json::json!({ "rows": rows })))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrainConfig;

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            unlabelled_samples: 400,
            train: TrainOptions {
                patch_size: 1,
                classifier: crate::model::ClassifierConfig {
                    hidden: vec![8],
                    ..Default::default()
                },
                training: TrainConfig {
                    epochs: 5,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn prior_setting_json() {
        assert_eq!(serde_json::to_string(&PriorSetting::True).unwrap(), r#""true""#);
        assert_eq!(serde_json::to_string(&PriorSetting::Value(0.25)).unwrap(), "0.25");
        assert_eq!(serde_json::from_str::<PriorSetting>("0.3").unwrap(), PriorSetting::Value(0.3));
        assert_eq!(serde_json::from_str::<PriorSetting>(r#""true""#).unwrap(), PriorSetting::True);
        assert!(serde_json::from_str::<PriorSetting>(r#""maybe""#).is_err());
    }

    #[test]
    fn config_round_trips_and_defaults_fill_in() {
        let c = quick();
        assert_eq!(ExperimentConfig::from_json(&c.to_json_pretty()).unwrap(), c);
        let partial = ExperimentConfig::from_json(r#"{"method":"pn_pu","seed":9}"#).unwrap();
        assert_eq!(partial.method, Method::PnPu);
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.positive_class, 2);
    }

    #[test]
    fn hash_ignores_output_location_only() {
        let a = quick();
        let mut b = a.clone();
        b.output_dir = Some("/tmp/elsewhere".into());
        b.cluster_cache = Some("/tmp/cache".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        let s: BTreeSet<u64> = (1..=4).map(|k| derive_seed(7, k)).collect();
        assert_eq!(s.len(), 4);
        assert_eq!(derive_seed(7, 1), derive_seed(7, 1));
    }

    #[test]
    fn prepared_split_and_universe_are_disjoint() {
        let p = prepare(&quick()).unwrap();
        assert!((p.true_pi_p.unwrap() - 544.0 / 4096.0).abs() < 1e-12);
        assert_eq!(p.labels.positives().len(), 54);
        let pool = p.labels.unlabelled().len();
        assert_eq!(p.split.len(), (pool as f64 * 0.07).round() as usize);
        let u = p.universe().unwrap();
        for &s in &p.split {
            assert!(!u[s]);
            assert!(p.labels.unlabelled().contains(&s));
        }
        let train = p.training_labels();
        assert_eq!(train.unlabelled().len(), pool - p.split.len());
        assert_eq!(u.as_slice().iter().filter(|&&b| b).count(), 4096 - 54 - p.split.len());
    }

    #[test]
    fn experiment_is_deterministic_and_writes_artifacts() {
        let c = quick();
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        let m = a.report.metrics.as_ref().unwrap();
        assert_eq!(m.counts.total(), m.evaluated_pixels);

        let dir = tempfile::tempdir().unwrap();
        write_artifacts(&a, dir.path()).unwrap();
        for f in [
            "config.json",
            "report.json",
            "epochs.json",
            "labels.json",
            "training.png",
            "prediction.png",
            "scores.pgm",
            "scores.png",
            "confusion.png",
            "confusion.pgm",
            "classifier.pnch",
            "classifier.json",
            "status.json",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let status: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("status.json")).unwrap()).unwrap();
        assert_eq!(status["status"], "done");
        assert_eq!(status["config_hash"], a.report.config_hash.as_str());
        let pgm = fs::read(dir.path().join("confusion.pgm")).unwrap();
        assert!(String::from_utf8_lossy(&pgm[..120]).contains(&a.report.config_hash));
    }

    #[test]
    fn failed_run_is_flagged() {
        let mut c = quick();
        c.scene = SceneSource::File {
            path: "/nonexistent/scene.json".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(run_to_dir(&c, dir.path()).is_err());
        let status: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("status.json")).unwrap()).unwrap();
        assert_eq!(status["status"], "failed");
        assert!(status["error"].as_str().unwrap().contains("scene.json"));
    }

    #[test]
    fn prior_true_without_ground_truth_is_a_config_error() {
        let mut scene = quick().scene.load().unwrap();
        scene.ground_truth = None;
        let mut c = quick();
        c.labels = LabelSource::Provided {
            positives: vec![PixelCoord::new(5, 5)],
        };
        let p = prepare_scene(&c, scene).unwrap();
        assert!(p.split.is_empty() && p.truth.is_none());
        assert!(matches!(execute(&c, &p, &mut |_| {}), Err(Error::Config(_))));
        c.pi_p = PriorSetting::Value(0.1);
        let out = execute(&c, &p, &mut |_| {}).unwrap();
        assert!(out.report.metrics.is_none());
        assert_eq!(out.report.threshold, 0.5);
    }

    #[test]
    fn sweep_values_rules() {
        assert!(sweep_values(&[], Some(0.13)).is_err());
        let grid: Vec<f64> = (1..=6).map(|k| 0.05 * k as f64).collect();
        let v = sweep_values(&grid, Some(0.13)).unwrap();
        assert_eq!(v.len(), 7);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert!(v.contains(&0.13));
        assert_eq!(sweep_values(&grid, Some(grid[2])).unwrap().len(), 6);
        assert!(sweep_values(&[0.0], None).is_err());
    }

    #[test]
    fn sweep_rows_sorted_and_mark_truth() {
        let mut c = quick();
        c.train.training.epochs = 2;
        let rows = pi_p_sweep(&c, &[0.3, 0.1]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.windows(2).all(|w| w[0].pi_p < w[1].pi_p));
        assert_eq!(rows.iter().filter(|r| r.is_true).count(), 1);
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
    }
}
