//! `hsipu`: command-line runner for PU retrieval experiments.
//!
//! Experiment settings come from built-in defaults, then an optional JSON
//! config file, then command-line flags, each overriding the one before.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hsipu_core::annotate::{annotate, AnnotationModel, AnnotationRequest};
use hsipu_core::cluster::{kmeans, ClusterCache, KMeansParams};
use hsipu_core::eval::{confusion_map, confusion_pgm, confusion_png, roc_and_auc, EvalReport};
use hsipu_core::labels::LabelFile;
use hsipu_core::model::{checkpoint, predict_map, EarlyStop, Surrogate};
use hsipu_core::pipeline::{
    execute, prepare, run_sweep, run_to_dir, score_png, write_status, ExperimentConfig, LabelSource, Method,
    PriorSetting, SceneSource,
};
use hsipu_core::raster::{decode_pgm16, encode_pgm16, encode_png, quantize16, PngPixels};
use hsipu_core::retrieval::{RetrievalModel, RetrievalParams};
use hsipu_core::scene_io::{convert_raw, RawDtype, RawShape};
use hsipu_core::synth::SyntheticSpec;
use hsipu_core::{load_scene, save_scene, Error, Grid, LabelState, Result, Scope};

#[derive(Parser)]
#[command(name = "hsipu", version, about = "Positive-unlabelled material retrieval in hyperspectral scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw dense-array dump plus shape sidecar into a scene file.
    Convert(ConvertArgs),
    /// Write a synthetic scene.
    Synth(SynthArgs),
    /// Simulate a user labeling part of the positive class.
    Annotate(AnnotateArgs),
    /// Cluster scene spectra with k-means.
    Cluster(ClusterArgs),
    /// Train a classifier and save it with its epoch log.
    Train(ExperimentArgs),
    /// Score every pixel of a scene with a saved classifier.
    Predict(PredictArgs),
    /// Evaluate a score map against ground truth.
    Eval(EvalArgs),
    /// Full experiment: labels, training, evaluation and all artifacts.
    Run(ExperimentArgs),
    /// Train one PU model per class prior and tabulate precision and recall.
    Sweep(SweepArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ConvertArgs {
    /// Raw data dump.
    #[arg(long)]
    data: PathBuf,
    /// JSON shape sidecar: rows, cols, channels, dtype, interleave, header_bytes.
    #[arg(long)]
    shape: PathBuf,
    /// Raw ground-truth dump, one value per pixel in row-major order.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, default_value = "u16le", value_parser = parse_dtype)]
    gt_dtype: RawDtype,
    /// Output scene header path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic spec JSON; the built-in three-class scene when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    variability: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long = "class")]
    positive_class: u16,
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    #[arg(long, default_value = "uniform", value_parser = parse_annotation)]
    model: AnnotationModel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "annotated", value_parser = parse_scope)]
    scope: Scope,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reuse and store assignments in this directory.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Assignment JSON.
    #[arg(long)]
    out: PathBuf,
}

/// Experiment settings. Every flag overrides the config file.
#[derive(Args, Default)]
struct ExperimentArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene header file.
    #[arg(long, conflicts_with = "demo")]
    scene: Option<PathBuf>,
    /// Use the built-in synthetic scene.
    #[arg(long)]
    demo: bool,
    /// Noise level of the built-in scene.
    #[arg(long, requires = "demo")]
    demo_noise: Option<f64>,
    #[arg(long = "class")]
    positive_class: Option<u16>,
    #[arg(long, value_parser = parse_scope)]
    scope: Option<Scope>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Label file with the positives; replaces simulated labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_parser = parse_annotation, conflicts_with = "labels")]
    annotation: Option<AnnotationModel>,
    #[arg(long, conflicts_with = "labels")]
    fraction: Option<f64>,
    /// Class prior: a number or "true".
    #[arg(long, value_parser = parse_prior)]
    pi_p: Option<PriorSetting>,
    /// Named retrieval preset (indian-pines-like, salinas-like, pavia-like).
    #[arg(long)]
    preset: Option<String>,
    /// Multiply baseline and temperature, e.g. to fit a preset to a smaller scene.
    #[arg(long)]
    retrieval_scale: Option<f64>,
    #[arg(long)]
    baseline: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_parser = parse_retrieval_model)]
    retrieval_model: Option<RetrievalModel>,
    /// Cluster count for the spectral factor; defaults to the ground-truth class count.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    unlabelled_samples: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long, value_parser = parse_early_stop)]
    early_stop: Option<EarlyStop>,
    #[arg(long, value_parser = parse_surrogate)]
    surrogate: Option<Surrogate>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cluster_cache: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Output directory for scores.pgm, scores.png and prediction.png.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Scene with ground truth.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long = "class")]
    positive_class: u16,
    /// 16-bit score map written by `predict`.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Labeled positives to leave out of the evaluation.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory for report.json and the confusion map.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Comma-separated class priors.
    #[arg(long, value_delimiter = ',', required_unless_present = "relative")]
    values: Vec<f64>,
    /// Comma-separated multiples of the ground-truth prior.
    #[arg(long, value_delimiter = ',')]
    relative: Vec<f64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Scene to register as ID=HEADER_PATH; repeatable.
    #[arg(long = "scene", value_parser = parse_scene_entry)]
    scenes: Vec<(String, PathBuf)>,
    /// Register the built-in synthetic scene under this id.
    #[arg(long)]
    demo: Option<String>,
    /// Base run config; POST bodies override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
}

fn parse_with<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

fn parse_dtype(s: &str) -> std::result::Result<RawDtype, String> {
    parse_with(s)
}

fn parse_annotation(s: &str) -> std::result::Result<AnnotationModel, String> {
    parse_with(s)
}

fn parse_scope(s: &str) -> std::result::Result<Scope, String> {
    parse_with(s)
}

fn parse_early_stop(s: &str) -> std::result::Result<EarlyStop, String> {
    parse_with(s)
}

fn parse_surrogate(s: &str) -> std::result::Result<Surrogate, String> {
    parse_with(s)
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_prior(s: &str) -> std::result::Result<PriorSetting, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_retrieval_model(s: &str) -> std::result::Result<RetrievalModel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scene_entry(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (id, path) = s.split_once('=').ok_or("expected ID=PATH")?;
    Ok((id.to_string(), PathBuf::from(path)))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| Error::json(path.display().to_string(), e))
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_json(
                std::str::from_utf8(&read(path)?).map_err(|_| Error::config("config file is not UTF-8"))?,
            )?,
            None => ExperimentConfig::default(),
        };
        if let Some(path) = &self.scene {
            c.scene = SceneSource::File { path: path.clone() };
        }
        if self.demo {
            c.scene = SceneSource::default();
        }
        if let (Some(n), SceneSource::Demo { noise_sigma, .. }) = (self.demo_noise, &mut c.scene) {
            *noise_sigma = n;
        }
        if let Some(v) = self.positive_class {
            c.positive_class = v;
        }
        if let Some(v) = self.scope {
            c.scope = v;
        }
        if let Some(v) = self.method {
            c.method = v;
        }
        if let Some(path) = &self.labels {
            let file: LabelFile = read_json(path)?;
            c.labels = LabelSource::Provided {
                positives: file.positives,
            };
        }
        if self.annotation.is_some() || self.fraction.is_some() {
            let (mut model, mut fraction) = match c.labels {
                LabelSource::Simulated { model, fraction } => (model, fraction),
                LabelSource::Provided { .. } => (AnnotationModel::Uniform, 0.1),
            };
            model = self.annotation.unwrap_or(model);
            fraction = self.fraction.unwrap_or(fraction);
            c.labels = LabelSource::Simulated { model, fraction };
        }
        if let Some(v) = self.pi_p {
            c.pi_p = v;
        }
        if let Some(name) = &self.preset {
            let model = c.retrieval.model;
            c.retrieval = RetrievalParams::preset(name)?;
            c.retrieval.model = model;
        }
        if let Some(f) = self.retrieval_scale {
            c.retrieval = c.retrieval.scaled(f)?;
        }
        if let Some(v) = self.baseline {
            c.retrieval.baseline = v;
        }
        if let Some(v) = self.temperature {
            c.retrieval.temperature = v;
        }
        if let Some(v) = self.retrieval_model {
            c.retrieval.model = v;
        }
        if let Some(v) = self.clusters {
            c.clusters.k = Some(v);
        }
        if let Some(v) = self.unlabelled_samples {
            c.unlabelled_samples = v;
        }
        if let Some(v) = self.negatives {
            c.negatives = Some(v);
        }
        let t = &mut c.train;
        if let Some(v) = self.patch {
            t.patch_size = v;
        }
        if let Some(v) = self.epochs {
            t.training.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.training.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.training.learning_rate = v;
        }
        if let Some(v) = self.patience {
            t.training.patience = v;
        }
        if let Some(v) = self.early_stop {
            t.training.early_stop = v;
        }
        if let Some(v) = self.surrogate {
            t.surrogate = Some(v);
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.output_dir = Some(v.clone());
        }
        if let Some(v) = &self.cluster_cache {
            c.cluster_cache = Some(v.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn output_dir(c: &ExperimentConfig) -> PathBuf {
    c.output_dir.clone().unwrap_or_else(|| PathBuf::from(format!("run-{}", &c.hash()[..12])))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    let shape: RawShape = read_json(&a.shape)?;
    let data = read(&a.data)?;
    let gt = a.gt.as_deref().map(read).transpose()?;
    let mut scene = convert_raw(&data, &shape, gt.as_deref().map(|g| (g, a.gt_dtype)))?;
    scene.band_names = shape.band_names.clone();
    ensure_parent(&a.out)?;
    save_scene(&scene, &a.out)?;
    println!(
        "wrote {} ({}x{}x{})",
        a.out.display(),
        scene.cube.rows(),
        scene.cube.cols(),
        scene.cube.channels()
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => read_json(path)?,
        None => SyntheticSpec::three_class_demo(a.noise, a.variability),
    };
    let scene = spec.generate(a.seed)?;
    ensure_parent(&a.out)?;
    save_scene(&scene, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_annotate(a: &AnnotateArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let gt = scene
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::data("annotation needs a scene with ground truth"))?;
    let labels = annotate(
        gt,
        &AnnotationRequest {
            positive_class: a.positive_class,
            fraction: a.fraction,
            model: a.model,
            seed: a.seed,
            scope: a.scope,
        },
    )?;
    write(&a.out, labels.to_json().as_bytes())?;
    println!("labeled {} pixels -> {}", labels.positives().len(), a.out.display());
    Ok(())
}

fn cmd_cluster(a: &ClusterArgs) -> Result<()> {
    let cube = load_scene(&a.scene)?.cube.normalize()?;
    let params = KMeansParams::new(a.k, a.seed);
    let (assignment, hit) = match &a.cache {
        Some(dir) => ClusterCache::new(dir).get_or_compute(&cube, &params)?,
        None => (kmeans(&cube, &params)?, false),
    };
    let json = serde_json::to_vec(&assignment).map_err(|e| Error::json("cluster assignment", e))?;
    write(&a.out, &json)?;
    println!(
        "k={} inertia={:.6} iterations={}{} -> {}",
        assignment.k,
        assignment.inertia,
        assignment.iterations,
        if hit { " (cached)" } else { "" },
        a.out.display()
    );
    Ok(())
}

fn print_epoch(m: &hsipu_core::model::EpochMetrics) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    eprintln!(
        "epoch {:3}  train {:.5}  val {}  precision {}  recall {}",
        m.epoch,
        m.train_loss,
        opt(m.val_loss),
        opt(m.val_precision),
        opt(m.val_recall)
    );
}

fn cmd_train(a: &ExperimentArgs) -> Result<()> {
    let config = a.resolve()?;
    let dir = output_dir(&config);
    let hash = config.hash();
    let result = (|| {
        let prepared = prepare(&config)?;
        let out = execute(&config, &prepared, &mut print_epoch)?;
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join("config.json"), out.config.to_json_pretty().as_bytes())?;
        checkpoint::save(&out.training.classifier, dir.join("classifier.pnch"))?;
        let epochs = serde_json::json!({ "config_hash": hash, "seed": config.seed, "epochs": out.training.history });
        write(&dir.join("epochs.json"), serde_json::to_string_pretty(&epochs).expect("json").as_bytes())?;
        let summary = serde_json::json!({
            "config_hash": hash,
            "seed": config.seed,
            "threshold": out.report.threshold,
            "training": out.report.training,
        });
        write(&dir.join("training.json"), serde_json::to_string_pretty(&summary).expect("json").as_bytes())?;
        write(&dir.join("labels.json"), out.training_labels.to_json().as_bytes())?;
        write_status(&dir, &hash, config.seed, None)?;
        println!(
            "trained {} epochs (best {}), operating threshold {:.4} -> {}",
            out.report.training.epochs_run,
            out.report.training.best_epoch,
            out.report.threshold,
            dir.display()
        );
        Ok::<_, Error>(())
    })();
    if let Err(e) = &result {
        let _ = write_status(&dir, &hash, config.seed, Some(&e.to_string()));
    }
    result
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let cube = load_scene(&a.scene)?.cube.normalize()?;
    let clf = checkpoint::load(&a.classifier)?;
    let map = predict_map(&clf, &cube, a.threshold)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let threshold = a.threshold.to_string();
    let text = [("threshold", threshold.as_str())];
    let s16: Vec<u16> = map.scores.as_slice().iter().map(|&s| quantize16(s)).collect();
    write(&a.out.join("scores.pgm"), &encode_pgm16(cube.cols(), cube.rows(), &s16, &text))?;
    write(&a.out.join("scores.png"), &score_png(&map.scores, &text)?)?;
    let bin: Vec<u8> = map.positive.as_slice().iter().map(|&p| if p { 255 } else { 0 }).collect();
    write(
        &a.out.join("prediction.png"),
        &encode_png(cube.cols(), cube.rows(), PngPixels::Gray8(&bin), &text)?,
    )?;
    let n = map.positive.as_slice().iter().filter(|&&p| p).count();
    println!("{n} of {} pixels positive -> {}", cube.pixel_count(), a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let gt = scene
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::data("evaluation needs a scene with ground truth"))?;
    let (w, h, samples, _) = decode_pgm16(&read(&a.scores)?)?;
    if (h, w) != (gt.rows(), gt.cols()) {
        return Err(Error::data(format!("score map is {w}x{h}, scene is {}x{}", gt.cols(), gt.rows())));
    }
    let scores = Grid::from_vec(h, w, samples.iter().map(|&s| s as f64 / 65535.0).collect())?;
    let truth = gt.map(|&c| c == a.positive_class);
    let labeled = match &a.labels {
        Some(path) => {
            let file: LabelFile = read_json(path)?;
            let scope = Scope::All.mask(h, w, None);
            LabelState::from_file(&file, &scope, None)?.positives().clone()
        }
        None => Default::default(),
    };
    let mask = Grid::from_fn(h, w, |p| gt[p] != 0 && !labeled.contains(&p));
    let predicted = scores.map(|&s| s >= a.threshold);
    let (map, counts) = confusion_map(&predicted, &truth, &mask)?;
    let (s, t): (Vec<f64>, Vec<bool>) = mask.iter().filter(|(_, &m)| m).map(|(p, _)| (scores[p], truth[p])).unzip();
    let report = EvalReport {
        precision: counts.precision(),
        recall: counts.recall(),
        f_score: counts.f_score(),
        auc: roc_and_auc(&s, &t).ok().map(|(_, auc)| auc),
        counts,
        evaluated_pixels: counts.total(),
    };
    let threshold = a.threshold.to_string();
    let text = [("threshold", threshold.as_str())];
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write(&a.out.join("report.json"), json.as_bytes())?;
    write(&a.out.join("confusion.png"), &confusion_png(&map, &text)?)?;
    write(&a.out.join("confusion.pgm"), &confusion_pgm(&map, &text))?;
    println!("{json}");
    Ok(())
}

fn cmd_run(a: &ExperimentArgs) -> Result<()> {
    let config = a.resolve()?;
    let dir = output_dir(&config);
    let out = run_to_dir(&config, &dir)?;
    println!("{}", out.report.to_json());
    eprintln!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let config = a.experiment.resolve()?;
    let mut values = a.values.clone();
    if !a.relative.is_empty() {
        let truth = prepare(&config)?
            .true_pi_p
            .ok_or_else(|| Error::config("relative sweep values need ground truth"))?;
        values.extend(a.relative.iter().map(|m| m * truth));
    }
    let dir = output_dir(&config);
    let rows = run_sweep(&config, &values, &dir)?;
    print!("{}", hsipu_core::pipeline::sweep_csv(&rows));
    eprintln!("sweep table in {}", dir.display());
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let base = match &a.config {
        Some(path) => read_json(path)?,
        None => ExperimentConfig::default(),
    };
    let mut state = hsipu_service::AppState::new(base, &a.runs_dir);
    for (id, path) in &a.scenes {
        state.add_scene(id, SceneSource::File { path: path.clone() })?;
    }
    if let Some(id) = &a.demo {
        state.add_scene(id, SceneSource::default())?;
    }
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::config(format!("bad listen address: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    eprintln!("listening on http://{addr}");
    rt.block_on(hsipu_service::serve(addr, state)).map_err(|e| Error::io(addr.to_string(), e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Convert(a) => cmd_convert(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Annotate(a) => cmd_annotate(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
