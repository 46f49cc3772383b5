//! Local HTTP service: scene previews, label editing, queued training runs and
//! their result maps.
//!
//! Every response carries an `x-config-hash` header. Scene and listing
//! endpoints report the hash of the configuration a run would use right now;
//! run endpoints report the hash of that run's configuration.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use hsipu_core::labels::LabelFile;
use hsipu_core::pipeline::{
    execute, prepare_scene, score_histogram, score_png, write_artifacts, write_status, ExperimentConfig,
    LabelSource, SceneSource,
};
use hsipu_core::raster::{encode_png, quantize8, PngPixels};
use hsipu_core::{Error, LabelState, Scene};
use serde::{Deserialize, Serialize};

pub const CONFIG_HASH_HEADER: &str = "x-config-hash";

struct SceneSlot {
    source: SceneSource,
    scene: Scene,
    /// Channel-normalized copy for rendering.
    normalized: hsipu_core::HsiCube,
    labels: Mutex<LabelState>,
    /// Serializes training runs on this scene.
    queue: tokio::sync::Mutex<()>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Queued,
    Training,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLinks {
    pub map: String,
    pub report: String,
    pub scores: String,
    pub histogram: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub id: u64,
    pub scene: String,
    pub status: RunStatus,
    /// Last finished epoch.
    pub epoch: usize,
    pub max_epochs: usize,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Present once the run is done.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub links: Option<RunLinks>,
}

struct RunArtifacts {
    map_png: Vec<u8>,
    report: String,
    scores: String,
    histogram: String,
}

struct RunRecord {
    handle: RunHandle,
    artifacts: Option<RunArtifacts>,
}

/// Scenes, base configuration and the run registry.
pub struct AppState {
    scenes: BTreeMap<String, Arc<SceneSlot>>,
    base: ExperimentConfig,
    runs_dir: PathBuf,
    runs: Mutex<BTreeMap<u64, RunRecord>>,
    next_run: AtomicU64,
}

impl AppState {
    /// `base` supplies every run setting the POST body leaves out. Run
    /// directories go under `runs_dir`.
    pub fn new(base: ExperimentConfig, runs_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenes: BTreeMap::new(),
            base,
            runs_dir: runs_dir.into(),
            runs: Mutex::new(BTreeMap::new()),
            next_run: AtomicU64::new(1),
        }
    }

    /// Loads and registers a scene, starting with no labels.
    pub fn add_scene(&mut self, id: &str, source: SceneSource) -> hsipu_core::Result<()> {
        let scene = source.load()?;
        let normalized = scene.cube.normalize()?;
        let scope = self.base.scope.mask(normalized.rows(), normalized.cols(), scene.ground_truth.as_ref());
        let labels = LabelState::new(&scope, [], scene.ground_truth.clone())?;
        self.scenes.insert(
            id.to_string(),
            Arc::new(SceneSlot {
                source,
                scene,
                normalized,
                labels: Mutex::new(labels),
                queue: tokio::sync::Mutex::new(()),
            }),
        );
        Ok(())
    }

    /// The configuration a run on `slot` would use with an empty body.
    fn scene_config(&self, slot: &SceneSlot) -> ExperimentConfig {
        let mut c = self.base.clone();
        c.scene = slot.source.clone();
        c.labels = LabelSource::Provided {
            positives: slot.labels.lock().unwrap().positives().iter().copied().collect(),
        };
        c
    }
}

type Shared = Arc<AppState>;

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Json { .. } => StatusCode::BAD_REQUEST,
            Error::Data(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Numeric(_) | Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

fn not_found(what: &str, id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown {what} '{id}'"))
}

fn with_hash(hash: &str, resp: impl IntoResponse) -> Response {
    let mut resp = resp.into_response();
    if let Ok(v) = HeaderValue::from_str(hash) {
        resp.headers_mut().insert(CONFIG_HASH_HEADER, v);
    }
    resp
}

fn json_bytes(body: String) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], body)
}

fn scene_slot(state: &AppState, id: &str) -> Result<Arc<SceneSlot>, ApiError> {
    state.scenes.get(id).cloned().ok_or_else(|| not_found("scene", id))
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}/render", get(render_scene))
        .route("/scenes/{id}/labels", get(get_labels).put(put_labels))
        .route("/scenes/{id}/runs", axum::routing::post(post_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/map.png", get(run_map))
        .route("/runs/{id}/report.json", get(run_report))
        .route("/runs/{id}/scores.json", get(run_scores))
        .route("/runs/{id}/histogram.json", get(run_histogram))
        .with_state(state)
}

/// Serves until the process ends. Fails when the address is taken.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(state))).await
}

#[derive(Serialize)]
struct SceneInfo {
    id: String,
    rows: usize,
    cols: usize,
    channels: usize,
    band_names: Option<Vec<String>>,
    has_ground_truth: bool,
    labeled_positives: usize,
    config_hash: String,
}

async fn list_scenes(State(state): State<Shared>) -> Response {
    let list: Vec<SceneInfo> = state
        .scenes
        .iter()
        .map(|(id, slot)| {
            let labeled_positives = slot.labels.lock().unwrap().positives().len();
            SceneInfo {
                id: id.clone(),
                rows: slot.scene.cube.rows(),
                cols: slot.scene.cube.cols(),
                channels: slot.scene.cube.channels(),
                band_names: slot.scene.band_names.clone(),
                has_ground_truth: slot.scene.ground_truth.is_some(),
                labeled_positives,
                config_hash: state.scene_config(slot).hash(),
            }
        })
        .collect();
    with_hash(&state.base.hash(), Json(list))
}

#[derive(Deserialize)]
struct RenderQuery {
    r: Option<usize>,
    g: Option<usize>,
    b: Option<usize>,
}

/// False-colour composite of three normalized channels.
async fn render_scene(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<RenderQuery>,
) -> Result<Response, ApiError> {
    let slot = scene_slot(&state, &id)?;
    let cube = &slot.normalized;
    let n = cube.channels();
    let pick = [q.r.unwrap_or(n * 3 / 4), q.g.unwrap_or(n / 2), q.b.unwrap_or(n / 4)];
    if let Some(&bad) = pick.iter().find(|&&c| c >= n) {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            format!("channel {bad} out of range (scene has {n})"),
        ));
    }
    let mut rgb = Vec::with_capacity(cube.pixel_count() * 3);
    for spectrum in cube.spectra() {
        rgb.extend(pick.iter().map(|&c| quantize8(spectrum[c])));
    }
    let channels = format!("{},{},{}", pick[0], pick[1], pick[2]);
    let png = encode_png(cube.cols(), cube.rows(), PngPixels::Rgb8(&rgb), &[("channels", &channels)])?;
    let hash = state.scene_config(&slot).hash();
    Ok(with_hash(
        &hash,
        (
            [
                (header::CONTENT_TYPE, "image/png".to_string()),
                (header::HeaderName::from_static("x-render-channels"), channels),
            ],
            png,
        ),
    ))
}

async fn get_labels(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = scene_slot(&state, &id)?;
    let body = slot.labels.lock().unwrap().to_json();
    Ok(with_hash(&state.scene_config(&slot).hash(), json_bytes(body)))
}

async fn put_labels(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let slot = scene_slot(&state, &id)?;
    let file: LabelFile = serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    let gt = slot.scene.ground_truth.clone();
    let scope = state.base.scope.mask(slot.scene.cube.rows(), slot.scene.cube.cols(), gt.as_ref());
    let labels = LabelState::from_file(&file, &scope, gt)?;
    let json = labels.to_json();
    *slot.labels.lock().unwrap() = labels;
    Ok(with_hash(&state.scene_config(&slot).hash(), json_bytes(json)))
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Body fields override the scene's current configuration; the scene source
/// and output location are fixed by the service.
fn run_config(state: &AppState, slot: &SceneSlot, body: &[u8], run_id: u64) -> Result<ExperimentConfig, ApiError> {
    let mut value = serde_json::to_value(state.scene_config(slot)).expect("config serializes");
    if !body.is_empty() {
        let patch: serde_json::Value =
            serde_json::from_slice(body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
        if !patch.is_object() {
            return Err(ApiError(StatusCode::BAD_REQUEST, "run body must be a JSON object".into()));
        }
        merge(&mut value, patch);
    }
    let mut config: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    config.scene = slot.source.clone();
    config.output_dir = Some(state.runs_dir.join(format!("run-{run_id}")));
    config.validate()?;
    Ok(config)
}

async fn post_run(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let slot = scene_slot(&state, &id)?;
    let run_id = state.next_run.fetch_add(1, Ordering::SeqCst);
    let config = run_config(&state, &slot, &body, run_id)?;
    let handle = RunHandle {
        id: run_id,
        scene: id,
        status: RunStatus::Queued,
        epoch: 0,
        max_epochs: config.train.training.epochs,
        config_hash: config.hash(),
        error: None,
        links: None,
    };
    state.runs.lock().unwrap().insert(
        run_id,
        RunRecord {
            handle: handle.clone(),
            artifacts: None,
        },
    );
    tokio::spawn(run_worker(state.clone(), slot, run_id, config));
    Ok(with_hash(&handle.config_hash.clone(), (StatusCode::ACCEPTED, Json(handle))))
}

fn update(state: &AppState, run_id: u64, f: impl FnOnce(&mut RunRecord)) {
    if let Some(rec) = state.runs.lock().unwrap().get_mut(&run_id) {
        f(rec);
    }
}

async fn run_worker(state: Shared, slot: Arc<SceneSlot>, run_id: u64, config: ExperimentConfig) {
    let _turn = slot.queue.lock().await;
    update(&state, run_id, |r| r.handle.status = RunStatus::Training);
    let worker_state = state.clone();
    let worker_slot = slot.clone();
    let result = tokio::task::spawn_blocking(move || run_blocking(&worker_state, &worker_slot, run_id, &config))
        .await
        .unwrap_or_else(|e| Err(format!("worker panicked: {e}")));
    update(&state, run_id, |r| match result {
        Ok(artifacts) => {
            let base = format!("/runs/{run_id}");
            r.handle.links = Some(RunLinks {
                map: format!("{base}/map.png"),
                report: format!("{base}/report.json"),
                scores: format!("{base}/scores.json"),
                histogram: format!("{base}/histogram.json"),
            });
            r.artifacts = Some(artifacts);
            r.handle.status = RunStatus::Done;
        }
        Err(e) => {
            r.handle.error = Some(e);
            r.handle.status = RunStatus::Failed;
        }
    });
}

fn run_blocking(state: &AppState, slot: &SceneSlot, run_id: u64, config: &ExperimentConfig) -> Result<RunArtifacts, String> {
    let dir = config.output_dir.clone().expect("service sets the run directory");
    let hash = config.hash();
    let outcome = (|| {
        let prepared = prepare_scene(config, slot.scene.clone())?;
        let out = execute(config, &prepared, &mut |m| update(state, run_id, |r| r.handle.epoch = m.epoch))?;
        write_artifacts(&out, &dir)?;
        let seed = config.seed.to_string();
        let text = [("config_hash", hash.as_str()), ("seed", seed.as_str())];
        let scores = &out.prediction.scores;
        Ok::<_, Error>(RunArtifacts {
            map_png: score_png(scores, &text)?,
            report: out.report.to_json(),
            scores: serde_json::to_string(&serde_json::json!({
                "config_hash": hash,
                "rows": scores.rows(),
                "cols": scores.cols(),
                "threshold": out.report.threshold,
                "scores": scores.as_slice(),
            }))
            .expect("scores serialize"),
            histogram: serde_json::to_string(&serde_json::json!({
                "config_hash": hash,
                "bins": score_histogram(scores),
            }))
            .expect("histogram serializes"),
        })
    })();
    outcome.map_err(|e| {
        let _ = write_status(&dir, &hash, config.seed, Some(&e.to_string()));
        e.to_string()
    })
}

fn parse_run_id(id: &str) -> Result<u64, ApiError> {
    id.parse().map_err(|_| not_found("run", id))
}

async fn get_run(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let run_id = parse_run_id(&id)?;
    let runs = state.runs.lock().unwrap();
    let rec = runs.get(&run_id).ok_or_else(|| not_found("run", &id))?;
    Ok(with_hash(&rec.handle.config_hash, Json(rec.handle.clone())))
}

fn artifact(state: &AppState, id: &str, pick: impl FnOnce(&RunArtifacts) -> Response) -> Result<Response, ApiError> {
    let run_id = parse_run_id(id)?;
    let runs = state.runs.lock().unwrap();
    let rec = runs.get(&run_id).ok_or_else(|| not_found("run", id))?;
    let hash = rec.handle.config_hash.clone();
    match &rec.artifacts {
        Some(a) => Ok(with_hash(&hash, pick(a))),
        None => Ok(with_hash(
            &hash,
            ApiError(
                StatusCode::CONFLICT,
                format!("run {run_id} is {:?}, artifacts exist once it is done", rec.handle.status).to_lowercase(),
            ),
        )),
    }
}

async fn run_map(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    artifact(&state, &id, |a| ([(header::CONTENT_TYPE, "image/png")], a.map_png.clone()).into_response())
}

async fn run_report(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    artifact(&state, &id, |a| json_bytes(a.report.clone()).into_response())
}

async fn run_scores(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    artifact(&state, &id, |a| json_bytes(a.scores.clone()).into_response())
}

async fn run_histogram(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    artifact(&state, &id, |a| json_bytes(a.histogram.clone()).into_response())
}
