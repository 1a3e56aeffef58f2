//! Read-only HTTP service over registered ensembles.
//!
//! Fitted summaries, Morse ensembles, probabilistic maps and encoded
//! responses are cached under keys built from the request parameters.
//! Each key is built by exactly one request; concurrent requests for the
//! same key wait for that build and then share the result.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use eddyscope_core::features::MorseEnsemble;
use eddyscope_core::grid::Ensemble;
use eddyscope_core::image::Image;
use eddyscope_core::labeling::Strategy;
use eddyscope_core::noise::{quartile_split, DistributionSummary, FitOptions, ModelKind};
use eddyscope_core::pmap::{ProbabilisticMap, ViewMode};
use eddyscope_core::render::{RenderConfig, RenderMode};
use serde::{Deserialize, Serialize};

use crate::io::{encode_png, encode_ppm, parse_camera, parse_tf, CameraJson, TfJson, DEFAULT_IMAGE_SIZE};
use crate::pipeline::{self, MorseSettings};

pub const DEFAULT_PORT: u16 = 8642;
pub const CACHE_HEADER: &str = "x-eddyscope-cache";
pub const SUMMARY_HEADER: &str = "x-eddyscope-summary";

/// Publish-once map: the first caller for a key builds the value while
/// later callers for that key block on the slot, not on the whole map.
pub struct Cache<K, V> {
    slots: Mutex<HashMap<K, Slot<V>>>,
}

type Slot<V> = Arc<Mutex<Option<Arc<V>>>>;

impl<K: Eq + Hash + Clone, V> Default for Cache<K, V> {
    fn default() -> Self {
        Self { slots: Mutex::new(HashMap::new()) }
    }
}

impl<K: Eq + Hash + Clone, V> Cache<K, V> {
    /// The value and whether it was already built. Failed builds are not
    /// stored.
    pub fn get_or_build<E>(&self, key: &K, build: impl FnOnce() -> Result<V, E>) -> Result<(Arc<V>, bool), E> {
        let slot = self.slots.lock().unwrap().entry(key.clone()).or_default().clone();
        let mut guard = slot.lock().unwrap();
        if let Some(v) = guard.as_ref() {
            return Ok((v.clone(), true));
        }
        let v = Arc::new(build()?);
        *guard = Some(v.clone());
        Ok((v, false))
    }

    pub fn clear(&self) {
        self.slots.lock().unwrap().clear();
    }

    pub fn len(&self) -> usize {
        self.slots.lock().unwrap().values().filter(|s| s.lock().unwrap().is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Time steps of one registered ensemble.
pub struct Dataset {
    pub steps: BTreeMap<u32, Ensemble>,
}

impl Dataset {
    pub fn new(steps: impl IntoIterator<Item = Ensemble>) -> Self {
        Self { steps: steps.into_iter().map(|e| (e.time_index(), e)).collect() }
    }

    fn step(&self, time: Option<u32>) -> Result<(u32, &Ensemble), ApiError> {
        match time {
            Some(t) => self.steps.get(&t).map(|e| (t, e)).ok_or_else(|| ApiError::not_found(format!("no time step {t}"))),
            None => self.steps.iter().next().map(|(t, e)| (*t, e)).ok_or_else(|| ApiError::not_found("empty dataset")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Part {
    Whole(ModelKind),
    Quartile(usize),
}

type SummaryKey = (String, u32, Part);
type MapKey = (String, u32, Strategy);

pub struct Session {
    pub datasets: BTreeMap<String, Dataset>,
    pub fit: FitOptions,
    pub morse: MorseSettings,
    summaries: Cache<SummaryKey, DistributionSummary>,
    complexes: Cache<(String, u32), MorseEnsemble>,
    maps: Cache<MapKey, ProbabilisticMap>,
    responses: Cache<String, Vec<u8>>,
}

impl Session {
    pub fn new(datasets: BTreeMap<String, Dataset>, fit: FitOptions, morse: MorseSettings) -> Self {
        Self {
            datasets,
            fit,
            morse,
            summaries: Cache::default(),
            complexes: Cache::default(),
            maps: Cache::default(),
            responses: Cache::default(),
        }
    }

    pub fn flush(&self) {
        self.summaries.clear();
        self.complexes.clear();
        self.maps.clear();
        self.responses.clear();
    }

    fn dataset(&self, name: &str) -> Result<&Dataset, ApiError> {
        self.datasets.get(name).ok_or_else(|| ApiError::not_found(format!("unknown dataset `{name}`")))
    }

    fn summary(&self, name: &str, time: Option<u32>, part: Part) -> Result<(Arc<DistributionSummary>, bool), ApiError> {
        let (t, e) = self.dataset(name)?.step(time)?;
        self.summaries.get_or_build(&(name.to_string(), t, part), || match part {
            Part::Whole(kind) => self.fit.fit(kind, e).map_err(ApiError::from),
            Part::Quartile(i) => {
                let [a, b, c] = quartile_split(e)?;
                Ok([a, b, c].into_iter().nth(i).expect("three parts"))
            }
        })
    }

    fn complex(&self, name: &str, time: Option<u32>) -> Result<(u32, Arc<MorseEnsemble>), ApiError> {
        let (t, e) = self.dataset(name)?.step(time)?;
        let (me, _) = self.complexes.get_or_build(&(name.to_string(), t), || self.morse.build(e).map_err(ApiError::from))?;
        Ok((t, me))
    }

    pub fn map(&self, name: &str, strategy: &str, time: Option<u32>) -> Result<Arc<ProbabilisticMap>, ApiError> {
        let strategy: Strategy =
            strategy.parse().map_err(|_| ApiError::not_found(format!("unknown strategy `{strategy}`")))?;
        let (t, me) = self.complex(name, time)?;
        let (pm, _) = self.maps.get_or_build(&(name.to_string(), t, strategy), || {
            self.morse.map(&me, strategy).map(|(_, pm)| pm).map_err(ApiError::from)
        })?;
        Ok(pm)
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(m: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, message: m.into() }
    }

    pub fn not_found(m: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, message: m.into() }
    }
}

impl From<eddyscope_core::Error> for ApiError {
    fn from(e: eddyscope_core::Error) -> Self {
        use eddyscope_core::Error as E;
        let status = match e {
            E::Argument(_) | E::Index(_) | E::Camera(_) | E::TransferFunction(_) => StatusCode::BAD_REQUEST,
            E::Selection { .. } | E::Fit(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type Shared = Arc<Session>;

pub fn router(session: Shared) -> Router {
    Router::new()
        .route("/api/datasets", get(datasets))
        .route("/api/render", post(render))
        .route("/api/view", get(view))
        .route("/api/query", get(query))
        .route("/api/persistence", get(persistence))
        .route("/api/flush", post(flush))
        .with_state(session)
}

pub async fn serve(session: Session, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(session))).await
}

/// Runs blocking numeric work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("worker panicked")
}

#[derive(Serialize)]
struct DatasetInfo {
    name: String,
    field: String,
    dims: [usize; 3],
    members: usize,
    times: Vec<u32>,
}

async fn datasets(State(s): State<Shared>) -> Json<Vec<DatasetInfo>> {
    Json(
        s.datasets
            .iter()
            .filter_map(|(name, d)| {
                let e = d.steps.values().next()?;
                let dims = e.dims();
                Some(DatasetInfo {
                    name: name.clone(),
                    field: e.field_name().to_string(),
                    dims: [dims.nx, dims.ny, dims.nz],
                    members: e.len(),
                    times: d.steps.keys().copied().collect(),
                })
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Png,
    Ppm,
}

impl ImageFormat {
    fn encode(self, img: &Image) -> Vec<u8> {
        match self {
            ImageFormat::Png => encode_png(img),
            ImageFormat::Ppm => encode_ppm(img),
        }
    }

    fn mime(self) -> &'static str {
        match self {
            ImageFormat::Png => "image/png",
            ImageFormat::Ppm => "image/x-portable-pixmap",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub dataset: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub tf: Option<serde_json::Value>,
    #[serde(default)]
    pub camera: Option<serde_json::Value>,
    #[serde(default)]
    pub time: Option<u32>,
    /// `lower`, `middle` or `upper`; replaces `model` with that quartile's
    /// uniform summary.
    #[serde(default)]
    pub quartile: Option<String>,
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub height: Option<usize>,
    #[serde(default)]
    pub step: Option<f64>,
    /// Monte Carlo draws per step; expected classification when absent.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub format: ImageFormat,
}

fn default_model() -> String {
    "mean".into()
}

/// Normalized form of a render request; its JSON is the cache key.
#[derive(Serialize)]
struct RenderKey<'a> {
    dataset: &'a str,
    time: u32,
    part: String,
    tf: Option<TfJson>,
    camera: Option<CameraJson>,
    width: Option<usize>,
    height: Option<usize>,
    step: f64,
    samples: Option<usize>,
    seed: u64,
    format: ImageFormat,
}

fn image_response(bytes: Arc<Vec<u8>>, format: ImageFormat, hit: bool, summary_hit: Option<bool>) -> Response {
    let mut r = (StatusCode::OK, bytes.as_ref().clone()).into_response();
    let h = r.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(format.mime()));
    h.insert(CACHE_HEADER, HeaderValue::from_static(if hit { "hit" } else { "miss" }));
    if let Some(s) = summary_hit {
        h.insert(SUMMARY_HEADER, HeaderValue::from_static(if s { "hit" } else { "miss" }));
    }
    r
}

async fn render(State(s): State<Shared>, body: axum::body::Bytes) -> Result<Response, ApiError> {
    let req: RenderRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("request: {e}")))?;
    blocking(move || render_blocking(&s, req)).await
}

fn render_blocking(s: &Session, req: RenderRequest) -> Result<Response, ApiError> {
    let (time, _) = s.dataset(&req.dataset)?.step(req.time)?;
    let part = match req.quartile.as_deref() {
        None => Part::Whole(req.model.parse().map_err(|e: eddyscope_core::Error| ApiError::bad_request(e.to_string()))?),
        Some("lower") => Part::Quartile(0),
        Some("middle") => Part::Quartile(1),
        Some("upper") => Part::Quartile(2),
        Some(q) => return Err(ApiError::bad_request(format!("quartile: expected lower, middle or upper, got `{q}`"))),
    };
    let tf = req.tf.as_ref().map(parse_tf).transpose().map_err(ApiError::bad_request)?;
    let camera = req.camera.as_ref().map(|c| parse_camera(c, req.width, req.height)).transpose().map_err(ApiError::bad_request)?;
    let config = RenderConfig { step: req.step.unwrap_or(RenderConfig::default().step), ..Default::default() };
    config.validate()?;
    let mode = match req.samples {
        None => RenderMode::Expected,
        Some(n) => RenderMode::MonteCarlo { seed: req.seed, samples: n },
    };
    if let RenderMode::MonteCarlo { samples: 0, .. } = mode {
        return Err(ApiError::bad_request("samples must be at least 1"));
    }
    let key = serde_json::to_string(&RenderKey {
        dataset: &req.dataset,
        time,
        part: format!("{part:?}"),
        tf: tf.as_ref().map(TfJson::of),
        camera: camera.as_ref().map(CameraJson::of),
        width: req.width,
        height: req.height,
        step: config.step,
        samples: req.samples,
        seed: req.seed,
        format: req.format,
    })
    .expect("serializable key");
    let mut summary_hit = None;
    let (bytes, hit) = s.responses.get_or_build(&key, || {
        let (summary, sh) = s.summary(&req.dataset, Some(time), part)?;
        summary_hit = Some(sh);
        let tf = tf.clone().unwrap_or_else(|| pipeline::default_tf(&summary));
        let camera = match camera {
            Some(c) => c,
            None => pipeline::default_camera(
                &summary,
                req.width.unwrap_or(DEFAULT_IMAGE_SIZE),
                req.height.unwrap_or(DEFAULT_IMAGE_SIZE),
            ),
        };
        let img = pipeline::render(&summary, &tf, &camera, &config, mode)?;
        Ok::<_, ApiError>(req.format.encode(&img))
    })?;
    Ok(image_response(bytes, req.format, hit, summary_hit))
}

#[derive(Debug, Deserialize)]
pub struct ViewParams {
    pub dataset: String,
    pub strategy: String,
    #[serde(default = "default_mode")]
    pub mode: String,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub time: Option<u32>,
    #[serde(default)]
    pub format: ImageFormat,
}

fn default_mode() -> String {
    "blend".into()
}

async fn view(State(s): State<Shared>, Query(p): Query<ViewParams>) -> Result<Response, ApiError> {
    blocking(move || {
        let mode: ViewMode = p.mode.parse().map_err(|e: eddyscope_core::Error| ApiError::bad_request(e.to_string()))?;
        let param = match mode {
            ViewMode::Entropy => p.tau.ok_or_else(|| ApiError::bad_request("entropy view needs tau"))?,
            ViewMode::Agreement => p.alpha.ok_or_else(|| ApiError::bad_request("agreement view needs alpha"))?,
            _ => 0.0,
        };
        let pm = s.map(&p.dataset, &p.strategy, p.time)?;
        let palette = palette_for(&pm);
        let key = format!("view|{}|{}|{:?}|{}|{:?}|{:?}", p.dataset, p.strategy, p.time, mode.name(), param.to_bits(), p.format);
        let (bytes, hit) = s.responses.get_or_build(&key, || {
            let img = pm.view(mode, &palette, param)?;
            Ok::<_, ApiError>(p.format.encode(&img))
        })?;
        Ok(image_response(bytes, p.format, hit, None))
    })
    .await
}

fn palette_for(pm: &ProbabilisticMap) -> Vec<[u8; 3]> {
    (0..pm.label_count()).map(eddyscope_core::pmap::palette_color).collect()
}

#[derive(Debug, Deserialize)]
pub struct QueryParams {
    pub dataset: String,
    pub strategy: String,
    /// Kept signed so negative pixels get a 400 rather than a parse error.
    pub x: i64,
    pub y: i64,
    pub time: Option<u32>,
}

async fn query(State(s): State<Shared>, Query(p): Query<QueryParams>) -> Result<Response, ApiError> {
    blocking(move || {
        let pm = s.map(&p.dataset, &p.strategy, p.time)?;
        if p.x < 0 || p.y < 0 || p.x as usize >= pm.width() || p.y as usize >= pm.height() {
            return Err(ApiError::bad_request(format!(
                "pixel ({}, {}) outside {}x{}",
                p.x,
                p.y,
                pm.width(),
                pm.height()
            )));
        }
        let q = pm.query(p.x as usize, p.y as usize, &palette_for(&pm))?;
        Ok(Json(pipeline::query_json(&q)).into_response())
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct PersistenceParams {
    pub dataset: String,
    pub time: Option<u32>,
}

async fn persistence(State(s): State<Shared>, Query(p): Query<PersistenceParams>) -> Result<Response, ApiError> {
    blocking(move || {
        let (_, me) = s.complex(&p.dataset, p.time)?;
        Ok(Json(pipeline::persistence_json(&me)).into_response())
    })
    .await
}

async fn flush(State(s): State<Shared>) -> StatusCode {
    s.flush();
    StatusCode::NO_CONTENT
}
