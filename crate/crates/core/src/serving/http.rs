//! JSON-over-HTTP front end for [`Engine`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use super::{CartEvent, Engine, EngineOptions, ModelTag, RankerBundle, XpIndex, DEFAULT_K, DEFAULT_MAX_PER_PT};
use crate::catalog::{load_catalog, Segment};
use crate::error::{Result, XpError};
use crate::ranker::{read_personas, PersonaMap, RankerModel};
use crate::retrieval::{read_candidates_jsonl, EmbeddingStore, SegmentFilter};

pub const SIMILAR_ITEMS: usize = 5;

fn default_host() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

fn default_max_per_pt() -> usize {
    DEFAULT_MAX_PER_PT
}

/// Service configuration, read from TOML. Relative paths resolve against
/// the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    pub catalog: PathBuf,
    /// Scored Item XP candidates (JSONL), grouped by anchor at load.
    pub candidates: PathBuf,
    pub checkpoint: PathBuf,
    pub store: PathBuf,
    #[serde(default)]
    pub personas: Option<PathBuf>,
    /// JSON category -> persona indices, or any JSON object with a
    /// `persona_map` field.
    #[serde(default)]
    pub persona_map: Option<PathBuf>,
    #[serde(default)]
    pub event_log: Option<PathBuf>,
    #[serde(default = "default_max_per_pt")]
    pub max_per_pt: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exclude_cart_pts: bool,
    /// Allowed browser origins; empty allows any.
    #[serde(default)]
    pub cors_origins: Vec<String>,
}

impl ServeConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ServeConfig = toml::from_str(&text).map_err(|e| XpError::ConfigInvalid(e.to_string()))?;
        if let Some(base) = path.parent() {
            cfg.resolve(base);
        }
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.catalog);
        fix(&mut self.candidates);
        fix(&mut self.checkpoint);
        fix(&mut self.store);
        for p in [&mut self.personas, &mut self.persona_map, &mut self.event_log].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn addr(&self) -> Result<SocketAddr> {
        format!("{}:{}", self.host, self.port)
            .parse()
            .map_err(|e| XpError::ConfigInvalid(format!("bad listen address: {e}")))
    }
}

pub struct AppState {
    pub engine: Engine,
    pub store: EmbeddingStore,
}

fn read_persona_map(path: &Path) -> Result<PersonaMap> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let inner = v.get("persona_map").cloned().unwrap_or(v);
    Ok(serde_json::from_value(inner)?)
}

/// Loads every artifact named by the config. A missing or unreadable
/// checkpoint is an error.
pub fn build_state(cfg: &ServeConfig) -> Result<AppState> {
    if !cfg.checkpoint.exists() {
        return Err(XpError::BadCheckpoint(format!("{} not found", cfg.checkpoint.display())));
    }
    let catalog = Arc::new(load_catalog(&cfg.catalog)?);
    let index = XpIndex::new(read_candidates_jsonl(&cfg.candidates)?);
    let model = RankerModel::load(&cfg.checkpoint)?;
    let bundle = RankerBundle::new(model, &catalog)?;
    let mut store = EmbeddingStore::load(&cfg.store)?;
    store.attach_segments(&catalog);
    let personas = match &cfg.personas {
        Some(p) => read_personas(p)?,
        None => HashMap::new(),
    };
    let map = match &cfg.persona_map {
        Some(p) => read_persona_map(p)?,
        None => PersonaMap::new(),
    };
    let options = EngineOptions {
        max_per_pt: cfg.max_per_pt,
        seed: cfg.seed,
        exclude_cart_pts: cfg.exclude_cart_pts,
    };
    let mut engine = Engine::new(catalog, index, options)
        .with_ranker(bundle)
        .with_personas(personas, map);
    if let Some(log) = &cfg.event_log {
        engine = engine.with_event_log(log)?;
    }
    Ok(AppState { engine, store })
}

pub struct ApiError(XpError);

impl From<XpError> for ApiError {
    fn from(e: XpError) -> Self {
        ApiError(e)
    }
}

fn status_of(e: &XpError) -> StatusCode {
    match e {
        XpError::UnknownCart(_) | XpError::UnknownItem(_) => StatusCode::NOT_FOUND,
        XpError::ConfigInvalid(_)
        | XpError::OutOfRange(_)
        | XpError::DimensionMismatch { .. }
        | XpError::MalformedRecord { .. }
        | XpError::Json(_) => StatusCode::BAD_REQUEST,
        XpError::ModelUnavailable => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.0.code(), "message": self.0.to_string() });
        (status_of(&self.0), Json(body)).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(XpError::ConfigInvalid(msg.into()))
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

async fn healthz(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "items": st.engine.catalog().len(),
        "carts": st.engine.cart_count(),
        "ranker": st.engine.has_ranker(),
    }))
}

async fn post_event(
    State(st): State<Arc<AppState>>,
    UrlPath(cart_id): UrlPath<String>,
    body: std::result::Result<Json<CartEvent>, JsonRejection>,
) -> ApiResult<super::CartSnapshot> {
    let Json(event) = body.map_err(|e| bad_request(e.body_text()))?;
    Ok(Json(st.engine.on_cart_event(&cart_id, &event)?))
}

async fn get_cart(State(st): State<Arc<AppState>>, UrlPath(cart_id): UrlPath<String>) -> ApiResult<super::CartSnapshot> {
    Ok(Json(st.engine.cart(&cart_id)?))
}

fn parse_param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> std::result::Result<Option<T>, ApiError> {
    q.get(key)
        .map(|v| v.parse::<T>().map_err(|_| bad_request(format!("invalid `{key}`: {v}"))))
        .transpose()
}

async fn get_recommendations(
    State(st): State<Arc<AppState>>,
    UrlPath(cart_id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<super::Carousel> {
    let k = parse_param::<usize>(&q, "k")?.unwrap_or(DEFAULT_K);
    let model = parse_param::<ModelTag>(&q, "model")?.unwrap_or(ModelTag::Ranker);
    let explain = parse_param::<bool>(&q, "explain")?.unwrap_or(false);
    let max_per_pt = parse_param::<usize>(&q, "max_per_pt")?;
    if max_per_pt == Some(0) {
        return Err(bad_request("max_per_pt must be positive"));
    }
    Ok(Json(st.engine.recommend(&cart_id, k, model, explain, max_per_pt)?))
}

async fn get_item(State(st): State<Arc<AppState>>, UrlPath(item_id): UrlPath<String>) -> ApiResult<serde_json::Value> {
    let item = st.engine.catalog().require(&item_id)?.clone();
    let mut similar = Vec::new();
    if let Some(v) = st.store.vector(&item_id) {
        let filter = match item.segment {
            Segment::Og => SegmentFilter::Og,
            Segment::Gm => SegmentFilter::Gm,
        };
        for (id, score) in st.store.knn(&v, SIMILAR_ITEMS + 1, filter)? {
            if id != item_id && similar.len() < SIMILAR_ITEMS {
                similar.push(json!({ "item_id": id, "score": score }));
            }
        }
    }
    let candidates = st.engine.index.candidates(&item_id).len();
    Ok(Json(json!({
        "item": item,
        "popularity": st.engine.catalog().popularity(&item_id),
        "xp_candidates": candidates,
        "similar": similar,
    })))
}

fn cors(origins: &[String]) -> Result<CorsLayer> {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.is_empty() {
        return Ok(layer.allow_origin(Any));
    }
    let list = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| XpError::ConfigInvalid(format!("bad origin `{o}`"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(layer.allow_origin(AllowOrigin::list(list)))
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Result<Router> {
    Ok(Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/carts/:id/events", post(post_event))
        .route("/v1/carts/:id/recommendations", get(get_recommendations))
        .route("/v1/carts/:id", get(get_cart))
        .route("/v1/items/:id", get(get_item))
        .layer(cors(cors_origins)?)
        .with_state(state))
}

/// Runs the service until ctrl-c.
pub async fn serve(cfg: ServeConfig) -> Result<()> {
    let state = Arc::new(build_state(&cfg)?);
    let app = router(state, &cfg.cors_origins)?;
    let listener = tokio::net::TcpListener::bind(cfg.addr()?).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
