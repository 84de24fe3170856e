//! HTTP API behind the curation UI. All state lives in the manifest file;
//! writes are serialized through one lock and guarded by the manifest
//! version when the client sends one.

use std::collections::HashMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use carbq_core::dataset::{manifest_root, resolve, Manifest, ManifestEntry};
use carbq_core::imageio::GrayImage;
use carbq_core::masking::curated_mask;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub const PGM_CONTENT_TYPE: &str = "image/x-portable-graymap";
pub const CARBIDE_PIXELS_HEADER: &str = "x-carbide-pixels";

pub struct AppState {
    manifest_path: PathBuf,
    root: PathBuf,
    manifest: Mutex<Manifest>,
}

impl AppState {
    pub fn open(manifest_path: PathBuf) -> carbq_core::Result<Arc<Self>> {
        let manifest = Manifest::load(&manifest_path)?;
        Ok(Arc::new(Self {
            root: manifest_root(&manifest_path),
            manifest_path,
            manifest: Mutex::new(manifest),
        }))
    }

    fn lock(&self) -> MutexGuard<'_, Manifest> {
        // A panic mid-handler leaves the manifest as last saved, so a
        // poisoned lock is still safe to reuse.
        self.manifest.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown image id `{id}`"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageListItem {
    pub id: String,
    pub class_label: String,
    pub curated: bool,
    pub chosen_threshold: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageList {
    pub version: u64,
    pub thresholds: Vec<u8>,
    pub images: Vec<ImageListItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub curated: usize,
    pub total: usize,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRequest {
    /// Wider than a pixel intensity so out-of-range values reach the set check.
    pub threshold: i64,
    /// Manifest version the client last saw; omitted means last write wins.
    #[serde(default)]
    pub version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResponse {
    pub id: String,
    pub threshold: u8,
    pub curated: bool,
    pub version: u64,
}

fn item(e: &ManifestEntry) -> ImageListItem {
    ImageListItem {
        id: e.id.clone(),
        class_label: e.class_label.to_string(),
        curated: e.is_curated(),
        chosen_threshold: e.chosen_threshold,
    }
}

fn pgm(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, PGM_CONTENT_TYPE)], bytes).into_response()
}

fn entry_image(state: &AppState, id: &str) -> ApiResult<(ManifestEntry, GrayImage)> {
    let e = state.lock().entry(id).map_err(|_| ApiError::not_found(id))?.clone();
    let img = GrayImage::load(&resolve(&state.root, &e.image_path)).map_err(ApiError::internal)?;
    Ok((e, img))
}

async fn list_images(State(state): State<Arc<AppState>>) -> Json<ImageList> {
    let m = state.lock();
    Json(ImageList {
        version: m.version,
        thresholds: m.default_threshold_set.values().to_vec(),
        images: m.entries.iter().map(item).collect(),
    })
}

async fn image_raster(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let (e, _) = entry_image(&state, &id)?;
    // Serve the stored bytes untouched; decoding above validated them.
    let bytes = std::fs::read(resolve(&state.root, &e.image_path)).map_err(ApiError::internal)?;
    Ok(pgm(bytes))
}

async fn image_meta(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let (e, img) = entry_image(&state, &id)?;
    Ok(Json(json!({
        "id": e.id,
        "width": img.width(),
        "height": img.height(),
        "class_label": e.class_label,
        "magnification": e.magnification,
        "nm_per_px": e.nm_per_px,
        "chosen_threshold": e.chosen_threshold,
        "split": e.split,
    })))
}

fn parse_threshold(raw: Option<&str>) -> ApiResult<i64> {
    let raw = raw.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing query parameter `t`"))?;
    raw.parse::<i64>()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("threshold `{raw}` is not an integer")))
}

fn check_threshold(m: &Manifest, t: i64) -> ApiResult<u8> {
    u8::try_from(t)
        .ok()
        .filter(|&t| m.default_threshold_set.contains(t))
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("threshold {t} is not in the threshold set")))
}

async fn candidate_mask(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let t = {
        let m = state.lock();
        m.entry(&id).map_err(|_| ApiError::not_found(&id))?;
        check_threshold(&m, parse_threshold(q.get("t").map(String::as_str))?)?
    };
    let (_, img) = entry_image(&state, &id)?;
    let mask = curated_mask(&img, t);
    let mut resp = pgm(mask.encode_pgm());
    resp.headers_mut()
        .insert(CARBIDE_PIXELS_HEADER, mask.carbide_count().to_string().parse().expect("digits"));
    Ok(resp)
}

async fn select(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SelectionRequest>, JsonRejection>,
) -> ApiResult<Json<SelectionResponse>> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
    let mut m = state.lock();
    m.entry(&id).map_err(|_| ApiError::not_found(&id))?;
    let t = check_threshold(&m, req.threshold)?;
    if let Some(v) = req.version {
        if v != m.version {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("manifest is at version {}, request was based on {v}; reload and retry", m.version),
            ));
        }
    }
    // Work on a copy so a failed write leaves memory and disk in agreement.
    let mut next = m.clone();
    next.record_curation(&state.root, &id, t).map_err(ApiError::internal)?;
    next.save(&state.manifest_path).map_err(ApiError::internal)?;
    *m = next;
    Ok(Json(SelectionResponse {
        id,
        threshold: t,
        curated: true,
        version: m.version,
    }))
}

async fn progress(State(state): State<Arc<AppState>>) -> Json<Progress> {
    let m = state.lock();
    Json(Progress {
        curated: m.curated_count(),
        total: m.entries.len(),
        version: m.version,
    })
}

async fn unknown_api() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

/// The API router; static UI assets are served from `static_dir` when given.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/images", get(list_images))
        .route("/api/images/{id}", get(image_raster))
        .route("/api/images/{id}/meta", get(image_meta))
        .route("/api/images/{id}/mask", get(candidate_mask))
        .route("/api/images/{id}/selection", post(select))
        .route("/api/progress", get(progress))
        .route("/api/{*rest}", get(unknown_api).post(unknown_api))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves on localhost until interrupted.
pub async fn serve(state: Arc<AppState>, port: u16, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("curate: listening on http://{addr}");
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
