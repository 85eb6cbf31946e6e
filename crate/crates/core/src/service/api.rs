//! HTTP routes of the inference service.

use std::io::Cursor;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, JsonRejection};
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cache::{EmbeddingCache, EmbeddingCacheEntry};
use super::rle::RleMask;
use crate::domain::BoundingBox;
use crate::evaluation::binarize;
use crate::model::BackboneBundle;

/// Shared, immutable-at-serve-time service state.
pub struct AppState {
    pub bundle: Arc<BackboneBundle>,
    pub cache: EmbeddingCache,
    pub max_pixels: u64,
    pub config_hash: String,
}

impl AppState {
    pub fn new(bundle: BackboneBundle, cache_bytes: usize, max_pixels: u64) -> Self {
        let config_hash = bundle.config.hash();
        Self {
            bundle: Arc::new(bundle),
            cache: EmbeddingCache::new(cache_bytes),
            max_pixels,
            config_hash,
        }
    }
}

/// Error body: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub config_hash: String,
    pub cached_images: usize,
    pub cache_bytes: usize,
    pub encodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    /// Whether the embedding was already cached.
    pub cached: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskFormat {
    /// Binary mask at `threshold`, run-length encoded.
    #[default]
    Rle,
    /// Raw probabilities.
    Prob,
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub image_id: String,
    /// `[x_min, y_min, x_max, y_max]` in original image pixels, inclusive.
    pub boxes: Vec<[i64; 4]>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub format: MaskFormat,
}

/// Row-major probabilities as base64 of little-endian `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityGrid {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub dtype: String,
    pub data: String,
}

impl ProbabilityGrid {
    pub fn decode(&self) -> Option<Vec<f32>> {
        let bytes = base64::engine::general_purpose::STANDARD.decode(&self.data).ok()?;
        if bytes.len() != self.size[0] * self.size[1] * 4 {
            return None;
        }
        Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

/// Result for one requested box: a mask or an error, never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskResult {
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rle: Option<RleMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<ProbabilityGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub image_id: String,
    pub masks: Vec<MaskResult>,
    /// Same order as `masks`; `null` where that box failed.
    pub iou_scores: Vec<Option<f64>>,
}

/// Content hash used as the image id.
pub fn image_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Builds the router over shared state.
pub fn router(state: Arc<AppState>, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/images", post(upload))
        .route("/segment", post(segment))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

async fn health(State(st): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        config_hash: st.config_hash.clone(),
        cached_images: st.cache.len(),
        cache_bytes: st.cache.bytes(),
        encodes: st.cache.encode_count(),
    })
}

async fn upload(
    State(st): State<Arc<AppState>>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<UploadResponse>, ApiError> {
    let body = body.map_err(|e| ApiError::new(e.status(), "payload_too_large", e.body_text()))?;
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_image", "empty upload"));
    }
    let (w, h) = image::ImageReader::new(Cursor::new(&body[..]))
        .with_guessed_format()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_image", e.to_string()))?
        .into_dimensions()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_image", e.to_string()))?;
    let pixels = w as u64 * h as u64;
    if pixels > st.max_pixels {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image_too_large",
            format!("{w}x{h} image exceeds the {} pixel limit", st.max_pixels),
        ));
    }
    let id = image_id(&body);
    let bundle = st.bundle.clone();
    let key = id.clone();
    let (entry, cached) = st
        .cache
        .get_or_encode(&id, || async move {
            tokio::task::spawn_blocking(move || {
                let img = image::load_from_memory(&body)
                    .map_err(|e| crate::Error::InvalidArgument(format!("undecodable image: {e}")))?
                    .to_rgb8();
                let (embedding, transform) = bundle.embed(&img)?;
                Ok(EmbeddingCacheEntry::new(key, embedding, transform))
            })
            .await
            .map_err(|e| crate::Error::InvalidArgument(format!("encoder task failed: {e}")))?
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_image", e.to_string()))?;
    log::info!("image {id} ({w}x{h}) {}", if cached { "cache hit" } else { "encoded" });
    Ok(Json(UploadResponse {
        image_id: id,
        height: entry.transform.src_height,
        width: entry.transform.src_width,
        cached,
    }))
}

async fn segment(
    State(st): State<Arc<AppState>>,
    payload: Result<Json<SegmentRequest>, JsonRejection>,
) -> Result<Json<SegmentResponse>, ApiError> {
    let Json(req) = payload.map_err(|e| ApiError::new(e.status(), "invalid_request", e.body_text()))?;
    if req.boxes.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty_boxes", "at least one box is required"));
    }
    if !(req.threshold > 0.0 && req.threshold < 1.0) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_threshold",
            format!("threshold {} outside (0, 1)", req.threshold),
        ));
    }
    let entry = st.cache.get(&req.image_id).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_image",
            format!("image `{}` is not cached; upload it to /images first", req.image_id),
        )
    })?;
    let bundle = st.bundle.clone();
    let masks = tokio::task::spawn_blocking(move || {
        req.boxes
            .iter()
            .map(|&b| segment_box(&bundle, &entry, b, req.threshold, req.format))
            .collect::<Vec<_>>()
    })
    .await
    .map_err(|e| ApiError::internal(format!("decoder task failed: {e}")))?;
    let iou_scores = masks.iter().map(|m| m.iou_score).collect();
    Ok(Json(SegmentResponse {
        image_id: req.image_id,
        masks,
        iou_scores,
    }))
}

fn segment_box(
    bundle: &BackboneBundle,
    entry: &EmbeddingCacheEntry,
    raw: [i64; 4],
    threshold: f64,
    format: MaskFormat,
) -> MaskResult {
    let failed = |code: &str, message: String| MaskResult {
        bbox: raw,
        iou_score: None,
        rle: None,
        probabilities: None,
        error: Some(ErrorBody {
            code: code.to_string(),
            message,
        }),
    };
    let b = match BoundingBox::try_from(raw) {
        Ok(b) => b,
        Err(e) => return failed("invalid_box", e.to_string()),
    };
    let (h, w) = (entry.transform.src_height, entry.transform.src_width);
    if !b.fits(h, w) {
        return failed("box_out_of_bounds", format!("box {b} outside {h}x{w} image"));
    }
    let (probs, iou) = match bundle.predict_box(&entry.embedding, &entry.transform, b) {
        Ok(r) => r,
        Err(e) => return failed("prediction_failed", e.to_string()),
    };
    let mut out = MaskResult {
        bbox: raw,
        iou_score: Some(iou as f64),
        rle: None,
        probabilities: None,
        error: None,
    };
    match format {
        MaskFormat::Rle => match binarize(&probs, threshold) {
            Ok(mask) => out.rle = Some(RleMask::encode(&mask)),
            Err(e) => return failed("invalid_threshold", e.to_string()),
        },
        MaskFormat::Prob => {
            let bytes: Vec<u8> = probs.as_slice().iter().flat_map(|&p| (p as f32).to_le_bytes()).collect();
            out.probabilities = Some(ProbabilityGrid {
                size: [h, w],
                dtype: "f32le".into(),
                data: base64::engine::general_purpose::STANDARD.encode(bytes),
            });
        }
    }
    out
}
