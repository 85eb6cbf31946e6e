//! Inference service: an HTTP API over a cached-embedding box-to-mask
//! predictor, and batch conversion of box-annotated datasets.

pub mod api;
pub mod cache;
pub mod convert;
pub mod rle;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{
    image_id, router, AppState, ErrorBody, HealthResponse, MaskFormat, MaskResult, ProbabilityGrid, SegmentRequest,
    SegmentResponse, UploadResponse,
};
pub use cache::{EmbeddingCache, EmbeddingCacheEntry};
pub use convert::{convert_manifest, ConvertOptions, ConvertSummary, CONVERTED_MANIFEST};
pub use rle::RleMask;

use crate::error::{Error, Result};
use crate::model::BackboneBundle;

/// Environment variable holding the embedding cache budget in bytes.
pub const CACHE_ENV: &str = "PAVESAM_CACHE_BYTES";
pub const DEFAULT_CACHE_BYTES: usize = 1 << 30;
pub const DEFAULT_MAX_PIXELS: u64 = 50_000_000;
pub const DEFAULT_MAX_BODY_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub cache_bytes: usize,
    /// Largest accepted upload, in pixels.
    pub max_pixels: u64,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            cache_bytes: cache_bytes_from_env().unwrap_or(DEFAULT_CACHE_BYTES),
            max_pixels: DEFAULT_MAX_PIXELS,
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
        }
    }
}

/// Reads the cache budget from [`CACHE_ENV`], ignoring unparsable values.
pub fn cache_bytes_from_env() -> Option<usize> {
    let raw = std::env::var(CACHE_ENV).ok()?;
    match raw.trim().parse() {
        Ok(v) => Some(v),
        Err(_) => {
            log::warn!("ignoring {CACHE_ENV}={raw:?}: not a byte count");
            None
        }
    }
}

/// Binds the listener and serves until interrupted.
pub async fn serve(bundle: BackboneBundle, config: ServiceConfig) -> Result<()> {
    let addr = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| Error::Service(format!("cannot bind {addr}: {e}")))?;
    let local: SocketAddr = listener.local_addr().map_err(|e| Error::Service(e.to_string()))?;
    let state = Arc::new(AppState::new(bundle, config.cache_bytes, config.max_pixels));
    log::info!(
        "serving on http://{local} (config {}, cache budget {} bytes, device {})",
        state.config_hash,
        config.cache_bytes,
        crate::profiler::device_descriptor()
    );
    axum::serve(listener, router(state, config.max_body_bytes))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
        .map_err(|e| Error::Service(e.to_string()))
}
