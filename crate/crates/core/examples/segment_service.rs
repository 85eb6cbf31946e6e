//! Drives the HTTP API in process: upload an image, request masks for two
//! boxes and decode the run-length encoded result.
//!
//! cargo run --release --example segment_service

use std::io::Cursor;
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use image::{ImageFormat, Rgb, RgbImage};
use pavesam::model::{BackboneBundle, BackboneConfig};
use pavesam::service::{router, AppState, SegmentResponse, UploadResponse, DEFAULT_MAX_BODY_BYTES, DEFAULT_MAX_PIXELS};
use serde_json::json;
use tower::ServiceExt;

async fn call(app: &axum::Router, req: Request<Body>) -> anyhow::Result<(u16, Vec<u8>)> {
    let res = app.clone().oneshot(req).await?;
    let status = res.status().as_u16();
    Ok((status, res.into_body().collect().await?.to_bytes().to_vec()))
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let bundle = BackboneBundle::random(BackboneConfig::surrogate())?;
    let state = Arc::new(AppState::new(bundle, 64 << 20, DEFAULT_MAX_PIXELS));
    let app = router(state, DEFAULT_MAX_BODY_BYTES);

    let img = RgbImage::from_fn(160, 96, |x, y| if (40..44).contains(&y) && x > 20 { Rgb([40, 40, 40]) } else { Rgb([170, 170, 170]) });
    let mut png = Vec::new();
    img.write_to(&mut Cursor::new(&mut png), ImageFormat::Png)?;

    let (_, body) = call(&app, Request::post("/images").body(Body::from(png))?).await?;
    let upload: UploadResponse = serde_json::from_slice(&body)?;
    println!("uploaded {} ({}x{})", upload.image_id, upload.width, upload.height);

    let request = json!({"image_id": upload.image_id, "boxes": [[20, 36, 159, 47], [0, 0, 30, 30]]});
    let (status, body) = call(
        &app,
        Request::post("/segment")
            .header("content-type", "application/json")
            .body(Body::from(request.to_string()))?,
    )
    .await?;
    let response: SegmentResponse = serde_json::from_slice(&body)?;
    println!("segment -> HTTP {status}");
    for m in &response.masks {
        if let Some(rle) = &m.rle {
            let mask = rle.decode()?;
            println!(
                "box {:?}: {} runs, {} foreground px, predicted IoU {:?}",
                m.bbox,
                rle.counts.len(),
                mask.count_ones(),
                m.iou_score
            );
        }
    }

    let (_, body) = call(&app, Request::get("/health").body(Body::empty())?).await?;
    println!("health: {}", String::from_utf8(body)?);
    Ok(())
}
