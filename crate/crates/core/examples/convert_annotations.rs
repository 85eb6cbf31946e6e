//! Turns box-only annotations into 0/255 mask files with a converted
//! manifest, the way the annotation tool consumes them.
//!
//! cargo run --release --example convert_annotations

use pavesam::dataio::load_manifest;
use pavesam::dataio::synthetic::{write_toy_dataset, ToyConfig};
use pavesam::model::{BackboneBundle, BackboneConfig};
use pavesam::service::{convert_manifest, ConvertOptions};
use serde_json::json;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let toy = load_manifest(&write_toy_dataset(
        dir.path(),
        &ToyConfig {
            n_images: 3,
            ..Default::default()
        },
    )?)?;

    // keep only the boxes, as a detector or a quick labeling pass would
    let mut lines = String::new();
    for r in &toy.records {
        let instances: Vec<_> = r
            .instances
            .iter()
            .map(|i| json!({"class": i.class, "box": i.bbox.to_array()}))
            .collect();
        let image = r.image_path.strip_prefix(dir.path())?;
        lines.push_str(&json!({"id": r.id, "image_path": image, "instances": instances}).to_string());
        lines.push('\n');
    }
    let boxes = dir.path().join("boxes.jsonl");
    std::fs::write(&boxes, lines)?;

    let bundle = BackboneBundle::random(BackboneConfig::surrogate())?;
    let out = dir.path().join("converted");
    let summary = convert_manifest(&bundle, &boxes, &out, ConvertOptions::default())?;
    println!(
        "{} images, {} masks, {} empty, {} errors",
        summary.images,
        summary.masks_written,
        summary.empty,
        summary.errors.len()
    );
    print!("{}", std::fs::read_to_string(&summary.manifest_path)?);
    Ok(())
}
