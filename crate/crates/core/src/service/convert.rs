//! Batch conversion of box-annotated datasets into mask datasets.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataio::manifest::{relative_to, write_atomic};
use crate::dataio::{load_manifest_lenient, write_mask, ConvertedInstance, ConvertedRecord};
use crate::error::{Error, Result};
use crate::evaluation::binarize;
use crate::model::BackboneBundle;

/// File name of the manifest written next to the masks.
pub const CONVERTED_MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvertOptions {
    /// Probability threshold for the binary masks.
    pub threshold: f64,
    /// Instances whose predicted IoU score is below this are left out.
    pub min_iou: Option<f64>,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_iou: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvertSummary {
    pub manifest_path: PathBuf,
    pub images: usize,
    pub masks_written: usize,
    /// Instances dropped by the IoU-score filter.
    pub filtered: usize,
    /// Instances whose predicted mask came out empty.
    pub empty: usize,
    /// Records or images that could not be processed.
    pub errors: Vec<String>,
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Predicts one mask per annotated box and writes 0/255 mask files plus a
/// manifest that references them, with each instance's IoU score.
pub fn convert_manifest(
    bundle: &BackboneBundle,
    manifest_path: &Path,
    out_dir: &Path,
    options: ConvertOptions,
) -> Result<ConvertSummary> {
    if !(options.threshold > 0.0 && options.threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {} outside (0, 1)", options.threshold)));
    }
    let (manifest, skipped) = load_manifest_lenient(manifest_path)?;
    let mut summary = ConvertSummary {
        manifest_path: out_dir.join(CONVERTED_MANIFEST),
        images: 0,
        masks_written: 0,
        filtered: 0,
        empty: 0,
        errors: skipped.iter().map(|e| e.to_string()).collect(),
    };
    let mask_dir = out_dir.join("masks");
    std::fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;

    let mut lines = Vec::new();
    for record in &manifest.records {
        let pixels = match record.load_pixels() {
            Ok(p) => p,
            Err(e) => {
                log::error!("skipping {}: {e}", record.id);
                summary.errors.push(format!("{}: {e}", record.id));
                continue;
            }
        };
        let (embedding, transform) = bundle.embed(&pixels)?;
        let mut instances = Vec::new();
        for (k, inst) in record.instances.iter().enumerate() {
            let (probs, iou) = bundle.predict_box(&embedding, &transform, inst.bbox)?;
            let iou = iou as f64;
            if options.min_iou.is_some_and(|min| iou < min) {
                summary.filtered += 1;
                continue;
            }
            let mask = binarize(&probs, options.threshold)?;
            if mask.is_empty() {
                log::warn!("{} instance {k}: predicted mask is empty, skipped", record.id);
                summary.empty += 1;
                continue;
            }
            let name = format!("{}_{k}.png", file_stem_for(&record.id));
            write_mask(&mask_dir.join(&name), &mask)?;
            summary.masks_written += 1;
            instances.push(ConvertedInstance {
                class: inst.class,
                mask_path: format!("masks/{name}"),
                iou_score: iou,
            });
        }
        let line = ConvertedRecord {
            id: record.id.clone(),
            image_path: relative_to(&record.image_path, out_dir),
            split: record.split,
            instances,
        };
        serde_json::to_writer(&mut lines, &line)?;
        lines.push(b'\n');
        summary.images += 1;
    }
    if summary.images == 0 {
        return Err(Error::NoRecords);
    }
    write_atomic(&summary.manifest_path, &lines)?;
    log::info!(
        "converted {} images: {} masks, {} filtered, {} empty, {} errors",
        summary.images,
        summary.masks_written,
        summary.filtered,
        summary.empty,
        summary.errors.len()
    );
    Ok(summary)
}
