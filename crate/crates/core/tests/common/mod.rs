#![allow(dead_code)]

use std::path::Path;

use pavesam::dataio::load_manifest;
use pavesam::dataio::synthetic::{write_toy_dataset, ToyConfig};
use pavesam::dataio::DatasetManifest;
use pavesam::model::{BackboneBundle, BackboneConfig, Component};
use pavesam::nn::Module;
use pavesam::training::{build_batches, PreparedImage};

/// Learning rate used for the toy fine-tuning runs.
pub const TOY_LR: f64 = 1e-3;

pub fn toy_manifest(dir: &Path, n_images: usize, train_fraction: f64, seed: u64) -> DatasetManifest {
    let cfg = ToyConfig {
        n_images,
        train_fraction,
        seed,
        ..Default::default()
    };
    load_manifest(&write_toy_dataset(dir, &cfg).unwrap()).unwrap()
}

pub fn surrogate() -> BackboneBundle {
    BackboneBundle::random(BackboneConfig::surrogate()).unwrap()
}

pub fn prepared(bundle: &BackboneBundle, manifest: &DatasetManifest) -> Vec<PreparedImage> {
    build_batches(manifest, 0, 0)
        .unwrap()
        .iter()
        .map(|e| PreparedImage::new(bundle, &e.load(manifest).unwrap()).unwrap())
        .collect()
}

pub fn digests(bundle: &BackboneBundle) -> Vec<String> {
    Component::ALL.iter().map(|&c| bundle.component_digest(c)).collect()
}

/// Reads one scalar of a named parameter.
pub fn param_value(bundle: &BackboneBundle, name: &str, index: usize) -> f32 {
    let mut out = None;
    bundle.visit("", &mut |n, p| {
        if n == name {
            out = Some(p.value.as_slice().unwrap()[index]);
        }
    });
    out.unwrap_or_else(|| panic!("no parameter {name}"))
}

pub fn param_grad(bundle: &BackboneBundle, name: &str, index: usize) -> Option<f32> {
    let mut out = None;
    bundle.visit("", &mut |n, p| {
        if n == name {
            out = p.grad.as_ref().map(|g| g.as_slice().unwrap()[index]);
        }
    });
    out
}

pub fn set_param(bundle: &mut BackboneBundle, name: &str, index: usize, v: f32) {
    let mut found = false;
    bundle.visit_mut("", &mut |n, p| {
        if n == name {
            p.value.as_slice_mut().unwrap()[index] = v;
            found = true;
        }
    });
    assert!(found, "no parameter {name}");
}

/// Per-image (fine-tuned, baseline) DSC pairs on 15 test images, with the
/// published average improvement.
pub const DSC_PAIRS_15: [(f64, f64); 15] = [
    (0.7773, 0.5808),
    (0.4645, 0.1445),
    (0.7179, 0.1872),
    (0.7186, 0.3083),
    (0.5607, 0.1195),
    (0.6809, 0.227),
    (0.8148, 0.7559),
    (0.7387, 0.5553),
    (0.6085, 0.5793),
    (0.6672, 0.3708),
    (0.3636, 0.0866),
    (0.7448, 0.383),
    (0.6580, 0.2561),
    (0.4062, 0.0704),
    (0.5170, 0.138),
];
pub const AVERAGE_GAIN_15: f64 = 0.3117;

/// Per-image DSC pairs on 11 Crack500 images.
pub const DSC_PAIRS_11: [(f64, f64); 11] = [
    (0.6156, 0.0001),
    (0.7760, 0.2291),
    (0.7140, 0.4374),
    (0.3172, 0.1180),
    (0.6446, 0.1468),
    (0.5124, 0.1201),
    (0.7740, 0.1584),
    (0.3224, 0.1828),
    (0.2164, 0.1349),
    (0.5196, 0.2329),
    (0.464, 0.1870),
];
pub const AVERAGE_GAIN_11: f64 = 0.35715;

/// Two reports holding only the DSC column of each pair.
pub fn dsc_reports(pairs: &[(f64, f64)]) -> (pavesam::evaluation::MetricReport, pavesam::evaluation::MetricReport) {
    use pavesam::evaluation::{InstanceMetrics, MetricReport, MetricSummary};
    let side = |pick: fn(&(f64, f64)) -> f64| {
        let per = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| InstanceMetrics {
                id: format!("img{i:02}#0"),
                class: pavesam::DistressClass::Longitudinal,
                metrics: MetricSummary {
                    dsc: pick(p),
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0,
                    iou_foreground: 0.0,
                    iou_mean: 0.0,
                },
            })
            .collect();
        MetricReport::from_instances(per, 0.5)
    };
    (side(|p| p.0), side(|p| p.1))
}
