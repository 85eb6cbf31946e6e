mod common;

use common::*;
use pavesam::evaluation::{evaluate_dataset, improvement_table, render_comparison, ComparisonRow, MetricReport};
use pavesam::Split;

#[test]
fn fifteen_image_average_improvement() {
    let (a, b) = dsc_reports(&DSC_PAIRS_15);
    let t = improvement_table(&a, &b).unwrap();
    assert_eq!(t.rows.len(), 15);
    assert!((t.average_delta - AVERAGE_GAIN_15).abs() <= 5e-4, "{}", t.average_delta);
}

#[test]
fn eleven_image_average_improvement() {
    let (a, b) = dsc_reports(&DSC_PAIRS_11);
    let t = improvement_table(&a, &b).unwrap();
    assert_eq!(t.rows.len(), 11);
    assert!((t.average_delta - AVERAGE_GAIN_11).abs() <= 5e-4, "{}", t.average_delta);
}

#[test]
fn comparison_renders_published_row_to_three_decimals() {
    let row = ComparisonRow {
        model: "PaveSAM".into(),
        precision: 0.714,
        recall: 0.764,
        f1: 0.703,
        iou_foreground: 0.578,
        iou_mean: 0.578,
    };
    let table = render_comparison([row]).unwrap().to_table();
    let line = table.lines().nth(1).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields[..5], ["PaveSAM", "0.714", "0.764", "0.703", "0.578"]);
}

#[test]
fn untrained_surrogate_metrics_are_in_range_and_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = toy_manifest(&dir.path().join("data"), 4, 0.5, 21);
    let bundle = surrogate();
    let report = evaluate_dataset(&bundle, &manifest, Split::Test, 0.5).unwrap();
    assert!(!report.per_instance.is_empty());
    for m in &report.per_instance {
        for v in m.metrics.values() {
            assert!(v.is_finite() && (0.0..=1.0).contains(&v), "{} {v}", m.id);
        }
    }
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let again: MetricReport = evaluate_dataset(&bundle, &manifest, Split::Test, 0.5).unwrap();
        let (jsonl, table) = again.write(&dir.path().join(run)).unwrap();
        outputs.push((std::fs::read(jsonl).unwrap(), std::fs::read(table).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn missing_reference_mask_is_recorded_as_an_instance_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    image::RgbImage::from_pixel(20, 20, image::Rgb([90, 90, 90])).save(&img).unwrap();
    let m = dir.path().join("m.jsonl");
    std::fs::write(
        &m,
        r#"{"id":"a","image_path":"a.png","split":"test","instances":[{"class":"patch","box":[2,2,9,9]},{"class":"patch","polygon":[[3,3],[12,3],[12,12],[3,12]]}]}"#,
    )
    .unwrap();
    let manifest = pavesam::dataio::load_manifest(&m).unwrap();
    let report = evaluate_dataset(&surrogate(), &manifest, Split::Test, 0.5).unwrap();
    assert_eq!(report.per_instance.len(), 1);
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].id, "a#0");
}
