//! Dataset-level evaluation, improvement tables and comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{binarize, confusion, MetricSummary};
use crate::dataio::manifest::write_atomic;
use crate::dataio::DatasetManifest;
use crate::domain::{DistressClass, Split};
use crate::error::{Error, Result};
use crate::model::BackboneBundle;

/// Metrics of one annotated instance, identified as `image_id#k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub id: String,
    pub class: DistressClass,
    #[serde(flatten)]
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceError {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_instance: Vec<InstanceMetrics>,
    /// Per-instance arithmetic means; `None` when nothing was scored.
    pub aggregate: Option<MetricSummary>,
    pub threshold: f64,
    #[serde(default)]
    pub errors: Vec<InstanceError>,
}

impl MetricReport {
    pub fn from_instances(per_instance: Vec<InstanceMetrics>, threshold: f64) -> Self {
        let aggregate = MetricSummary::mean(per_instance.iter().map(|m| &m.metrics));
        Self {
            per_instance,
            aggregate,
            threshold,
            errors: Vec::new(),
        }
    }

    /// One JSON object per instance, one per error, and a final aggregate line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.per_instance {
            out.push_str(&serde_json::to_string(m).expect("serializable"));
            out.push('\n');
        }
        for e in &self.errors {
            let line = serde_json::json!({"id": e.id, "error": e.message});
            out.push_str(&line.to_string());
            out.push('\n');
        }
        let agg = serde_json::json!({
            "aggregate": self.aggregate,
            "threshold": self.threshold,
            "instances": self.per_instance.len(),
            "errors": self.errors.len(),
        });
        out.push_str(&agg.to_string());
        out.push('\n');
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "threshold {:.3}", self.threshold);
        let _ = writeln!(
            out,
            "{:<28} {:<14} {:>6} {:>9} {:>6} {:>6} {:>7} {:>6}",
            "instance", "class", "DSC", "Precision", "Recall", "F1", "IoU(fg)", "mIoU"
        );
        let row = |out: &mut String, id: &str, class: &str, m: &MetricSummary| {
            let _ = writeln!(
                out,
                "{:<28} {:<14} {:>6.3} {:>9.3} {:>6.3} {:>6.3} {:>7.3} {:>6.3}",
                id, class, m.dsc, m.precision, m.recall, m.f1, m.iou_foreground, m.iou_mean
            );
        };
        for m in &self.per_instance {
            row(&mut out, &m.id, m.class.name(), &m.metrics);
        }
        if let Some(a) = &self.aggregate {
            row(&mut out, "mean", "", a);
        }
        for e in &self.errors {
            let _ = writeln!(out, "{:<28} error: {}", e.id, e.message);
        }
        out
    }

    /// Writes `metrics.jsonl` and `metrics.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let jsonl = dir.join("metrics.jsonl");
        let table = dir.join("metrics.txt");
        write_atomic(&jsonl, self.to_jsonl().as_bytes())?;
        write_atomic(&table, self.to_table().as_bytes())?;
        Ok((jsonl, table))
    }
}

/// Scores every annotated instance of `split`: the instance box is the
/// prompt, the prediction is mapped back to original image coordinates and
/// thresholded, and the instance's own mask is the reference.
pub fn evaluate_dataset(
    bundle: &BackboneBundle,
    manifest: &DatasetManifest,
    split: Split,
    threshold: f64,
) -> Result<MetricReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let records: Vec<_> = manifest.split_records(split).collect();
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut per_instance = Vec::new();
    let mut errors = Vec::new();
    for record in records {
        let embedded = record.load_pixels().and_then(|img| bundle.embed(&img));
        let (emb, transform) = match embedded {
            Ok(v) => v,
            Err(e) => {
                for k in 0..record.instances.len() {
                    errors.push(InstanceError {
                        id: format!("{}#{k}", record.id),
                        message: e.to_string(),
                    });
                }
                continue;
            }
        };
        for (k, inst) in record.instances.iter().enumerate() {
            let id = format!("{}#{k}", record.id);
            let scored = (|| {
                if !inst.geometry.has_mask() {
                    return Err(Error::InvalidArgument("instance has no reference mask".into()));
                }
                let truth = record.instance_mask(k)?;
                let (prob, _) = bundle.predict_box(&emb, &transform, inst.bbox)?;
                let pred = binarize(&prob, threshold)?;
                Ok(MetricSummary::from_counts(&confusion(&pred, &truth)?))
            })();
            match scored {
                Ok(metrics) => per_instance.push(InstanceMetrics {
                    id,
                    class: inst.class,
                    metrics,
                }),
                Err(e) => {
                    log::error!("{id}: {e}");
                    errors.push(InstanceError {
                        id,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    let mut report = MetricReport::from_instances(per_instance, threshold);
    report.errors = errors;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub id: String,
    pub dsc_a: f64,
    pub dsc_b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementTable {
    pub rows: Vec<ImprovementRow>,
    pub average_delta: f64,
}

impl ImprovementTable {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<28} {:>8} {:>8} {:>11}\n", "instance", "A", "B", "Improvement");
        for r in &self.rows {
            let _ = writeln!(out, "{:<28} {:>8.4} {:>8.4} {:>11.4}", r.id, r.dsc_a, r.dsc_b, r.delta);
        }
        let _ = writeln!(out, "{:<28} {:>8} {:>8} {:>11.4}", "average", "", "", self.average_delta);
        out
    }
}

/// Per-instance DSC difference `a - b` and its mean. Both reports must
/// cover the same instance ids; rows follow the order of `a`.
pub fn improvement_table(a: &MetricReport, b: &MetricReport) -> Result<ImprovementTable> {
    let b_by_id: BTreeMap<&str, f64> = b.per_instance.iter().map(|m| (m.id.as_str(), m.metrics.dsc)).collect();
    if b_by_id.len() != b.per_instance.len() || a.per_instance.len() != b.per_instance.len() {
        return Err(Error::InvalidArgument("reports cover different instances".into()));
    }
    let mut rows = Vec::with_capacity(a.per_instance.len());
    for m in &a.per_instance {
        let dsc_b = *b_by_id
            .get(m.id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("instance `{}` missing from second report", m.id)))?;
        rows.push(ImprovementRow {
            id: m.id.clone(),
            dsc_a: m.metrics.dsc,
            dsc_b,
            delta: m.metrics.dsc - dsc_b,
        });
    }
    if rows.is_empty() {
        return Err(Error::NoRecords);
    }
    let average_delta = rows.iter().map(|r| r.delta).sum::<f64>() / rows.len() as f64;
    Ok(ImprovementTable { rows, average_delta })
}

/// One model's row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou_foreground: f64,
    pub iou_mean: f64,
}

impl ComparisonRow {
    pub fn from_summary(model: impl Into<String>, m: &MetricSummary) -> Self {
        Self {
            model: model.into(),
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            iou_foreground: m.iou_foreground,
            iou_mean: m.iou_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
        let mut out = format!(
            "{:<width$} {:>9} {:>6} {:>8} {:>7} {:>6}\n",
            "Model", "Precision", "Recall", "F1 score", "IoU(fg)", "mIoU"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$} {:>9.3} {:>6.3} {:>8.3} {:>7.3} {:>6.3}",
                r.model, r.precision, r.recall, r.f1, r.iou_foreground, r.iou_mean
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Rows sorted by F1 descending, ties by model name. Rows may come from
/// this crate's reports or from external baseline results.
pub fn render_comparison(rows: impl IntoIterator<Item = ComparisonRow>) -> Result<Comparison> {
    let mut rows: Vec<_> = rows.into_iter().collect();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("comparison needs at least one report".into()));
    }
    rows.sort_by(|a, b| b.f1.total_cmp(&a.f1).then_with(|| a.model.cmp(&b.model)));
    Ok(Comparison { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(dscs: &[(&str, f64)]) -> MetricReport {
        let per = dscs
            .iter()
            .map(|&(id, d)| InstanceMetrics {
                id: id.into(),
                class: DistressClass::Longitudinal,
                metrics: MetricSummary {
                    dsc: d,
                    precision: d,
                    recall: d,
                    f1: d,
                    iou_foreground: d,
                    iou_mean: d,
                },
            })
            .collect();
        MetricReport::from_instances(per, 0.5)
    }

    #[test]
    fn aggregate_is_the_instance_mean() {
        let r = report(&[("a", 0.2), ("b", 0.6)]);
        assert!((r.aggregate.unwrap().dsc - 0.4).abs() < 1e-15);
        assert!(report(&[]).aggregate.is_none());
    }

    #[test]
    fn improvement_of_identical_reports_is_zero() {
        let r = report(&[("a", 0.2), ("b", 0.6)]);
        let t = improvement_table(&r, &r).unwrap();
        assert!(t.rows.iter().all(|row| row.delta == 0.0));
        assert_eq!(t.average_delta, 0.0);
    }

    #[test]
    fn improvement_requires_matching_ids() {
        let a = report(&[("a", 0.2)]);
        let b = report(&[("z", 0.2)]);
        assert!(improvement_table(&a, &b).is_err());
    }

    #[test]
    fn comparison_sorts_by_f1_and_renders_three_decimals() {
        let row = |name: &str, f1: f64| ComparisonRow {
            model: name.into(),
            precision: 0.714,
            recall: 0.764,
            f1,
            iou_foreground: 0.578,
            iou_mean: 0.7,
        };
        let one = render_comparison([row("only", 0.703)]).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert!(one.to_table().contains("0.714  0.764    0.703   0.578"));
        let two = render_comparison([row("low", 0.1), row("high", 0.9)]).unwrap();
        assert_eq!(two.rows[0].model, "high");
        assert!(render_comparison(Vec::new()).is_err());
    }

    #[test]
    fn jsonl_ends_with_aggregate() {
        let r = report(&[("a", 0.25)]);
        let text = r.to_jsonl();
        let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert_eq!(last["aggregate"]["dsc"], 0.25);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["id"], "a");
        assert_eq!(first["class"], "longitudinal");
    }
}
