//! Segmentation metrics and reports.

pub mod metrics;
pub mod report;

pub use metrics::{binarize, confusion, dsc, iou, precision_recall_f1, ConfusionCounts, MetricSummary};
pub use report::{
    evaluate_dataset, improvement_table, render_comparison, Comparison, ComparisonRow, ImprovementRow,
    ImprovementTable, InstanceError, InstanceMetrics, MetricReport,
};
