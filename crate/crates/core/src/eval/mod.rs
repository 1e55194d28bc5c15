//! Confusion matrices, classification metrics and error breakdowns.

pub mod metrics;
pub mod report;

pub use metrics::{confusion, is_positive, metrics, round_dp, ClassMetrics, ConfusionMatrix, MacroAverage, Metric, Metrics, DEFAULT_THRESHOLD};
pub use report::{emit_report, misclassification_report, EvaluationReport, Misclassified, MisclassificationReport, ReportFormat, REPORT_VERSION};
