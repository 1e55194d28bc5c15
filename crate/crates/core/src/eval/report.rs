//! Evaluation reports.
//!
//! JSON schema (`report_version` 1):
//!
//! ```text
//! { "report_version": 1, "architecture": str, "split": str, "threshold": f64,
//!   "samples": u64, "confusion": {"tp","fn","fp","tn"},
//!   "accuracy": Metric, "classes": [ClassMetrics; 2], "macro_avg": {...},
//!   "misclassifications": { "false_positives_by_type": {type: n},
//!                           "false_negatives_by_type": {type: n},
//!                           "false_negatives": [Misclassified],
//!                           "false_positives": [Misclassified] } }
//! Metric = { "value": f64, "undefined"?: true }
//! ```
//!
//! JSON keeps full precision. The CSV and text renderings round accuracy to
//! four decimals and per-class figures to two.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{confusion, is_positive, metrics, round_dp, ConfusionMatrix, Metrics};
use crate::data::{SampleRecord, Source, TypeTag};
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misclassified {
    pub image_path: String,
    pub type_tag: TypeTag,
    pub source: Source,
    pub probability: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MisclassificationReport {
    pub false_positives_by_type: BTreeMap<TypeTag, u64>,
    pub false_negatives_by_type: BTreeMap<TypeTag, u64>,
    pub false_negatives: Vec<Misclassified>,
    pub false_positives: Vec<Misclassified>,
}

impl MisclassificationReport {
    pub fn is_empty(&self) -> bool {
        self.false_negatives.is_empty() && self.false_positives.is_empty()
    }
}

/// Groups errors by the record's image type. Labels come from the records.
pub fn misclassification_report(
    probs: &[f64],
    records: &[SampleRecord],
    threshold: f64,
) -> Result<MisclassificationReport> {
    if probs.len() != records.len() {
        return Err(Error::Data(format!("{} probabilities for {} records", probs.len(), records.len())));
    }
    let mut out = MisclassificationReport::default();
    for (&p, r) in probs.iter().zip(records) {
        let item = || Misclassified {
            image_path: r.image_path.clone(),
            type_tag: r.type_tag,
            source: r.source,
            probability: p,
        };
        match (r.class.label() >= 0.5, is_positive(p, threshold)) {
            (true, false) => {
                *out.false_negatives_by_type.entry(r.type_tag).or_default() += 1;
                out.false_negatives.push(item());
            }
            (false, true) => {
                *out.false_positives_by_type.entry(r.type_tag).or_default() += 1;
                out.false_positives.push(item());
            }
            _ => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub report_version: u32,
    pub architecture: String,
    pub split: String,
    pub threshold: f64,
    pub samples: u64,
    pub confusion: ConfusionMatrix,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub misclassifications: MisclassificationReport,
}

impl EvaluationReport {
    /// Builds the full report for predictions on `records`.
    pub fn build(architecture: &str, split: &str, probs: &[f64], records: &[SampleRecord], threshold: f64) -> Result<Self> {
        let labels: Vec<f64> = records.iter().map(|r| r.class.label() as f64).collect();
        let cm = confusion(probs, &labels, threshold)?;
        Ok(EvaluationReport {
            report_version: REPORT_VERSION,
            architecture: architecture.to_string(),
            split: split.to_string(),
            threshold,
            samples: cm.total(),
            confusion: cm,
            metrics: metrics(&cm),
            misclassifications: misclassification_report(probs, records, threshold)?,
        })
    }

    /// Report from counts alone, without per-record details.
    pub fn from_confusion(architecture: &str, cm: ConfusionMatrix, threshold: f64) -> Self {
        EvaluationReport {
            report_version: REPORT_VERSION,
            architecture: architecture.to_string(),
            split: "test".into(),
            threshold,
            samples: cm.total(),
            confusion: cm,
            metrics: metrics(&cm),
            misclassifications: MisclassificationReport::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Json,
    Csv,
    TextTable,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "text" | "text-table" | "table" => Ok(ReportFormat::TextTable),
            _ => Err(Error::Config(format!("unknown report format `{s}` (json, csv, text-table)"))),
        }
    }
}

fn f2(x: f64) -> String {
    format!("{:.2}", round_dp(x, 2))
}

fn f4(x: f64) -> String {
    format!("{:.4}", round_dp(x, 4))
}

fn csv_bytes(reports: &[EvaluationReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("writing CSV: {e}"));
    w.write_record(["architecture", "class", "accuracy", "precision", "recall", "f1_score", "support"])
        .map_err(csv_err)?;
    for r in reports {
        for c in &r.metrics.classes {
            w.write_record([
                r.architecture.clone(),
                c.class.to_string(),
                f4(r.metrics.accuracy.value),
                f2(c.precision.value),
                f2(c.recall.value),
                f2(c.f1.value),
                c.support.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Data(format!("writing CSV: {e}")))
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut out = line(&mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
    }
    out
}

fn text_table(reports: &[EvaluationReport]) -> String {
    let overall: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.architecture.clone(),
                f4(m.accuracy.value),
                f2(m.macro_avg.precision.value),
                f2(m.macro_avg.recall.value),
                f2(m.macro_avg.f1.value),
            ]
        })
        .collect();
    let per_class: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|r| {
            r.metrics.classes.iter().map(|c| {
                vec![
                    r.architecture.clone(),
                    c.class.to_string(),
                    f2(c.precision.value),
                    f2(c.recall.value),
                    f2(c.f1.value),
                    c.support.to_string(),
                ]
            })
        })
        .collect();
    let mut out = table(&["Architecture", "Accuracy", "Precision", "Recall", "F1 Score"], &overall);
    out.push('\n');
    out.push_str(&table(&["Architecture", "Class", "Precision", "Recall", "F1 Score", "Support"], &per_class));
    for r in reports {
        let mc = &r.misclassifications;
        if mc.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            "\n{}: {} false negatives, {} false positives",
            r.architecture, r.confusion.fn_, r.confusion.fp
        );
        for (t, n) in &mc.false_positives_by_type {
            let _ = writeln!(out, "  false positives, {t}: {n}");
        }
    }
    out
}

/// Renders one or more reports (one per architecture).
pub fn emit_report(reports: &[EvaluationReport], format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut bytes = match reports {
                [one] => serde_json::to_vec_pretty(one)?,
                many => serde_json::to_vec_pretty(many)?,
            };
            bytes.push(b'\n');
            Ok(bytes)
        }
        ReportFormat::Csv => csv_bytes(reports),
        ReportFormat::TextTable => Ok(text_table(reports).into_bytes()),
    }
}
