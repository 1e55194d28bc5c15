use serde::{Deserialize, Serialize};

use crate::data::Class;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Binary confusion counts with PMW as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fn_, fp, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// The same counts with not-PMW as the positive class.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fn_: self.fp,
            fp: self.fn_,
            tn: self.tp,
        }
    }
}

/// Predicted positive when `p >= threshold`.
pub fn is_positive(p: f64, threshold: f64) -> bool {
    p >= threshold
}

/// Counts outcomes of `probs` against 0/1 `labels`.
pub fn confusion<P: Copy + Into<f64>>(probs: &[P], labels: &[P], threshold: f64) -> Result<ConfusionMatrix> {
    if probs.len() != labels.len() {
        return Err(Error::Data(format!("{} probabilities but {} labels", probs.len(), labels.len())));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in probs.iter().zip(labels) {
        let (p, y) = (p.into(), y.into());
        if !p.is_finite() {
            return Err(Error::Numerical(format!("non-finite probability {p}")));
        }
        match (y >= 0.5, is_positive(p, threshold)) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// A ratio that may have had a zero denominator, in which case the value
/// is 0 and `undefined` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub undefined: bool,
}

impl Metric {
    pub fn ratio(num: f64, den: f64) -> Self {
        if den > 0.0 {
            Metric {
                value: num / den,
                undefined: false,
            }
        } else {
            Metric {
                value: 0.0,
                undefined: true,
            }
        }
    }

    fn mean(items: &[Metric]) -> Self {
        Metric {
            value: items.iter().map(|m| m.value).sum::<f64>() / items.len() as f64,
            undefined: items.iter().any(|m| m.undefined),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: Class,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
    /// Number of samples of this class.
    pub support: u64,
}

fn class_metrics(class: Class, cm: &ConfusionMatrix) -> ClassMetrics {
    let precision = Metric::ratio(cm.tp as f64, (cm.tp + cm.fp) as f64);
    let recall = Metric::ratio(cm.tp as f64, (cm.tp + cm.fn_) as f64);
    let f1 = if precision.undefined || recall.undefined {
        Metric {
            value: 0.0,
            undefined: true,
        }
    } else {
        let (p, r) = (precision.value, recall.value);
        Metric::ratio(2.0 * p * r, p + r)
    };
    ClassMetrics {
        class,
        precision,
        recall,
        f1,
        support: cm.tp + cm.fn_,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

/// Accuracy, per-class metrics (PMW first) and their unweighted means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Metric,
    pub classes: Vec<ClassMetrics>,
    pub macro_avg: MacroAverage,
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let classes = vec![class_metrics(Class::Pmw, cm), class_metrics(Class::NotPmw, &cm.swapped())];
    let pick = |f: fn(&ClassMetrics) -> Metric| Metric::mean(&classes.iter().map(f).collect::<Vec<_>>());
    let macro_avg = MacroAverage {
        precision: pick(|c| c.precision),
        recall: pick(|c| c.recall),
        f1: pick(|c| c.f1),
    };
    Metrics {
        accuracy: Metric::ratio((cm.tp + cm.tn) as f64, cm.total() as f64),
        classes,
        macro_avg,
    }
}

impl Metrics {
    pub fn class(&self, class: Class) -> &ClassMetrics {
        self.classes.iter().find(|c| c.class == class).expect("both classes present")
    }
}

/// Rounds half away from zero to `places` decimals.
pub fn round_dp(x: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (x * k).round() / k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_at_threshold_is_positive() {
        let cm = confusion(&[0.5f64, 0.4999], &[1.0, 0.0], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix::new(1, 0, 0, 1));
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = metrics(&ConfusionMatrix::new(5, 0, 0, 7));
        assert_eq!(m.accuracy.value, 1.0);
        assert!(m.classes.iter().all(|c| c.precision.value == 1.0 && c.recall.value == 1.0 && c.f1.value == 1.0));

        let m = metrics(&ConfusionMatrix::new(0, 4, 0, 6));
        let pmw = m.class(Class::Pmw);
        assert!(pmw.precision.undefined && pmw.precision.value == 0.0);
        assert!(!pmw.recall.undefined && pmw.recall.value == 0.0);
        assert!(pmw.f1.undefined);
        assert!(m.macro_avg.precision.undefined);
    }

    #[test]
    fn swapping_classes_swaps_precision_and_recall_roles() {
        let cm = ConfusionMatrix::new(30, 5, 8, 40);
        let a = metrics(&cm);
        let b = metrics(&cm.swapped());
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.classes[0].precision, b.classes[1].precision);
        assert_eq!(a.classes[1].recall, b.classes[0].recall);
    }
}
