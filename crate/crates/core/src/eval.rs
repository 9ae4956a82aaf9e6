//! Confusion-matrix metrics and report rendering.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[t][p]` = samples of gold class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }
}

pub fn confusion(gold: &[usize], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&t, &p) in gold.iter().zip(pred) {
        if t >= classes || p >= classes {
            return Err(Error::Input(format!(
                "label pair ({t}, {p}) out of range for {classes} classes"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    /// One-vs-rest accuracy.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub total: u64,
    pub confusion: Option<ConfusionMatrix>,
}

/// Unweighted mean.
pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl MetricsReport {
    /// Aggregates per-class rows; macro values are unweighted means.
    pub fn from_per_class(per_class: Vec<ClassMetrics>, accuracy: f64, total: u64) -> Self {
        let col = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).collect::<Vec<_>>();
        Self {
            macro_precision: macro_average(&col(|c| c.precision)),
            macro_recall: macro_average(&col(|c| c.recall)),
            macro_f1: macro_average(&col(|c| c.f1)),
            per_class,
            accuracy,
            total,
            confusion: None,
        }
    }

    pub fn with_class_names<T: AsRef<str>>(mut self, names: &[T]) -> Self {
        for (c, n) in self.per_class.iter_mut().zip(names) {
            c.class = n.as_ref().to_string();
        }
        self
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if cm.classes() == 0 || total == 0 {
        return Err(Error::Input(
            "cannot compute metrics of an empty confusion matrix".into(),
        ));
    }
    let c = cm.classes();
    let per_class = (0..c)
        .map(|k| {
            let tp = cm.counts[k][k];
            let gold: u64 = cm.counts[k].iter().sum();
            let predicted: u64 = (0..c).map(|t| cm.counts[t][k]).sum();
            let fp = predicted - tp;
            let fn_ = gold - tp;
            let tn = total - tp - fp - fn_;
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, gold);
            ClassMetrics {
                class: k.to_string(),
                accuracy: ratio(tp + tn, total),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: gold,
            }
        })
        .collect();
    let mut report = MetricsReport::from_per_class(per_class, ratio(cm.trace(), total), total);
    report.confusion = Some(cm.clone());
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Config(format!(
                "unknown report format {other:?} (expected text, json or csv)"
            ))),
        }
    }
}

pub fn render_report(report: &MetricsReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)
                .map_err(|e| Error::State(format!("serializing report: {e}")))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut s = String::from("class,acc,f1,prec,rec\n");
            for c in &report.per_class {
                writeln!(
                    s,
                    "{},{},{},{},{}",
                    c.class, c.accuracy, c.f1, c.precision, c.recall
                )
                .expect("writing to a String");
            }
            writeln!(
                s,
                "overall,{},{},{},{}",
                report.accuracy, report.macro_f1, report.macro_precision, report.macro_recall
            )
            .expect("writing to a String");
            Ok(s)
        }
        ReportFormat::Text => {
            let width = report
                .per_class
                .iter()
                .map(|c| c.class.len())
                .chain([9])
                .max()
                .unwrap_or(9);
            let mut s = format!(
                "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}\n",
                "class", "acc", "f1", "prec", "rec"
            );
            for c in &report.per_class {
                writeln!(
                    s,
                    "{:<width$}  {:>6.4}  {:>6.4}  {:>6.4}  {:>6.4}",
                    c.class, c.accuracy, c.f1, c.precision, c.recall
                )
                .expect("writing to a String");
            }
            writeln!(s, "{:<width$}  {:>6.4}", "accuracy", report.accuracy)
                .expect("writing to a String");
            writeln!(
                s,
                "{:<width$}  {:>6}  {:>6.4}",
                "macro-F1", "", report.macro_f1
            )
            .expect("writing to a String");
            Ok(s)
        }
    }
}
