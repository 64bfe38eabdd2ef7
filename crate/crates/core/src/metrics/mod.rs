//! Accuracy with a Wald interval, binary and span F1, ROC/AUC.

mod roc;
mod spans;

use std::path::Path;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub use roc::{roc, write_roc_points, Roc, RocPoint};
pub use spans::{extract_spans, span_f1_conll, Span, SpanScores};

/// Two-sided 95% standard-normal quantile.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyCi {
    pub accuracy: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Accuracy with a Wald interval `acc ± z·sqrt(acc(1−acc)/n)`, clipped to
/// [0, 1], at 95% confidence.
pub fn accuracy_ci(correct: usize, total: usize) -> Result<AccuracyCi> {
    accuracy_ci_z(correct, total, Z_95)
}

/// [`accuracy_ci`] at another two-sided confidence level.
pub fn accuracy_ci_at(correct: usize, total: usize, confidence: f64) -> Result<AccuracyCi> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Contract(format!("confidence {confidence} not in (0, 1)")));
    }
    let z = if confidence == 0.95 {
        Z_95
    } else {
        Normal::standard().inverse_cdf(0.5 + confidence / 2.0)
    };
    accuracy_ci_z(correct, total, z)
}

pub fn accuracy_ci_z(correct: usize, total: usize, z: f64) -> Result<AccuracyCi> {
    if total == 0 {
        return Err(Error::UndefinedMetric("accuracy over zero examples".into()));
    }
    if correct > total {
        return Err(Error::Contract(format!("{correct} correct out of {total}")));
    }
    let acc = correct as f64 / total as f64;
    let half = z * (acc * (1.0 - acc) / total as f64).sqrt();
    Ok(AccuracyCi {
        accuracy: acc,
        lower: (acc - half).max(0.0),
        upper: (acc + half).min(1.0),
    })
}

/// Number of positions where `preds` and `golds` agree.
pub fn count_correct<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<usize> {
    check_lengths(preds.len(), golds.len())?;
    Ok(preds.iter().zip(golds).filter(|(p, g)| p == g).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Precision and recall are 0 when their denominator is 0, and F1 is 0
    /// when both are.
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (precision, recall) = (ratio(correct, predicted), ratio(correct, gold));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

pub fn binary_f1<T: PartialEq>(preds: &[T], golds: &[T], positive: &T) -> Result<Prf> {
    check_lengths(preds.len(), golds.len())?;
    let (mut tp, mut pp, mut gp) = (0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        let (p, g) = (p == positive, g == positive);
        tp += usize::from(p && g);
        pp += usize::from(p);
        gp += usize::from(g);
    }
    Ok(Prf::from_counts(tp, pp, gp))
}

/// A fraction as a percentage with three decimals.
pub fn percent(x: f64) -> String {
    format!("{:.3}", 100.0 * x)
}

/// One `name,value` row per metric.
pub fn write_metric_report(path: &Path, rows: &[(&str, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "value"])?;
    for (name, v) in rows {
        w.write_record([name.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{a} predictions for {b} gold labels")));
    }
    Ok(())
}
