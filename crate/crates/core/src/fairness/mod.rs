//! Gender association tests on the MLM head and group fairness metrics over
//! classifier outputs.

mod association;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{roc, Roc};

pub use association::{
    association_test, default_templates, load_professions, load_templates, write_association_csv, AssociationRow,
    Profession, Template, PROFESSION_SLOT,
};

/// One classifier output with its true label and sensitive attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessRecord {
    pub id: String,
    pub y: bool,
    pub score: f64,
    pub a: Option<bool>,
}

/// Records that carry the attribute, and how many did not.
pub fn with_attribute(records: &[FairnessRecord]) -> (Vec<(bool, bool, f64)>, usize) {
    let kept: Vec<(bool, bool, f64)> = records.iter().filter_map(|r| r.a.map(|a| (a, r.y, r.score))).collect();
    let dropped = records.len() - kept.len();
    (kept, dropped)
}

/// Positive rates of the two groups: `(rest, designated)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupRates {
    pub rest_positive: usize,
    pub rest_total: usize,
    pub designated_positive: usize,
    pub designated_total: usize,
}

impl GroupRates {
    pub fn rest_rate(&self) -> f64 {
        self.rest_positive as f64 / self.rest_total as f64
    }

    pub fn designated_rate(&self) -> f64 {
        self.designated_positive as f64 / self.designated_total as f64
    }
}

fn rates(
    records: &[FairnessRecord],
    threshold: f64,
    designated: bool,
    condition: impl Fn(bool) -> bool,
) -> Result<GroupRates> {
    let mut r = GroupRates {
        rest_positive: 0,
        rest_total: 0,
        designated_positive: 0,
        designated_total: 0,
    };
    for (a, y, score) in with_attribute(records).0 {
        if !condition(y) {
            continue;
        }
        let positive = usize::from(score > threshold);
        if a == designated {
            r.designated_total += 1;
            r.designated_positive += positive;
        } else {
            r.rest_total += 1;
            r.rest_positive += positive;
        }
    }
    if r.rest_total == 0 || r.designated_total == 0 {
        return Err(Error::UndefinedMetric(format!(
            "a group is empty (designated a={designated}: {}, rest: {})",
            r.designated_total, r.rest_total
        )));
    }
    Ok(r)
}

/// Demographic parity ratio `P(ŷ=1 | ¬a) / P(ŷ=1 | a)` with
/// `ŷ = score > threshold`; `designated` is the attribute value playing `a`.
pub fn dpr(records: &[FairnessRecord], threshold: f64, designated: bool) -> Result<f64> {
    let r = rates(records, threshold, designated, |_| true)?;
    if r.designated_positive == 0 {
        return Err(Error::UndefinedMetric(format!(
            "designated group a={designated} has no positive prediction among {} records",
            r.designated_total
        )));
    }
    Ok(r.rest_rate() / r.designated_rate())
}

/// Equal-opportunity difference `P(ŷ=1 | ¬a, y) − P(ŷ=1 | a, y)` at
/// `y = y_value`.
pub fn eo_diff(records: &[FairnessRecord], threshold: f64, y_value: bool, designated: bool) -> Result<f64> {
    let r = rates(records, threshold, designated, |y| y == y_value)?;
    Ok(r.rest_rate() - r.designated_rate())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRoc {
    pub group: bool,
    pub roc: Roc,
    /// `(fpr, tpr)` of `ŷ = score > threshold`.
    pub operating_point: (f64, f64),
}

/// One ROC curve per attribute value, each with its operating point.
pub fn roc_by_group(records: &[FairnessRecord], threshold: f64) -> Result<Vec<GroupRoc>> {
    let (kept, _) = with_attribute(records);
    let mut out = Vec::new();
    for group in [false, true] {
        let (scores, labels): (Vec<f64>, Vec<bool>) =
            kept.iter().filter(|r| r.0 == group).map(|r| (r.2, r.1)).unzip();
        let curve = roc(&scores, &labels)?;
        let pos = labels.iter().filter(|&&l| l).count();
        let neg = labels.len() - pos;
        let tp = scores.iter().zip(&labels).filter(|(s, l)| **l && **s > threshold).count();
        let fp = scores.iter().zip(&labels).filter(|(s, l)| !**l && **s > threshold).count();
        out.push(GroupRoc {
            group,
            roc: curve,
            operating_point: (fp as f64 / neg as f64, tp as f64 / pos as f64),
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    id: String,
    score: f64,
    y: f64,
    #[serde(default)]
    a: Option<String>,
}

/// Reads a predictions CSV with columns `id, score, y, a`. `y` may be a
/// rating; it counts as positive at or above `positive_level`. An empty `a`
/// means the attribute is unknown.
pub fn load_predictions(path: &Path, positive_level: f64) -> Result<Vec<FairnessRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<PredictionRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        let a = match row.a.as_deref().map(str::trim) {
            None | Some("") => None,
            Some("1" | "true") => Some(true),
            Some("0" | "false") => Some(false),
            Some(other) => return Err(Error::parse(path, i + 2, format!("attribute {other:?} is not 0/1"))),
        };
        out.push(FairnessRecord {
            id: row.id,
            y: row.y >= positive_level,
            score: row.score,
            a,
        });
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, records: &[FairnessRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "score", "y", "a"])?;
    for r in records {
        let a = r.a.map_or(String::new(), |a| u8::from(a).to_string());
        w.write_record([r.id.clone(), r.score.to_string(), u8::from(r.y).to_string(), a])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Summary of one audit at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub threshold: f64,
    pub designated: bool,
    pub dropped: usize,
    pub dpr: Option<f64>,
    pub eo_diff: Option<f64>,
    pub auc_rest: f64,
    pub auc_designated: f64,
}

pub fn audit(records: &[FairnessRecord], threshold: f64, designated: bool) -> Result<(FairnessReport, Vec<GroupRoc>)> {
    let rocs = roc_by_group(records, threshold)?;
    let auc = |g: bool| rocs.iter().find(|r| r.group == g).map_or(f64::NAN, |r| r.roc.auc);
    let report = FairnessReport {
        threshold,
        designated,
        dropped: with_attribute(records).1,
        dpr: dpr(records, threshold, designated).ok(),
        eo_diff: eo_diff(records, threshold, true, designated).ok(),
        auc_rest: auc(!designated),
        auc_designated: auc(designated),
    };
    Ok((report, rocs))
}

/// One row per threshold with both fairness metrics and the per-group AUCs.
pub fn write_fairness_report(path: &Path, reports: &[FairnessReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "designated_a", "dropped", "dpr", "eo_diff", "auc_rest", "auc_designated"])?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for r in reports {
        w.write_record([
            r.threshold.to_string(),
            u8::from(r.designated).to_string(),
            r.dropped.to_string(),
            opt(r.dpr),
            opt(r.eo_diff),
            r.auc_rest.to_string(),
            r.auc_designated.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-group ROC points with the operating point flagged.
pub fn write_group_roc(path: &Path, rocs: &[GroupRoc]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "x", "y", "threshold", "operating_point"])?;
    for g in rocs {
        for p in &g.roc.points {
            w.write_record([u8::from(g.group).to_string(), p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string(), "0".into()])?;
        }
        let (x, y) = g.operating_point;
        w.write_record([u8::from(g.group).to_string(), x.to_string(), y.to_string(), String::new(), "1".into()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
