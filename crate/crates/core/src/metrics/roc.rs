use std::path::Path;

use serde::Serialize;

use super::check_lengths;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    /// Scores at or above this value are predicted positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve over the distinct score thresholds, from (0, 0) to (1, 1).
/// Tied scores enter the curve together, so a tie between a positive and a
/// negative contributes half a pair to the AUC.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<Roc> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Contract("ROC scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(Roc {
        points,
        auc: auc / (pos as f64 * neg as f64),
    })
}

/// ROC points as an `x,y,threshold` table for plotting.
pub fn write_roc_points(path: &Path, roc: &Roc) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "threshold"])?;
    for p in &roc.points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_fixture() {
        let r = roc(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(r.points.len(), 5);
        assert_eq!((r.points[4].fpr, r.points[4].tpr), (1.0, 1.0));
    }

    #[test]
    fn separation_reversal_and_ties() {
        let labels = [true, true, false, false, true];
        let s = [0.9, 0.8, 0.3, 0.2, 0.7];
        assert_eq!(roc(&s, &labels).unwrap().auc, 1.0);
        let reversed: Vec<f64> = s.iter().map(|x| -x).collect();
        assert_eq!(roc(&reversed, &labels).unwrap().auc, 0.0);
        assert_eq!(roc(&[0.5; 4], &[true, false, true, false]).unwrap().auc, 0.5);
        assert!(matches!(roc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }
}
