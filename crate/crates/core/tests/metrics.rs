mod common;

use common::oracles::{auc_pairs, span_prf};
use mlmkit::fairness::{audit, dpr, eo_diff, load_predictions, write_predictions, FairnessRecord};
use mlmkit::metrics::{accuracy_ci, accuracy_ci_at, roc, span_f1_conll, Z_95};
use proptest::prelude::*;

fn bio_sequence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0u8..3, 0u8..2), 0..10).prop_map(|raw| {
        let mut tags: Vec<String> = Vec::new();
        for (kind, ty) in raw {
            let ty = ["PER", "LOC"][ty as usize];
            let tag = match kind {
                0 => "O".to_string(),
                1 => format!("B-{ty}"),
                _ if tags.last().is_some_and(|p| p.ends_with(ty) && p != "O") => format!("I-{ty}"),
                _ => format!("B-{ty}"),
            };
            tags.push(tag);
        }
        tags
    })
}

fn records() -> impl Strategy<Value = Vec<FairnessRecord>> {
    prop::collection::vec((any::<bool>(), -4i32..4, prop::option::of(any::<bool>())), 0..60).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (y, s, a))| FairnessRecord {
                id: i.to_string(),
                y,
                score: s as f64 / 2.0,
                a,
            })
            .collect()
    })
}

#[test]
fn confidence_levels_agree_with_the_fixed_quantile() {
    assert_eq!(accuracy_ci_at(2116, 2224, 0.95).unwrap(), accuracy_ci(2116, 2224).unwrap());
    let wide = accuracy_ci_at(2116, 2224, 0.99).unwrap();
    let narrow = accuracy_ci(2116, 2224).unwrap();
    assert!(wide.lower < narrow.lower && wide.upper > narrow.upper);
    assert!((Z_95 - 1.959964).abs() < 1e-12);
}

#[test]
fn audit_reports_both_metrics_and_skips_missing_attributes() {
    let recs: Vec<FairnessRecord> = [
        (true, 1.0, Some(true)),
        (true, -1.0, Some(true)),
        (false, -1.0, Some(true)),
        (true, 1.0, Some(false)),
        (false, 1.0, Some(false)),
        (false, -2.0, Some(false)),
        (true, 5.0, None),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(y, score, a))| FairnessRecord {
        id: i.to_string(),
        y,
        score,
        a,
    })
    .collect();
    let (report, rocs) = audit(&recs, 0.0, true).unwrap();
    assert_eq!(report.dropped, 1);
    // rest: 2 of 3 predicted positive; designated: 1 of 3.
    assert_eq!(report.dpr, Some((2.0 / 3.0) / (1.0 / 3.0)));
    // true positive rates: rest 1/1, designated 1/2.
    assert_eq!(report.eo_diff, Some(1.0 - 0.5));
    assert_eq!(rocs.len(), 2);
    assert_eq!(rocs[1].operating_point, (0.0, 0.5));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    write_predictions(&path, &recs).unwrap();
    assert_eq!(load_predictions(&path, 1.0).unwrap(), recs);
}

#[test]
fn rating_levels_decide_the_positive_class() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ratings.csv");
    std::fs::write(&path, "id,score,y,a\na,0.3,5,1\nb,-0.1,3,0\nc,0.2,4,\n").unwrap();
    let at4: Vec<bool> = load_predictions(&path, 4.0).unwrap().iter().map(|r| r.y).collect();
    assert_eq!(at4, [true, false, true]);
    let at5: Vec<bool> = load_predictions(&path, 5.0).unwrap().iter().map(|r| r.y).collect();
    assert_eq!(at5, [true, false, false]);
}

proptest! {
    #[test]
    fn interval_contains_the_estimate(total in 1usize..5000, frac in 0.0f64..=1.0) {
        let correct = (total as f64 * frac) as usize;
        let ci = accuracy_ci(correct, total).unwrap();
        prop_assert!(0.0 <= ci.lower && ci.lower <= ci.accuracy);
        prop_assert!(ci.accuracy <= ci.upper && ci.upper <= 1.0);
    }

    #[test]
    fn span_f1_matches_the_oracle(pairs in prop::collection::vec((bio_sequence(), bio_sequence()), 1..5)) {
        let (pred, gold): (Vec<Vec<String>>, Vec<Vec<String>>) = pairs
            .into_iter()
            .map(|(mut p, mut g)| {
                let n = p.len().min(g.len());
                p.truncate(n);
                g.truncate(n);
                (p, g)
            })
            .unzip();
        let s = span_f1_conll(&pred, &gold).unwrap().overall.scores;
        prop_assert_eq!((s.precision, s.recall, s.f1), span_prf(&pred, &gold));
        let own = span_f1_conll(&gold, &gold).unwrap().overall.scores;
        prop_assert_eq!(own.f1, 1.0);
    }

    #[test]
    fn auc_matches_pair_counting_and_ignores_order(
        rows in prop::collection::vec((0i32..6, any::<bool>()), 2..50),
        rotate in 0usize..50,
    ) {
        let (scores, labels): (Vec<f64>, Vec<bool>) = rows.iter().map(|&(s, l)| (s as f64, l)).unzip();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let auc = roc(&scores, &labels).unwrap().auc;
        prop_assert_eq!(auc, auc_pairs(&scores, &labels));
        let k = rotate % scores.len();
        let (mut s2, mut l2) = (scores.clone(), labels.clone());
        s2.rotate_left(k);
        l2.rotate_left(k);
        prop_assert_eq!(roc(&s2, &l2).unwrap().auc, auc);
        // A monotone rescaling of the scores leaves the curve unchanged.
        let scaled: Vec<f64> = scores.iter().map(|s| 3.0 * s + 1.0).collect();
        prop_assert_eq!(roc(&scaled, &labels).unwrap().auc, auc);
    }

    #[test]
    fn swapping_the_designated_group_inverts_the_metrics(recs in records()) {
        if let (Ok(a), Ok(b)) = (dpr(&recs, 0.0, true), dpr(&recs, 0.0, false)) {
            if a != 0.0 && a.is_finite() {
                prop_assert!((a * b - 1.0).abs() < 1e-12);
            }
        }
        if let (Ok(a), Ok(b)) = (eo_diff(&recs, 0.0, true, true), eo_diff(&recs, 0.0, true, false)) {
            prop_assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn fairness_metrics_depend_only_on_decisions(recs in records(), shift in 0.1f64..3.0) {
        // Scores shifted together with the threshold give the same decisions.
        let moved: Vec<FairnessRecord> = recs
            .iter()
            .map(|r| FairnessRecord { score: r.score + shift, ..r.clone() })
            .collect();
        prop_assert_eq!(dpr(&recs, 0.0, true).ok(), dpr(&moved, shift, true).ok());
        prop_assert_eq!(eo_diff(&recs, 0.0, false, true).ok(), eo_diff(&moved, shift, false, true).ok());
        let scaled: Vec<FairnessRecord> = recs
            .iter()
            .map(|r| FairnessRecord { score: r.score * shift, ..r.clone() })
            .collect();
        prop_assert_eq!(dpr(&recs, 0.5, true).ok(), dpr(&scaled, 0.5 * shift, true).ok());
    }
}
