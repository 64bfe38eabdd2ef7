use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{check_lengths, Prf};
use crate::error::{Error, Result};

/// An entity span; `end` is inclusive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Span {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

/// Spans of a well-formed BIO sequence. An `I-X` that does not continue a
/// span of type X is rejected.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<Span>> {
    let mut spans: Vec<Span> = Vec::new();
    let mut open = false;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        if tag == "O" {
            open = false;
        } else if let Some(kind) = tag.strip_prefix("B-") {
            spans.push(Span {
                kind: kind.to_string(),
                start: i,
                end: i,
            });
            open = true;
        } else if let Some(kind) = tag.strip_prefix("I-") {
            match spans.last_mut() {
                Some(last) if open && last.kind == kind && last.end + 1 == i => last.end = i,
                _ => return Err(Error::Contract(format!("{tag} at position {i} does not continue a {kind} span"))),
            }
        } else {
            return Err(Error::Contract(format!("unknown BIO tag {tag:?} at position {i}")));
        }
    }
    Ok(spans)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeScore {
    pub scores: Prf,
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanScores {
    pub overall: TypeScore,
    pub per_type: BTreeMap<String, TypeScore>,
}

/// Micro-averaged exact-match span scores over aligned sentences, plus
/// per-type scores for every type seen in either side.
pub fn span_f1_conll<S: AsRef<str>>(preds: &[Vec<S>], golds: &[Vec<S>]) -> Result<SpanScores> {
    check_lengths(preds.len(), golds.len())?;
    let mut counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for (si, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Contract(format!(
                "sentence {si}: {} predicted tags for {} gold tags",
                p.len(),
                g.len()
            )));
        }
        let ps: BTreeSet<Span> = extract_spans(p)?.into_iter().collect();
        let gs: BTreeSet<Span> = extract_spans(g)?.into_iter().collect();
        for s in &ps {
            let c = counts.entry(s.kind.clone()).or_default();
            c[0] += 1;
            c[2] += usize::from(gs.contains(s));
        }
        for s in &gs {
            counts.entry(s.kind.clone()).or_default()[1] += 1;
        }
    }
    // With no span on either side nothing was missed or invented.
    let score = |[p, g, c]: [usize; 3]| TypeScore {
        scores: if p == 0 && g == 0 {
            Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            }
        } else {
            Prf::from_counts(c, p, g)
        },
        predicted: p,
        gold: g,
        correct: c,
    };
    let mut total = [0; 3];
    for c in counts.values() {
        for k in 0..3 {
            total[k] += c[k];
        }
    }
    Ok(SpanScores {
        overall: score(total),
        per_type: counts.into_iter().map(|(k, c)| (k, score(c))).collect(),
    })
}
