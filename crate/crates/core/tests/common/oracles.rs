use std::collections::{BTreeMap, BTreeSet};

/// Merge list learned by brute force: every occurrence of every pre-token is
/// kept separately, all adjacent pairs are recounted from scratch each round,
/// and the most frequent pair wins with ties going to the smallest
/// `(left, right)` byte strings.
pub fn bpe_merges(pretokens: &[Vec<u8>], max_merges: usize, min_freq: u64) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut words: Vec<Vec<Vec<u8>>> = pretokens
        .iter()
        .map(|w| w.iter().map(|&b| vec![b]).collect())
        .collect();
    let mut merges = Vec::new();
    while merges.len() < max_merges {
        let mut counts: BTreeMap<(Vec<u8>, Vec<u8>), u64> = BTreeMap::new();
        for w in &words {
            for i in 1..w.len() {
                *counts.entry((w[i - 1].clone(), w[i].clone())).or_default() += 1;
            }
        }
        let Some(top) = counts.values().copied().max() else { break };
        if top < min_freq.max(1) {
            break;
        }
        let (l, r) = counts.iter().find(|(_, &c)| c == top).unwrap().0.clone();
        for w in &mut words {
            let mut out: Vec<Vec<u8>> = Vec::new();
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == l && w[i + 1] == r {
                    out.push([l.clone(), r.clone()].concat());
                    i += 2;
                } else {
                    out.push(w[i].clone());
                    i += 1;
                }
            }
            *w = out;
        }
        merges.push((l, r));
    }
    merges
}

/// Every whole-word, case-insensitive occurrence of `words` in `line`, as
/// `(line with that occurrence replaced by mask, lowercased word)`.
pub fn masked_occurrences(line: &str, words: &[&str], mask: &str) -> Vec<(String, String)> {
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    let mut out = Vec::new();
    for start in 0..chars.len() {
        for word in words {
            let n = word.chars().count();
            if start + n > chars.len() {
                continue;
            }
            let candidate: String = chars[start..start + n].iter().map(|c| c.1).collect();
            if candidate.to_lowercase() != *word {
                continue;
            }
            let before_ok = start == 0 || !chars[start - 1].1.is_alphabetic();
            let after_ok = start + n == chars.len() || !chars[start + n].1.is_alphabetic();
            if before_ok && after_ok {
                let b0 = chars[start].0;
                let b1 = chars.get(start + n).map_or(line.len(), |c| c.0);
                out.push((format!("{}{mask}{}", &line[..b0], &line[b1..]), word.to_string()));
            }
        }
    }
    out
}

/// Labelled spans `(type, start, end_exclusive)` of a well-formed BIO
/// sequence, found by testing every interval.
pub fn bio_spans(tags: &[String]) -> BTreeSet<(String, usize, usize)> {
    let mut spans = BTreeSet::new();
    for start in 0..tags.len() {
        let Some(ty) = tags[start].strip_prefix("B-") else { continue };
        for end in start + 1..=tags.len() {
            let inside = tags[start + 1..end].iter().all(|t| t.strip_prefix("I-") == Some(ty));
            let closed = end == tags.len() || tags[end].strip_prefix("I-") != Some(ty);
            if inside && closed {
                spans.insert((ty.to_string(), start, end));
            }
        }
    }
    spans
}

/// Micro precision, recall and F1 of exact span matches over many sentences.
pub fn span_prf(pred: &[Vec<String>], gold: &[Vec<String>]) -> (f64, f64, f64) {
    let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        let (ps, gs) = (bio_spans(p), bio_spans(g));
        tp += ps.intersection(&gs).count();
        np += ps.len();
        ng += gs.len();
    }
    // Nothing to find and nothing claimed counts as a perfect match.
    if np == 0 && ng == 0 {
        return (1.0, 1.0, 1.0);
    }
    let precision = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
    let recall = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|p| *p.1) {
        for (sn, _) in scores.iter().zip(labels).filter(|p| !*p.1) {
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
