use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::{SpecialRole, TokenId, TokenizerModel};
use crate::data::{LabeledReview, MaskedChoiceExample, TaggedSentence};
use crate::error::{Error, Result};

/// What a fine-tuning example is labelled with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// One class for the whole sequence.
    Class(usize),
    /// One optional label per token; `None` positions carry no loss.
    Tags(Vec<Option<usize>>),
}

/// A tokenized input, begin and end markers included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub ids: Vec<TokenId>,
    pub target: Target,
}

/// Train and dev examples plus the label inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub labels: Vec<String>,
}

/// Keeps the last `max_len - 2` content tokens of a `[begin] … [end]`
/// sequence and re-wraps them.
pub fn truncate_tail(ids: &[TokenId], max_len: usize) -> Vec<TokenId> {
    if ids.len() <= max_len || ids.len() < 2 {
        return ids.to_vec();
    }
    let keep = max_len.saturating_sub(2);
    let content = &ids[1..ids.len() - 1];
    let mut out = Vec::with_capacity(max_len);
    out.push(ids[0]);
    out.extend_from_slice(&content[content.len() - keep..]);
    out.push(ids[ids.len() - 1]);
    out
}

/// Reviews as sequence-classification examples, over-long ones truncated to
/// their tail.
pub fn review_examples(reviews: &[LabeledReview], tokenizer: &TokenizerModel, max_len: usize) -> Result<Vec<Example>> {
    reviews
        .iter()
        .map(|r| {
            let ids = tokenizer.encode(&r.text, true)?.ids;
            Ok(Example {
                ids: truncate_tail(&ids, max_len),
                target: Target::Class(r.label.index()),
            })
        })
        .collect()
}

/// Word-tagged sentences as token-classification examples. Each word's
/// label sits on its first sub-token; later sub-tokens and markers carry
/// none. Words past `max_len` are dropped.
pub fn tagged_examples(
    sentences: &[TaggedSentence],
    tokenizer: &TokenizerModel,
    labels: &[String],
    max_len: usize,
) -> Result<Vec<Example>> {
    let bos = tokenizer.require_special(SpecialRole::Bos)?;
    let eos = tokenizer.require_special(SpecialRole::Eos)?;
    let mut out = Vec::with_capacity(sentences.len());
    for s in sentences {
        let mut ids = vec![bos];
        let mut tags = vec![None];
        for (i, (w, t)) in s.words.iter().zip(&s.tags).enumerate() {
            let label = labels
                .iter()
                .position(|l| l == t)
                .ok_or_else(|| Error::Data(format!("tag {t:?} not in the label set")))?;
            let text = if i == 0 { w.clone() } else { format!(" {w}") };
            let pieces = tokenizer.encode(&text, false)?.ids;
            if pieces.is_empty() {
                continue;
            }
            if ids.len() + pieces.len() + 1 > max_len {
                break;
            }
            tags.push(Some(label));
            tags.extend(std::iter::repeat_n(None, pieces.len() - 1));
            ids.extend(pieces);
        }
        ids.push(eos);
        tags.push(None);
        out.push(Example {
            ids,
            target: Target::Tags(tags),
        });
    }
    Ok(out)
}

/// Labels of a tagged corpus in first-seen order, `O` first when present.
pub fn label_inventory(sentences: &[TaggedSentence]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for t in sentences.iter().flat_map(|s| &s.tags) {
        if !labels.contains(t) {
            labels.push(t.clone());
        }
    }
    if let Some(i) = labels.iter().position(|l| l == "O") {
        let o = labels.remove(i);
        labels.insert(0, o);
    }
    labels
}

/// Context tokens on both sides of a slot, trimmed far from the slot until
/// they fit in `budget`.
pub(crate) fn fit_context(left: &mut Vec<TokenId>, right: &mut Vec<TokenId>, budget: usize) {
    let excess = (left.len() + right.len()).saturating_sub(budget);
    if excess == 0 {
        return;
    }
    // Trim the longer side first, then both evenly.
    let diff = left.len().abs_diff(right.len()).min(excess);
    let (mut from_left, mut from_right) = if left.len() >= right.len() { (diff, 0) } else { (0, diff) };
    let rest = excess - diff;
    from_left += rest.div_ceil(2);
    from_right += rest / 2;
    left.drain(..from_left.min(left.len()));
    right.truncate(right.len().saturating_sub(from_right));
}

/// The form a word takes in a slot preceded by `left`: capitalised at the
/// start of a sentence.
pub(crate) fn slot_form(left: &str, word: &str) -> String {
    let before = left.trim_end();
    if before.is_empty() || before.ends_with(['.', '!', '?']) {
        let mut chars = word.chars();
        match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    } else {
        word.to_string()
    }
}

/// `[begin] sentence with candidate 0 [sep] sentence with candidate 1 [end]`,
/// labelled with the gold candidate's index. Each half is trimmed around the
/// slot to fit `max_len`.
pub fn make_pair_example(example: &MaskedChoiceExample, tokenizer: &TokenizerModel, max_len: usize) -> Result<Example> {
    example.validate()?;
    if example.candidates.len() != 2 {
        return Err(Error::Data(format!(
            "paired input needs two candidates, got {}",
            example.candidates.len()
        )));
    }
    let (left, right) = example.context();
    let bos = tokenizer.require_special(SpecialRole::Bos)?;
    let sep = tokenizer.require_special(SpecialRole::Sep)?;
    let eos = tokenizer.require_special(SpecialRole::Eos)?;
    let half = max_len.saturating_sub(3) / 2;
    let mut ids = vec![bos];
    for (k, cand) in example.candidates.iter().enumerate() {
        if k == 1 {
            ids.push(sep);
        }
        // The left context keeps its trailing space so the filled word
        // tokenizes as it would in running text.
        let (l_text, space) = match left.strip_suffix(' ') {
            Some(l) => (l, " "),
            None => (left, ""),
        };
        let word = tokenizer.encode(&format!("{space}{}", slot_form(left, cand)), false)?.ids;
        let mut l = tokenizer.encode(l_text, false)?.ids;
        let mut r = tokenizer.encode(right, false)?.ids;
        fit_context(&mut l, &mut r, half.saturating_sub(word.len()));
        ids.extend(l);
        ids.extend(word);
        ids.extend(r);
    }
    ids.push(eos);
    Ok(Example {
        ids,
        target: Target::Class(example.gold),
    })
}

/// Splits off `fraction` of `items` (at least one when there are two or
/// more) as a dev set, chosen by a seeded shuffle. Both parts keep their
/// original order.
pub fn carve_dev<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_dev = (items.len() as f64 * fraction).round() as usize;
    if items.len() >= 2 {
        n_dev = n_dev.clamp(1, items.len() - 1);
    }
    let mut is_dev = vec![false; items.len()];
    for &i in &idx[..n_dev.min(items.len())] {
        is_dev[i] = true;
    }
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (item, d) in items.iter().zip(is_dev) {
        if d {
            dev.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    (train, dev)
}

/// The first `size` items of a seeded shuffle, returned in original order.
pub fn subsample<T: Clone>(items: &[T], size: usize, seed: u64) -> Vec<T> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut keep: Vec<usize> = idx.into_iter().take(size).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| items[i].clone()).collect()
}
