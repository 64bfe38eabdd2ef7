use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{pretokenize, SpecialRole, TokenId, TokenizerModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub target_vocab_size: usize,
    /// Pairs seen fewer times than this are never merged. Keeps rare
    /// byte-fragment junk out of the vocabulary.
    pub min_pair_frequency: u64,
    pub specials: Vec<(SpecialRole, String)>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            target_vocab_size: VocabPreset::Desk.size(),
            min_pair_frequency: 2,
            specials: SpecialRole::defaults(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VocabPreset {
    Desk,
    /// The 40k vocabulary of the second model generation.
    V2,
    /// 50k, inferred from v2 being 10k smaller than its predecessor.
    V1,
}

impl VocabPreset {
    pub fn size(self) -> usize {
        match self {
            VocabPreset::Desk => 1_000,
            VocabPreset::V2 => 40_000,
            VocabPreset::V1 => 50_000,
        }
    }
}

/// Learns merges greedily: each round merges the most frequent adjacent pair
/// (ties go to the lexicographically smallest `(left, right)` byte strings)
/// and recounts. Stops at the target size or when no pair reaches
/// `min_pair_frequency`.
pub fn train_bpe<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    config: &TrainerConfig,
) -> Result<TokenizerModel> {
    let floor = 256 + config.specials.len();
    if config.target_vocab_size < floor {
        return Err(Error::Config(format!(
            "target vocabulary {} is below the {floor} byte and special tokens",
            config.target_vocab_size
        )));
    }
    let mut model = TokenizerModel::from_merges(config.specials.clone(), Vec::new())?;

    let mut counts: HashMap<&'a [u8], u64> = HashMap::new();
    for line in corpus {
        for (s, e) in pretokenize(line) {
            *counts.entry(&line.as_bytes()[s..e]).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Training("tokenizer corpus is empty".into()));
    }
    let mut words: Vec<(Vec<TokenId>, u64)> = counts
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| model.byte_id(b)).collect(), c))
        .collect();
    words.sort();

    while model.vocab_size() < config.target_vocab_size {
        let pairs = count_pairs(&words);
        let Some((pair, freq)) = best_pair(&model, &pairs) else { break };
        if freq < config.min_pair_frequency.max(1) {
            break;
        }
        let new_id = model.push_merge(pair.0, pair.1)?;
        for (syms, _) in &mut words {
            apply_merge(syms, pair, new_id);
        }
    }
    Ok(model)
}

fn count_pairs(words: &[(Vec<TokenId>, u64)]) -> HashMap<(TokenId, TokenId), u64> {
    let mut pairs = HashMap::new();
    for (syms, c) in words {
        for w in syms.windows(2) {
            *pairs.entry((w[0], w[1])).or_default() += c;
        }
    }
    pairs
}

fn best_pair(
    model: &TokenizerModel,
    pairs: &HashMap<(TokenId, TokenId), u64>,
) -> Option<((TokenId, TokenId), u64)> {
    let key = |p: &(TokenId, TokenId)| (model.token_bytes(p.0).unwrap(), model.token_bytes(p.1).unwrap());
    let mut best: Option<((TokenId, TokenId), u64)> = None;
    for (&p, &c) in pairs {
        best = match best {
            Some((bp, bc)) if bc > c || (bc == c && key(&bp) <= key(&p)) => Some((bp, bc)),
            _ => Some((p, c)),
        };
    }
    best
}

fn apply_merge(syms: &mut Vec<TokenId>, (l, r): (TokenId, TokenId), new_id: TokenId) {
    if syms.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
            out.push(new_id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    *syms = out;
}
