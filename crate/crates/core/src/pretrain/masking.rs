use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::TokenId;
use crate::error::{Error, Result};

/// Dynamic masking: each eligible position is selected with `select_prob`;
/// a selected position becomes the mask token, a random token or stays
/// unchanged according to the three fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskingPolicy {
    pub select_prob: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self {
            select_prob: 0.15,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
        }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.mask_frac, self.random_frac, self.keep_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mask/random/keep fractions {fracs:?} must be in [0, 1] and sum to 1"
            )));
        }
        // Zero is accepted so that masking can be switched off entirely.
        if !(0.0..=1.0).contains(&self.select_prob) {
            return Err(Error::Config(format!("select_prob {} not in [0, 1]", self.select_prob)));
        }
        Ok(())
    }
}

/// What the masker needs to know about the vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct MaskingVocab {
    pub mask_id: TokenId,
    /// Ids below this are special tokens: never selected, never drawn as
    /// random replacements.
    pub first_regular: TokenId,
    pub vocab_size: usize,
}

/// Masked copy of `seqs` plus labels: the original id at selected positions
/// and `None` elsewhere.
pub fn mask_batch(
    seqs: &[Vec<TokenId>],
    policy: &MaskingPolicy,
    vocab: &MaskingVocab,
    rng: &mut impl Rng,
) -> (Vec<Vec<TokenId>>, Vec<Vec<Option<TokenId>>>) {
    let mut inputs = Vec::with_capacity(seqs.len());
    let mut labels = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let mut inp = seq.clone();
        let mut lab = vec![None; seq.len()];
        for (i, &tok) in seq.iter().enumerate() {
            if tok < vocab.first_regular || rng.random::<f64>() >= policy.select_prob {
                continue;
            }
            lab[i] = Some(tok);
            let r: f64 = rng.random();
            if r < policy.mask_frac {
                inp[i] = vocab.mask_id;
            } else if r < policy.mask_frac + policy.random_frac {
                inp[i] = rng.random_range(vocab.first_regular..vocab.vocab_size as TokenId);
            }
        }
        inputs.push(inp);
        labels.push(lab);
    }
    (inputs, labels)
}
