use crate::bpe::TokenId;
use crate::error::{Error, Result};

/// Right-padded token ids `[batch, seq]` with a validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    pub ids: Vec<TokenId>,
    pub valid: Vec<bool>,
}

impl Batch {
    pub fn from_sequences(seqs: &[Vec<TokenId>], pad: TokenId) -> Result<Self> {
        if seqs.is_empty() || seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::Data("a batch needs at least one non-empty sequence".into()));
        }
        let seq = seqs.iter().map(|s| s.len()).max().unwrap();
        let mut ids = Vec::with_capacity(seqs.len() * seq);
        let mut valid = Vec::with_capacity(seqs.len() * seq);
        for s in seqs {
            ids.extend_from_slice(s);
            valid.extend(std::iter::repeat_n(true, s.len()));
            ids.extend(std::iter::repeat_n(pad, seq - s.len()));
            valid.extend(std::iter::repeat_n(false, seq - s.len()));
        }
        Ok(Self {
            batch: seqs.len(),
            seq,
            ids,
            valid,
        })
    }

    /// Flat row index of position `pos` in sequence `i`.
    pub fn row(&self, i: usize, pos: usize) -> usize {
        i * self.seq + pos
    }

    pub fn len_of(&self, i: usize) -> usize {
        self.valid[i * self.seq..(i + 1) * self.seq].iter().filter(|&&v| v).count()
    }
}
