//! Byte-level byte-pair-encoding tokenizer.
//!
//! Ids are laid out as: special tokens first (in the order given at training
//! time), then the 256 single-byte tokens, then one token per learned merge.

mod io;
mod pretokenize;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_tokenizer, save_tokenizer, escape_token, unescape_token};
pub use pretokenize::pretokenize;
pub use train::{train_bpe, TrainerConfig, VocabPreset};

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecialRole {
    Bos,
    Pad,
    Eos,
    Unk,
    Sep,
    Mask,
}

impl SpecialRole {
    pub const ALL: [SpecialRole; 6] = [
        SpecialRole::Bos,
        SpecialRole::Pad,
        SpecialRole::Eos,
        SpecialRole::Unk,
        SpecialRole::Sep,
        SpecialRole::Mask,
    ];

    pub fn default_text(self) -> &'static str {
        match self {
            SpecialRole::Bos => "<s>",
            SpecialRole::Pad => "<pad>",
            SpecialRole::Eos => "</s>",
            SpecialRole::Unk => "<unk>",
            SpecialRole::Sep => "<sep>",
            SpecialRole::Mask => "<mask>",
        }
    }

    /// All six roles with their default surface strings.
    pub fn defaults() -> Vec<(SpecialRole, String)> {
        Self::ALL.iter().map(|&r| (r, r.default_text().to_string())).collect()
    }
}

/// Token ids together with the byte span each covers in the source text.
///
/// Special tokens get empty spans at the position where they were inserted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<TokenId>,
    pub offsets: Vec<(usize, usize)>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    tokens: Vec<Vec<u8>>,
    specials: Vec<(SpecialRole, String)>,
    merges: Vec<(TokenId, TokenId)>,
    merge_rank: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    byte_ids: [TokenId; 256],
}

impl TokenizerModel {
    /// Assembles a model from its specials and ordered merge list; every
    /// merge's parts must already exist when it is added.
    pub fn from_merges(
        specials: Vec<(SpecialRole, String)>,
        merges: Vec<(TokenId, TokenId)>,
    ) -> Result<Self> {
        let mut roles: Vec<SpecialRole> = specials.iter().map(|s| s.0).collect();
        roles.sort();
        roles.dedup();
        if roles.len() != specials.len() {
            return Err(Error::Config("a special role is listed twice".into()));
        }
        let mut tokens: Vec<Vec<u8>> = specials.iter().map(|(_, s)| s.as_bytes().to_vec()).collect();
        let first_byte = tokens.len() as TokenId;
        let mut byte_ids = [0; 256];
        for (b, id) in byte_ids.iter_mut().enumerate() {
            *id = first_byte + b as TokenId;
            tokens.push(vec![b as u8]);
        }
        let mut model = Self {
            tokens,
            specials,
            merges: Vec::with_capacity(merges.len()),
            merge_rank: HashMap::with_capacity(merges.len()),
            byte_ids,
        };
        for (l, r) in merges {
            model.push_merge(l, r)?;
        }
        Ok(model)
    }

    pub(crate) fn push_merge(&mut self, left: TokenId, right: TokenId) -> Result<TokenId> {
        let n = self.tokens.len() as TokenId;
        let first_byte = self.byte_ids[0];
        if left >= n || right >= n || left < first_byte || right < first_byte {
            return Err(Error::Data(format!(
                "merge ({left}, {right}) refers to a missing or special token"
            )));
        }
        if self.merge_rank.contains_key(&(left, right)) {
            return Err(Error::Data(format!("merge ({left}, {right}) listed twice")));
        }
        let mut joined = self.tokens[left as usize].clone();
        joined.extend_from_slice(&self.tokens[right as usize]);
        self.tokens.push(joined);
        self.merge_rank.insert((left, right), (self.merges.len(), n));
        self.merges.push((left, right));
        Ok(n)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    /// Merges as pairs of token byte strings, in learned order.
    pub fn merge_strings(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.merges
            .iter()
            .map(|&(l, r)| (self.tokens[l as usize].clone(), self.tokens[r as usize].clone()))
            .collect()
    }

    pub fn specials(&self) -> &[(SpecialRole, String)] {
        &self.specials
    }

    pub fn special(&self, role: SpecialRole) -> Option<TokenId> {
        self.specials
            .iter()
            .position(|s| s.0 == role)
            .map(|i| i as TokenId)
    }

    pub fn require_special(&self, role: SpecialRole) -> Result<TokenId> {
        self.special(role)
            .ok_or_else(|| Error::Config(format!("tokenizer has no {role:?} token")))
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < self.specials.len()
    }

    /// Raw bytes of a token; special tokens return their surface string.
    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(|t| t.as_slice())
    }

    /// Id of a non-special token with exactly these bytes.
    pub fn token_id(&self, bytes: &[u8]) -> Option<TokenId> {
        let ids = self.normal_ids(bytes);
        (ids.len() == 1).then(|| ids[0])
    }

    pub fn byte_id(&self, b: u8) -> TokenId {
        self.byte_ids[b as usize]
    }

    /// Applies merges in learned order to one pre-token.
    fn merge_word(&self, bytes: &[u8]) -> Vec<(TokenId, usize)> {
        // (token, byte length) per symbol.
        let mut syms: Vec<(TokenId, usize)> = bytes.iter().map(|&b| (self.byte_id(b), 1)).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0].0, w[1].0)))
                .min_by_key(|(rank, _)| *rank)
                .copied();
            let Some((rank, new_id)) = best else { break };
            let (l, r) = self.merges[rank];
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i].0 == l && syms[i + 1].0 == r {
                    out.push((new_id, syms[i].1 + syms[i + 1].1));
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            syms = out;
        }
        syms
    }

    fn normal_ids(&self, bytes: &[u8]) -> Vec<TokenId> {
        self.merge_word(bytes).into_iter().map(|s| s.0).collect()
    }

    fn encode_into(&self, text: &str, base: usize, enc: &mut Encoding) {
        for (s, e) in pretokenize(text) {
            let mut pos = s;
            for (id, len) in self.merge_word(&text.as_bytes()[s..e]) {
                enc.ids.push(id);
                enc.offsets.push((base + pos, base + pos + len));
                pos += len;
            }
        }
    }

    /// Tokenizes `text`; with `add_specials` the result is wrapped in the
    /// begin and end markers.
    pub fn encode(&self, text: &str, add_specials: bool) -> Result<Encoding> {
        let mut enc = Encoding {
            ids: Vec::new(),
            offsets: Vec::new(),
        };
        if add_specials {
            enc.ids.push(self.require_special(SpecialRole::Bos)?);
            enc.offsets.push((0, 0));
        }
        self.encode_into(text, 0, &mut enc);
        if add_specials {
            enc.ids.push(self.require_special(SpecialRole::Eos)?);
            enc.offsets.push((text.len(), text.len()));
        }
        Ok(enc)
    }

    /// Tokenizes text pieces interleaved with special tokens, such as a
    /// sentence with a mask slot. No token spans a special.
    pub fn encode_segments(&self, segments: &[Segment<'_>], add_specials: bool) -> Result<Encoding> {
        let mut enc = Encoding {
            ids: Vec::new(),
            offsets: Vec::new(),
        };
        if add_specials {
            enc.ids.push(self.require_special(SpecialRole::Bos)?);
            enc.offsets.push((0, 0));
        }
        let mut base = 0;
        for seg in segments {
            match *seg {
                Segment::Text(t) => {
                    self.encode_into(t, base, &mut enc);
                    base += t.len();
                }
                Segment::Special(role) => {
                    enc.ids.push(self.require_special(role)?);
                    enc.offsets.push((base, base));
                }
            }
        }
        if add_specials {
            enc.ids.push(self.require_special(SpecialRole::Eos)?);
            enc.offsets.push((base, base));
        }
        Ok(enc)
    }

    /// Concatenated bytes of the non-special tokens in `ids`.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let Some(bytes) = self.token_bytes(id) else {
                return Err(Error::Data(format!(
                    "token id {id} outside vocabulary of {}",
                    self.vocab_size()
                )));
            };
            if !self.is_special(id) {
                out.extend_from_slice(bytes);
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        String::from_utf8(self.decode_bytes(ids)?)
            .map_err(|_| Error::Data("decoded bytes are not valid UTF-8".into()))
    }
}

/// One piece of input for [`TokenizerModel::encode_segments`].
#[derive(Debug, Clone, Copy)]
pub enum Segment<'a> {
    Text(&'a str),
    Special(SpecialRole),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(corpus: &[&str], target: usize) -> TokenizerModel {
        let cfg = TrainerConfig {
            target_vocab_size: target,
            min_pair_frequency: 1,
            specials: SpecialRole::defaults(),
        };
        train_bpe(corpus.iter().copied(), &cfg).unwrap()
    }

    #[test]
    fn empty_text_with_specials_is_begin_end() {
        let m = model(&["abc"], 262);
        let enc = m.encode("", true).unwrap();
        let (bos, eos) = (m.special(SpecialRole::Bos).unwrap(), m.special(SpecialRole::Eos).unwrap());
        assert_eq!(enc.ids, [bos, eos]);
        assert_eq!(m.decode(&enc.ids).unwrap(), "");
    }

    #[test]
    fn abab_under_ababab_model_is_two_tokens() {
        let m = model(&["ababab"], 6 + 256 + 1);
        let enc = m.encode("abab", false).unwrap();
        assert_eq!(enc.ids.len(), 2);
        assert_eq!(enc.ids[0], enc.ids[1]);
        assert_eq!(m.token_bytes(enc.ids[0]).unwrap(), b"ab");
        assert_eq!(enc.offsets, [(0, 2), (2, 4)]);
    }

    #[test]
    fn byte_tokens_reconstruct_raw_bytes() {
        let m = model(&["x"], 262);
        let ids: Vec<TokenId> = "héllo".bytes().map(|b| m.byte_id(b)).collect();
        assert_eq!(m.decode(&ids).unwrap(), "héllo");
    }

    #[test]
    fn out_of_range_id_is_an_error() {
        let m = model(&["x"], 262);
        assert!(m.decode(&[10_000]).is_err());
    }

    #[test]
    fn segments_splice_specials_with_empty_offsets() {
        let m = model(&["Ik denk dat het"], 300);
        let mask = m.special(SpecialRole::Mask).unwrap();
        let enc = m
            .encode_segments(
                &[Segment::Text("Ik denk"), Segment::Special(SpecialRole::Mask), Segment::Text(" het")],
                true,
            )
            .unwrap();
        let at = enc.ids.iter().position(|&i| i == mask).unwrap();
        assert_eq!(enc.offsets[at], (7, 7));
        assert_eq!(m.decode(&enc.ids).unwrap(), "Ik denk het");
    }
}
