//! Plain-text tokenizer files.
//!
//! * `vocab.txt`: one `token<TAB>id` line per token, in id order.
//! * `merges.txt`: one `left right` line per merge, in learned order.
//! * `tokenizer.toml`: format version and the special tokens with their roles.
//!
//! Token bytes outside printable ASCII, plus space, tab and backslash, are
//! written as `\xHH`; a literal backslash is `\\`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SpecialRole, TokenId, TokenizerModel};
use crate::error::{Error, Result};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MERGES_FILE: &str = "merges.txt";
pub const MANIFEST_FILE: &str = "tokenizer.toml";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    special: Vec<SpecialEntry>,
}

#[derive(Serialize, Deserialize)]
struct SpecialEntry {
    role: SpecialRole,
    text: String,
}

pub fn escape_token(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => s.push_str("\\\\"),
            0x21..=0x7e => s.push(b as char),
            _ => write!(s, "\\x{b:02x}").unwrap(),
        }
    }
    s
}

pub fn unescape_token(s: &str) -> Option<Vec<u8>> {
    let raw = s.as_bytes();
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        if raw[i] != b'\\' {
            out.push(raw[i]);
            i += 1;
            continue;
        }
        match raw.get(i + 1)? {
            b'\\' => {
                out.push(b'\\');
                i += 2;
            }
            b'x' => {
                let hex = std::str::from_utf8(raw.get(i + 2..i + 4)?).ok()?;
                out.push(u8::from_str_radix(hex, 16).ok()?);
                i += 4;
            }
            _ => return None,
        }
    }
    Some(out)
}

pub fn save_tokenizer(model: &TokenizerModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut vocab = String::new();
    for id in 0..model.vocab_size() as TokenId {
        let bytes = model.token_bytes(id).unwrap();
        writeln!(vocab, "{}\t{id}", escape_token(bytes)).unwrap();
    }
    let mut merges = String::new();
    for (l, r) in model.merge_strings() {
        writeln!(merges, "{} {}", escape_token(&l), escape_token(&r)).unwrap();
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        special: model
            .specials()
            .iter()
            .map(|(role, text)| SpecialEntry {
                role: *role,
                text: text.clone(),
            })
            .collect(),
    };
    let manifest = toml::to_string(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    for (name, body) in [(VOCAB_FILE, vocab), (MERGES_FILE, merges), (MANIFEST_FILE, manifest)] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Rebuilds a tokenizer from its directory and checks the vocab file
/// against the ids implied by the merges.
pub fn load_tokenizer(dir: &Path) -> Result<TokenizerModel> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = toml::from_str(&read(&manifest_path)?)
        .map_err(|e| parse_error(&manifest_path, 0, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(parse_error(
            &manifest_path,
            0,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    let specials = manifest.special.into_iter().map(|s| (s.role, s.text)).collect();
    let mut model = TokenizerModel::from_merges(specials, Vec::new())?;
    let mut ids: HashMap<Vec<u8>, TokenId> = (0..=255u8).map(|b| (vec![b], model.byte_id(b))).collect();

    let merges_path = dir.join(MERGES_FILE);
    for (n, line) in read(&merges_path)?.lines().enumerate() {
        let lineno = n + 1;
        let mut parts = line.split(' ');
        let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_error(&merges_path, lineno, "expected `left right`"));
        };
        let lookup = |tok: &str| {
            unescape_token(tok)
                .and_then(|b| ids.get(&b).copied())
                .ok_or_else(|| parse_error(&merges_path, lineno, format!("unknown token {tok:?}")))
        };
        let (li, ri) = (lookup(l)?, lookup(r)?);
        let new_id = model
            .push_merge(li, ri)
            .map_err(|e| parse_error(&merges_path, lineno, e.to_string()))?;
        ids.insert(model.token_bytes(new_id).unwrap().to_vec(), new_id);
    }

    let vocab_path = dir.join(VOCAB_FILE);
    let vocab = read(&vocab_path)?;
    let mut seen = 0;
    for (n, line) in vocab.lines().enumerate() {
        let lineno = n + 1;
        let bad = || parse_error(&vocab_path, lineno, "expected `token<TAB>id`");
        let (tok, id) = line.split_once('\t').ok_or_else(bad)?;
        let id: TokenId = id.parse().map_err(|_| bad())?;
        let bytes = unescape_token(tok).ok_or_else(bad)?;
        if id as usize != n || model.token_bytes(id) != Some(bytes.as_slice()) {
            return Err(parse_error(
                &vocab_path,
                lineno,
                format!("entry {tok:?}\t{id} disagrees with the merges file"),
            ));
        }
        seen += 1;
    }
    if seen != model.vocab_size() {
        return Err(parse_error(
            &vocab_path,
            seen,
            format!("{seen} entries, merges imply {}", model.vocab_size()),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escaping_round_trips_every_byte() {
        let all: Vec<u8> = (0..=255).collect();
        let e = escape_token(&all);
        assert!(!e.contains(' ') && !e.contains('\t') && !e.contains('\n'));
        assert_eq!(unescape_token(&e).unwrap(), all);
        assert_eq!(escape_token(b" de"), "\\x20de");
        assert!(unescape_token("\\q").is_none());
    }
}
