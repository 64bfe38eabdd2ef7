use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NER_TYPES: [&str; 4] = ["ORG", "LOC", "PER", "MISC"];

/// Universal POS tags.
pub const UPOS_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM",
    "VERB", "X",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

impl TaggedSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Conll2002 {
    pub sentences: Vec<TaggedSentence>,
    /// Orphan `I-X` tags promoted to `B-X`.
    pub repairs: usize,
}

pub fn parse_conll2002(path: &Path) -> Result<Conll2002> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll2002_str(&text, path)
}

/// Token, POS and NER columns separated by whitespace, a blank line between
/// sentences. `-DOCSTART-` lines end the current sentence.
pub fn parse_conll2002_str(text: &str, path: &Path) -> Result<Conll2002> {
    let mut out = Conll2002::default();
    let mut cur = TaggedSentence {
        words: Vec::new(),
        tags: Vec::new(),
    };
    let flush = |cur: &mut TaggedSentence, out: &mut Conll2002| {
        if !cur.is_empty() {
            out.repairs += repair_bio(&mut cur.tags);
            out.sentences.push(std::mem::replace(
                cur,
                TaggedSentence {
                    words: Vec::new(),
                    tags: Vec::new(),
                },
            ));
        }
    };
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() || cols[0] == "-DOCSTART-" {
            flush(&mut cur, &mut out);
            continue;
        }
        if cols.len() != 3 {
            return Err(Error::parse(path, i + 1, format!("expected 3 columns, found {}", cols.len())));
        }
        let tag = cols[2];
        if !is_ner_tag(tag) {
            return Err(Error::parse(path, i + 1, format!("unknown NER tag {tag:?}")));
        }
        cur.words.push(cols[0].to_string());
        cur.tags.push(tag.to_string());
    }
    flush(&mut cur, &mut out);
    Ok(out)
}

fn is_ner_tag(tag: &str) -> bool {
    tag == "O"
        || ["B-", "I-"]
            .iter()
            .any(|p| tag.strip_prefix(p).is_some_and(|t| NER_TYPES.contains(&t)))
}

/// Promotes every `I-X` that does not continue an X span to `B-X`.
pub(crate) fn repair_bio(tags: &mut [String]) -> usize {
    let mut repairs = 0;
    for i in 0..tags.len() {
        if let Some(kind) = tags[i].strip_prefix("I-") {
            let continues = i > 0 && tags[i - 1].len() > 2 && &tags[i - 1][2..] == kind;
            if !continues {
                tags[i] = format!("B-{kind}");
                repairs += 1;
            }
        }
    }
    repairs
}

/// Canonical CoNLL-2002 text: `word _ tag`, the POS column left empty.
pub fn write_conll2002(sentences: &[TaggedSentence]) -> String {
    let mut s = String::new();
    for sent in sentences {
        for (w, t) in sent.words.iter().zip(&sent.tags) {
            let _ = writeln!(s, "{w} _ {t}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_conllu(path: &Path) -> Result<Vec<TaggedSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conllu_str(&text, path)
}

/// Word forms and UPOS tags of a CoNLL-U file. Comments, multi-word token
/// ranges (`3-4`) and empty nodes (`5.1`) are skipped.
pub fn parse_conllu_str(text: &str, path: &Path) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    let mut cur = TaggedSentence {
        words: Vec::new(),
        tags: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::replace(
                    &mut cur,
                    TaggedSentence {
                        words: Vec::new(),
                        tags: Vec::new(),
                    },
                ));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::parse(path, i + 1, format!("expected 10 columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        if !UPOS_TAGS.contains(&cols[3]) {
            return Err(Error::parse(path, i + 1, format!("unknown UPOS tag {:?}", cols[3])));
        }
        cur.words.push(cols[1].to_string());
        cur.tags.push(cols[3].to_string());
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

/// Canonical CoNLL-U text with only ID, FORM and UPOS filled in.
pub fn write_conllu(sentences: &[TaggedSentence]) -> String {
    let mut s = String::new();
    for sent in sentences {
        for (i, (w, t)) in sent.words.iter().zip(&sent.tags).enumerate() {
            let _ = writeln!(s, "{}\t{w}\t_\t{t}\t_\t_\t_\t_\t_\t_", i + 1);
        }
        s.push('\n');
    }
    s
}
