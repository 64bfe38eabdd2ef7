use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder for the masked word in [`MaskedChoiceExample::masked_text`].
pub const MASK_SLOT: &str = "<mask>";

pub const DIEDAT_WORDS: [&str; 2] = ["die", "dat"];

/// A sentence with one word replaced by [`MASK_SLOT`] and the words that
/// could fill it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedChoiceExample {
    pub masked_text: String,
    pub candidates: Vec<String>,
    /// Index into `candidates`.
    pub gold: usize,
    /// The removed word exactly as written, so the source line can be rebuilt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
    /// 1-based line in the source corpus.
    #[serde(default)]
    pub source_line_no: usize,
}

impl MaskedChoiceExample {
    pub fn validate(&self) -> Result<()> {
        let slots = self.masked_text.matches(MASK_SLOT).count();
        if slots != 1 {
            return Err(Error::Data(format!("expected one mask slot, found {slots}")));
        }
        if self.gold >= self.candidates.len() {
            return Err(Error::Data(format!(
                "gold index {} out of {} candidates",
                self.gold,
                self.candidates.len()
            )));
        }
        Ok(())
    }

    pub fn gold_word(&self) -> &str {
        &self.candidates[self.gold]
    }

    /// Text before and after the slot.
    pub fn context(&self) -> (&str, &str) {
        self.masked_text.split_once(MASK_SLOT).unwrap_or((&self.masked_text, ""))
    }

    /// The sentence with the slot filled by the original surface form (or
    /// the gold candidate when that is unknown).
    pub fn restore(&self) -> String {
        let (l, r) = self.context();
        format!("{l}{}{r}", self.surface.as_deref().unwrap_or(self.gold_word()))
    }
}

/// A whole-word match: byte range in the line and index into the word list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occurrence {
    pub start: usize,
    pub end: usize,
    pub word: usize,
}

/// Case-insensitive whole-word matches of lowercase `words` in `line`. A
/// word is a maximal run of letters, so any non-letter is a boundary.
pub fn find_occurrences(line: &str, words: &[&str]) -> Vec<Occurrence> {
    let mut out = Vec::new();
    let mut run_start = None;
    let mut check = |start: usize, end: usize| {
        let lower = line[start..end].to_lowercase();
        if let Some(word) = words.iter().position(|w| *w == lower) {
            out.push(Occurrence { start, end, word });
        }
    };
    for (i, c) in line.char_indices() {
        match (c.is_alphabetic(), run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                check(s, i);
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        check(s, line.len());
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DieDat {
    pub train: Vec<MaskedChoiceExample>,
    pub test: Vec<MaskedChoiceExample>,
    /// Lines passed over because they already contain [`MASK_SLOT`].
    pub skipped_lines: usize,
}

/// Masked-choice examples from the first `head_count` lines (train) and the
/// last `tail_count` lines (test). Each occurrence of a word yields its own
/// example with only that occurrence masked.
pub fn build_diedat<S: AsRef<str>>(lines: &[S], head_count: usize, tail_count: usize, words: &[&str]) -> Result<DieDat> {
    if head_count + tail_count > lines.len() {
        return Err(Error::Config(format!(
            "head {head_count} + tail {tail_count} exceeds {} lines",
            lines.len()
        )));
    }
    let words: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let word_refs: Vec<&str> = words.iter().map(String::as_str).collect();
    let mut out = DieDat::default();
    let tail_start = lines.len() - tail_count;
    let ranges = [(0..head_count, false), (tail_start..lines.len(), true)];
    for (range, is_test) in ranges {
        for idx in range {
            let line = lines[idx].as_ref();
            if line.contains(MASK_SLOT) {
                out.skipped_lines += 1;
                continue;
            }
            for occ in find_occurrences(line, &word_refs) {
                let ex = MaskedChoiceExample {
                    masked_text: format!("{}{MASK_SLOT}{}", &line[..occ.start], &line[occ.end..]),
                    candidates: words.clone(),
                    gold: occ.word,
                    surface: Some(line[occ.start..occ.end].to_string()),
                    source_line_no: idx + 1,
                };
                if is_test {
                    out.test.push(ex);
                } else {
                    out.train.push(ex);
                }
            }
        }
    }
    Ok(out)
}

pub fn write_examples_jsonl(path: &Path, examples: &[MaskedChoiceExample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_examples_jsonl(path: &Path) -> Result<Vec<MaskedChoiceExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: MaskedChoiceExample =
            serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        ex.validate().map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(ex);
    }
    Ok(out)
}
