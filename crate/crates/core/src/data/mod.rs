//! Task datasets: plain corpora, die/dat masked-choice examples, CoNLL-2002
//! NER, CoNLL-U POS, labelled reviews and the ZeroR baseline.

mod conll;
mod diedat;
mod reviews;
mod zeror;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) use conll::repair_bio;
pub use conll::{
    parse_conll2002, parse_conll2002_str, parse_conllu, parse_conllu_str, write_conll2002, write_conllu, Conll2002,
    TaggedSentence, NER_TYPES, UPOS_TAGS,
};
pub use diedat::{
    build_diedat, find_occurrences, read_examples_jsonl, write_examples_jsonl, DieDat, MaskedChoiceExample, Occurrence,
    DIEDAT_WORDS, MASK_SLOT,
};
pub use reviews::{load_reviews, parse_reviews_str, write_reviews, LabeledReview, Sentiment};
pub use zeror::ZeroR;

/// Lines of a UTF-8 text file, without line terminators.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}
