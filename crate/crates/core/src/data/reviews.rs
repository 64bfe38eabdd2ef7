use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Positive,
}

impl Sentiment {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Sentiment::Negative
        } else {
            Sentiment::Positive
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sentiment::Negative => "negative",
            Sentiment::Positive => "positive",
        })
    }
}

impl FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_lowercase().as_str() {
            "positive" | "pos" | "1" => Ok(Sentiment::Positive),
            "negative" | "neg" | "0" => Ok(Sentiment::Negative),
            other => Err(format!("unknown sentiment label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledReview {
    pub text: String,
    pub label: Sentiment,
    /// Self-reported author gender, when known.
    pub gender: Option<String>,
}

pub fn load_reviews(path: &Path) -> Result<Vec<LabeledReview>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_reviews_str(&text, path)
}

/// Tab-separated rows under a `label<TAB>text[<TAB>gender]` header. Cells
/// are taken literally; there is no quoting.
pub fn parse_reviews_str(text: &str, path: &Path) -> Result<Vec<LabeledReview>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
    let with_gender = match header.as_slice() {
        ["label", "text"] => false,
        ["label", "text", "gender"] => true,
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("header must be label, text[, gender], found {header:?}"),
            ))
        }
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let expected = if with_gender { 2..=3 } else { 2..=2 };
        if !expected.contains(&cols.len()) {
            return Err(Error::parse(path, line_no, format!("found {} columns", cols.len())));
        }
        if cols[0].trim().is_empty() {
            return Err(Error::parse(path, line_no, "missing label"));
        }
        let label = cols[0].parse().map_err(|e: String| Error::parse(path, line_no, e))?;
        let gender = cols.get(2).map(|g| g.trim()).filter(|g| !g.is_empty()).map(str::to_string);
        out.push(LabeledReview {
            text: cols[1].to_string(),
            label,
            gender,
        });
    }
    Ok(out)
}

pub fn write_reviews(path: &Path, reviews: &[LabeledReview]) -> Result<()> {
    let with_gender = reviews.iter().any(|r| r.gender.is_some());
    let mut s = String::from(if with_gender { "label\ttext\tgender\n" } else { "label\ttext\n" });
    for r in reviews {
        if r.text.contains(['\t', '\n', '\r']) {
            return Err(Error::Data("review text contains a tab or line break".into()));
        }
        s.push_str(&format!("{}\t{}", r.label, r.text));
        if with_gender {
            s.push('\t');
            s.push_str(r.gender.as_deref().unwrap_or(""));
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
