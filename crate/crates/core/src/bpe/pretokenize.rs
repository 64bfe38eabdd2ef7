//! Splits text into pre-tokens before any merge is applied.
//!
//! A pre-token is a run of letters, a run of digits or a run of other
//! non-space characters, optionally preceded by one space that belongs to it.
//! Whitespace not absorbed that way forms its own pre-token. Merges never
//! cross pre-token boundaries.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Digit,
    Space,
    Other,
}

fn class(c: char) -> Class {
    if c.is_alphabetic() {
        Class::Letter
    } else if c.is_numeric() {
        Class::Digit
    } else if c.is_whitespace() {
        Class::Space
    } else {
        Class::Other
    }
}

/// Byte ranges `(start, end)` of the pre-tokens of `text`, in order and
/// covering every byte exactly once.
pub fn pretokenize(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = chars[i].0;
        let c = chars[i].1;
        if class(c) == Class::Space {
            let mut j = i;
            while j < chars.len() && class(chars[j].1) == Class::Space {
                j += 1;
            }
            // A single plain space directly before a word is kept for that word.
            let attach = j < chars.len() && chars[j - 1].1 == ' ';
            let run_end = if attach { j - 1 } else { j };
            if run_end > i {
                spans.push((start, byte_end(&chars, run_end, text)));
            }
            if !attach {
                i = j;
                continue;
            }
            i = run_end;
            let word_start = chars[i].0;
            let k = run_of(&chars, i + 1);
            spans.push((word_start, byte_end(&chars, k, text)));
            i = k;
        } else {
            let k = run_of(&chars, i);
            spans.push((start, byte_end(&chars, k, text)));
            i = k;
        }
    }
    spans
}

/// Index one past the run of same-class characters starting at `i`.
fn run_of(chars: &[(usize, char)], i: usize) -> usize {
    let cls = class(chars[i].1);
    let mut k = i + 1;
    while k < chars.len() && class(chars[k].1) == cls {
        k += 1;
    }
    k
}

fn byte_end(chars: &[(usize, char)], idx: usize, text: &str) -> usize {
    chars.get(idx).map_or(text.len(), |c| c.0)
}
