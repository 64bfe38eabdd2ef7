//! Reading labelled task files into fine-tuning examples.

use std::path::Path;

use mlmkit::bpe::TokenizerModel;
use mlmkit::data::{
    load_reviews, parse_conll2002, parse_conllu, read_examples_jsonl, Sentiment, TaggedSentence, NER_TYPES,
    UPOS_TAGS,
};
use mlmkit::finetune::{carve_dev, make_pair_example, review_examples, tagged_examples, Example, TaskDataset};
use mlmkit::Result;

use crate::config::{DataSection, Task};

/// The fixed label inventory of a task, so that train, dev and test files
/// always agree on label indices.
pub fn labels(task: Task) -> Vec<String> {
    match task {
        Task::Pos => UPOS_TAGS.iter().map(|s| s.to_string()).collect(),
        Task::Ner => std::iter::once("O".to_string())
            .chain(NER_TYPES.iter().flat_map(|t| [format!("B-{t}"), format!("I-{t}")]))
            .collect(),
        Task::Sentiment => [Sentiment::Negative, Sentiment::Positive].iter().map(|s| s.to_string()).collect(),
        Task::Diedat => vec!["first".into(), "second".into()],
    }
}

fn tagged(task: Task, path: &Path) -> Result<Vec<TaggedSentence>> {
    match task {
        Task::Pos => parse_conllu(path),
        _ => Ok(parse_conll2002(path)?.sentences),
    }
}

pub fn load_examples(task: Task, path: &Path, tok: &TokenizerModel, max_len: usize) -> Result<Vec<Example>> {
    match task {
        Task::Pos | Task::Ner => tagged_examples(&tagged(task, path)?, tok, &labels(task), max_len),
        Task::Sentiment => review_examples(&load_reviews(path)?, tok, max_len),
        Task::Diedat => read_examples_jsonl(path)?
            .iter()
            .map(|e| make_pair_example(e, tok, max_len))
            .collect(),
    }
}

/// Train and dev splits: the dev file when given, a seeded hold-out of the
/// training file otherwise. `train_limit` keeps a prefix of the training
/// file before any hold-out is taken.
pub fn load_dataset(
    data: &DataSection,
    train: &Path,
    dev: Option<&Path>,
    tok: &TokenizerModel,
    seed: u64,
) -> Result<TaskDataset> {
    let mut examples = load_examples(data.task, train, tok, data.max_len)?;
    if let Some(n) = data.train_limit {
        examples.truncate(n);
    }
    let (train, dev) = match dev {
        Some(p) => (examples, load_examples(data.task, p, tok, data.max_len)?),
        None => carve_dev(&examples, data.dev_fraction, seed),
    };
    Ok(TaskDataset {
        train,
        dev,
        labels: labels(data.task),
    })
}
