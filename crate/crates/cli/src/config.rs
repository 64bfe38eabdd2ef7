//! Run configuration: a TOML document with one section per stage.
//!
//! Values are resolved in three layers, later ones winning: the preset named
//! by `--preset` (or the file's top-level `preset` key), the config file, and
//! command-line flags. The fully resolved document is written to the run
//! directory as `config.toml` and can be fed back with `--config` to repeat
//! the run.

use std::fs;
use std::path::Path;

use mlmkit::bpe::{TrainerConfig, VocabPreset};
use mlmkit::finetune::{Duration, FinetuneSpec, Grid, SelectionMetric, TaskKind, Warmup};
use mlmkit::model::ModelConfig;
use mlmkit::pretrain::PretrainConfig;
use mlmkit::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const SNAPSHOT_FILE: &str = "config.toml";

pub const PRESETS: [&str; 11] = [
    "tiny-pretrain",
    "tiny-pos",
    "tiny-ner",
    "tiny-sentiment",
    "tiny-diedat",
    "pretrain-base",
    "pos-base",
    "ner-base",
    "sentiment-base",
    "diedat-10k",
    "diedat-full",
];

/// Which labelled data a fine-tuning command reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// CoNLL-U, UPOS column.
    Pos,
    /// CoNLL-2002, BIO column.
    Ner,
    /// Tab-separated `label, text[, gender]` reviews.
    Sentiment,
    /// JSONL masked-choice examples, fed as sentence pairs.
    Diedat,
}

impl Task {
    pub fn kind(self) -> TaskKind {
        match self {
            Task::Pos | Task::Ner => TaskKind::Token,
            Task::Sentiment => TaskKind::Sequence,
            Task::Diedat => TaskKind::PairedSequence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    Tiny,
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
    pub min_pair_frequency: u64,
}

impl TokenizerSection {
    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig {
            target_vocab_size: self.vocab_size,
            min_pair_frequency: self.min_pair_frequency,
            ..TrainerConfig::default()
        }
    }
}

/// Architecture of a freshly initialized model. `size` picks the base
/// shape; any [`ModelConfig`] field listed in `overrides` replaces it. The
/// vocabulary size always comes from the tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub size: ModelSize,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default)]
    pub overrides: Table,
}

impl ModelSection {
    pub fn build(&self, vocab_size: usize) -> Result<ModelConfig> {
        let base = match self.size {
            ModelSize::Tiny => ModelConfig::tiny(vocab_size),
            ModelSize::Base => ModelConfig::base(),
        };
        let mut value = Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut value, Value::Table(self.overrides.clone()));
        let mut config: ModelConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.vocab_size = vocab_size;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub task: Task,
    /// Token budget of a fine-tuning input, markers included.
    pub max_len: usize,
    /// Share of the training file held out for selection when no dev file is given.
    pub dev_fraction: f64,
    /// Keep only the first this-many training examples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    pub diedat_head: usize,
    pub diedat_tail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    /// Training-set sizes; `full` stands for the whole training set.
    pub sizes: Vec<String>,
    pub subset_seed: u64,
}

impl CurveSection {
    pub fn resolve(&self, n_train: usize) -> Result<Vec<usize>> {
        self.sizes
            .iter()
            .map(|s| match s.trim() {
                "full" => Ok(n_train),
                t => t.parse().map_err(|_| Error::Config(format!("learning-curve size {t:?} is not a count or `full`"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessSection {
    pub thresholds: Vec<f64>,
    /// Attribute value playing `a`: its rate is the ratio's denominator and
    /// is subtracted in the difference.
    pub designated: bool,
    /// Ratings at or above this level count as positive.
    pub positive_level: f64,
    /// Review `gender` value mapped to attribute 1; any other value maps to 0.
    pub attribute_value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssociationSection {
    pub male: String,
    pub female: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub tokenizer: TokenizerSection,
    pub model: ModelSection,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneSpec,
    pub data: DataSection,
    pub grid: Grid,
    pub curve: CurveSection,
    pub fairness: FairnessSection,
    pub association: AssociationSection,
}

fn tiny_finetune(task: TaskKind, selection: SelectionMetric) -> FinetuneSpec {
    FinetuneSpec {
        task,
        lr: 1e-3,
        batch: 16,
        dropout: 0.1,
        eps: 1e-8,
        weight_decay: 0.01,
        warmup: Warmup::Fraction(0.06),
        duration: Duration::Epochs(4),
        selection,
        seed: 0,
    }
}

/// The named starting point of a run.
pub fn preset(name: &str) -> Result<RunConfig> {
    let full_scale = !name.starts_with("tiny-");
    let task = match name {
        "tiny-ner" | "ner-base" => Task::Ner,
        "tiny-sentiment" | "sentiment-base" => Task::Sentiment,
        "tiny-diedat" | "diedat-10k" | "diedat-full" => Task::Diedat,
        _ => Task::Pos,
    };
    if !PRESETS.contains(&name) {
        return Err(Error::Config(format!("unknown preset {name:?}; known: {}", PRESETS.join(", "))));
    }
    let finetune = match name {
        "pos-base" | "pretrain-base" => FinetuneSpec::pos(),
        "ner-base" => FinetuneSpec::ner(),
        "sentiment-base" => FinetuneSpec::sentiment(),
        "diedat-10k" => FinetuneSpec::diedat_10k(),
        "diedat-full" => FinetuneSpec::diedat_full(),
        "tiny-ner" => tiny_finetune(TaskKind::Token, SelectionMetric::SpanF1),
        _ => tiny_finetune(task.kind(), SelectionMetric::Accuracy),
    };
    Ok(RunConfig {
        preset: name.to_string(),
        tokenizer: TokenizerSection {
            vocab_size: if full_scale { VocabPreset::V2.size() } else { VocabPreset::Desk.size() },
            min_pair_frequency: 2,
        },
        model: ModelSection {
            size: if full_scale { ModelSize::Base } else { ModelSize::Tiny },
            init_seed: 0,
            overrides: Table::new(),
        },
        pretrain: if full_scale { PretrainConfig::base() } else { PretrainConfig::tiny() },
        finetune,
        data: DataSection {
            task,
            max_len: if full_scale { 512 } else { 128 },
            dev_fraction: 0.1,
            train_limit: (name == "diedat-10k").then_some(10_000),
            diedat_head: if full_scale { 1_300_000 } else { 800 },
            diedat_tail: if full_scale { 399_000 } else { 200 },
        },
        grid: Grid::default(),
        curve: CurveSection {
            sizes: vec!["100".into(), "1000".into(), "full".into()],
            subset_seed: 0,
        },
        fairness: FairnessSection {
            thresholds: vec![0.0],
            designated: true,
            positive_level: 1.0,
            attribute_value: "female".into(),
        },
        association: AssociationSection {
            male: "hij".into(),
            female: "zij".into(),
        },
    })
}

/// Recursively overlays `top` on `base`; tables merge, everything else is replaced.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// A `key.path=value` override. The value is read as a TOML literal when it
/// parses as one and as a bare string otherwise.
pub fn parse_override(raw: &str) -> Result<(Vec<String>, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override key {key:?} has an empty component")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((path, parsed))
}

fn nest(path: &[String], value: Value) -> Value {
    path.iter().rev().fold(value, |acc, k| {
        let mut t = Table::new();
        t.insert(k.clone(), acc);
        Value::Table(t)
    })
}

/// Preset, then file, then overrides.
pub fn resolve(preset_name: Option<&str>, file: Option<&Path>, overrides: &[(Vec<String>, Value)]) -> Result<RunConfig> {
    let file_table = match file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    let name = match (preset_name, file_table.get("preset")) {
        (Some(n), _) => n.to_string(),
        (None, Some(Value::String(n))) => n.clone(),
        (None, Some(other)) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        (None, None) => "tiny-pretrain".to_string(),
    };
    let mut value = Value::try_from(preset(&name)?).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut value, Value::Table(file_table));
    for (path, v) in overrides {
        merge(&mut value, nest(path, v.clone()));
    }
    if let Value::Table(t) = &mut value {
        t.insert("preset".into(), Value::String(name));
    }
    let mut config: RunConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    config.finetune.task = config.data.task.kind();
    config.pretrain.validate()?;
    config.finetune.validate()?;
    Ok(config)
}

pub fn write_snapshot(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let text = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    let path = run_dir.join(SNAPSHOT_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
