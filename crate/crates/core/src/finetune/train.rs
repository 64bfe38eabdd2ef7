use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Example, Target, TaskDataset};
use crate::autodiff::{Graph, Var};
use crate::bpe::TokenId;
use crate::error::{Error, Result};
use crate::metrics::span_f1_conll;
use crate::model::{Batch, Bound, EncoderModel, ParamStore};
use crate::pretrain::{adam_step, OptimizerConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Sequence,
    Token,
    PairedSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMetric {
    Accuracy,
    CrossEntropy,
    SpanF1,
}

impl SelectionMetric {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, SelectionMetric::CrossEntropy)
    }

    pub fn pick(self, d: &DevMetrics) -> Result<f64> {
        match self {
            SelectionMetric::Accuracy => Ok(d.accuracy),
            SelectionMetric::CrossEntropy => Ok(d.loss),
            SelectionMetric::SpanF1 => d
                .span_f1
                .ok_or_else(|| Error::Config("span F1 needs a BIO token task".into())),
        }
    }

    fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Warmup {
    Steps(u64),
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Duration {
    Epochs(usize),
    Steps(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSpec {
    pub task: TaskKind,
    pub lr: f64,
    pub batch: usize,
    pub dropout: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup: Warmup,
    pub duration: Duration,
    pub selection: SelectionMetric,
    pub seed: u64,
}

impl FinetuneSpec {
    fn base(task: TaskKind, lr: f64, batch: usize, selection: SelectionMetric) -> Self {
        Self {
            task,
            lr,
            batch,
            dropout: 0.1,
            eps: 1e-8,
            weight_decay: 0.1,
            warmup: Warmup::Fraction(0.06),
            duration: Duration::Epochs(10),
            selection,
            seed: 0,
        }
    }

    pub fn pos() -> Self {
        Self::base(TaskKind::Token, 1e-4, 16, SelectionMetric::CrossEntropy)
    }

    pub fn ner() -> Self {
        Self::base(TaskKind::Token, 3e-5, 32, SelectionMetric::SpanF1)
    }

    pub fn sentiment() -> Self {
        Self {
            warmup: Warmup::Steps(500),
            duration: Duration::Steps(2000),
            ..Self::base(TaskKind::Sequence, 1e-5, 128, SelectionMetric::Accuracy)
        }
    }

    pub fn diedat_10k() -> Self {
        Self {
            eps: 1e-9,
            warmup: Warmup::Steps(250),
            duration: Duration::Epochs(13),
            ..Self::base(TaskKind::PairedSequence, 1e-5, 32, SelectionMetric::Accuracy)
        }
    }

    pub fn diedat_full() -> Self {
        Self {
            batch: 128,
            duration: Duration::Epochs(3),
            ..Self::diedat_10k()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "pos" => Self::pos(),
            "ner" => Self::ner(),
            "sentiment" => Self::sentiment(),
            "diedat-10k" => Self::diedat_10k(),
            "diedat-full" => Self::diedat_full(),
            other => return Err(Error::Config(format!("unknown fine-tuning preset {other:?}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Warmup::Fraction(f) = self.warmup {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("warmup fraction {f} not in [0, 1]")));
            }
        }
        if self.selection == SelectionMetric::SpanF1 && self.task != TaskKind::Token {
            return Err(Error::Config("span F1 selection needs a token task".into()));
        }
        if self.batch == 0 || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("batch and lr must be positive, dropout in [0, 1)".into()));
        }
        if matches!(self.duration, Duration::Epochs(0) | Duration::Steps(0)) {
            return Err(Error::Config("training must run at least one step".into()));
        }
        Ok(())
    }

    /// Optimizer steps for `n_train` examples.
    pub fn total_steps(&self, n_train: usize) -> u64 {
        match self.duration {
            Duration::Epochs(e) => (e * n_train.div_ceil(self.batch)) as u64,
            Duration::Steps(s) => s,
        }
    }

    pub fn optimizer(&self, n_train: usize) -> OptimizerConfig {
        let total = self.total_steps(n_train);
        let warmup = match self.warmup {
            Warmup::Steps(s) => s.min(total),
            Warmup::Fraction(f) => (f * total as f64).round() as u64,
        };
        OptimizerConfig {
            weight_decay: self.weight_decay,
            ..OptimizerConfig::linear(self.lr, warmup, total, self.eps)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    /// Mean cross-entropy per labelled item.
    pub loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Exact-match span F1, for BIO token tasks.
    pub span_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub dev: DevMetrics,
    pub dev_metric: f64,
}

pub struct FinetuneOutcome {
    /// The model of the best dev epoch.
    pub model: EncoderModel,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

fn check_task(model: &mut EncoderModel, ds: &TaskDataset, spec: &FinetuneSpec) -> Result<()> {
    let n = ds.labels.len();
    let is_token = spec.task == TaskKind::Token;
    for ex in ds.train.iter().chain(&ds.dev) {
        let ok = match &ex.target {
            Target::Class(c) => !is_token && *c < n,
            Target::Tags(t) => is_token && t.len() == ex.ids.len() && t.iter().flatten().all(|&c| c < n),
        };
        if !ok {
            return Err(Error::Data("example target does not fit the task or label set".into()));
        }
    }
    let head = if is_token { model.heads.token_labels } else { model.heads.seq_classes };
    match head {
        Some(h) if h == n => Ok(()),
        Some(h) => Err(Error::Contract(format!("model head has {h} outputs, dataset has {n} labels"))),
        None if is_token => model.attach_tok_head(n, spec.seed ^ 0x6865_6164),
        None => model.attach_seq_head(n, spec.seed ^ 0x6865_6164),
    }
}

/// Loss graph for one batch.
fn batch_loss(g: &mut Graph<f32>, model: &EncoderModel, examples: &[&Example], pad: TokenId) -> Result<Option<(Var, Bound)>> {
    let seqs: Vec<Vec<TokenId>> = examples.iter().map(|e| e.ids.clone()).collect();
    let batch = Batch::from_sequences(&seqs, pad)?;
    let b = model.bind(g)?;
    let hidden = model.encode(g, &b, &batch)?;
    let loss = match &examples[0].target {
        Target::Class(_) => {
            let targets: Vec<Option<usize>> = examples
                .iter()
                .map(|e| match e.target {
                    Target::Class(c) => Some(c),
                    Target::Tags(_) => None,
                })
                .collect();
            let logits = model.seq_logits(g, &b, hidden, &batch)?;
            g.cross_entropy(logits, &targets)?
        }
        Target::Tags(_) => {
            let mut targets = vec![None; batch.ids.len()];
            for (i, e) in examples.iter().enumerate() {
                if let Target::Tags(t) = &e.target {
                    targets[batch.row(i, 0)..batch.row(i, 0) + t.len()].copy_from_slice(t);
                }
            }
            if targets.iter().all(Option::is_none) {
                return Ok(None);
            }
            let logits = model.tok_logits(g, &b, hidden)?;
            g.cross_entropy(logits, &targets)?
        }
    };
    Ok(Some((loss, b)))
}

/// Predicted label for every labelled item of `examples`, in order, with its
/// gold label and log-probability of gold.
pub fn predict(model: &EncoderModel, examples: &[Example], pad: TokenId) -> Result<Vec<Vec<(usize, usize, f64)>>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(32) {
        let seqs: Vec<Vec<TokenId>> = chunk.iter().map(|e| e.ids.clone()).collect();
        let batch = Batch::from_sequences(&seqs, pad)?;
        match &chunk[0].target {
            Target::Class(_) => {
                let logits = model.forward_seq_cls(&batch)?;
                for (i, e) in chunk.iter().enumerate() {
                    let Target::Class(gold) = e.target else {
                        return Err(Error::Data("mixed targets in one dataset".into()));
                    };
                    out.push(vec![judge(logits.row(i), gold)]);
                }
            }
            Target::Tags(_) => {
                let logits = model.forward_tok_cls(&batch)?;
                let l = logits.shape()[2];
                for (i, e) in chunk.iter().enumerate() {
                    let Target::Tags(tags) = &e.target else {
                        return Err(Error::Data("mixed targets in one dataset".into()));
                    };
                    let mut items = Vec::new();
                    for (pos, t) in tags.iter().enumerate() {
                        if let Some(gold) = t {
                            let r = batch.row(i, pos);
                            items.push(judge(&logits.data()[r * l..(r + 1) * l], *gold));
                        }
                    }
                    out.push(items);
                }
            }
        }
    }
    Ok(out)
}

fn judge(row: &[f32], gold: usize) -> (usize, usize, f64) {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    let max = row[best] as f64;
    let lse = max + row.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln();
    (best, gold, row[gold] as f64 - lse)
}

/// Loss, accuracy and, for BIO labels, span F1 of `model` on `examples`.
pub fn evaluate(model: &EncoderModel, examples: &[Example], labels: &[String], pad: TokenId) -> Result<DevMetrics> {
    if examples.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let preds = predict(model, examples, pad)?;
    let items: Vec<&(usize, usize, f64)> = preds.iter().flatten().collect();
    if items.is_empty() {
        return Err(Error::UndefinedMetric("no labelled items to evaluate".into()));
    }
    let correct = items.iter().filter(|(p, g, _)| p == g).count();
    let loss = -items.iter().map(|x| x.2).sum::<f64>() / items.len() as f64;
    let bio = labels.iter().all(|l| l == "O" || l.starts_with("B-") || l.starts_with("I-"));
    let span_f1 = if bio && matches!(examples[0].target, Target::Tags(_)) {
        let mut pred_tags = Vec::new();
        let mut gold_tags = Vec::new();
        for sent in &preds {
            let p: Vec<String> = sent.iter().map(|x| labels[x.0].clone()).collect();
            let g: Vec<String> = sent.iter().map(|x| labels[x.1].clone()).collect();
            pred_tags.push(repair(p));
            gold_tags.push(repair(g));
        }
        Some(span_f1_conll(&pred_tags, &gold_tags)?.overall.scores.f1)
    } else {
        None
    };
    Ok(DevMetrics {
        loss,
        accuracy: correct as f64 / items.len() as f64,
        correct,
        total: items.len(),
        span_f1,
    })
}

/// Predicted tag sequences can open with an orphan `I-`; score them as
/// the span starts they stand for.
fn repair(mut tags: Vec<String>) -> Vec<String> {
    crate::data::repair_bio(&mut tags);
    tags
}

/// Fine-tunes `model` on `data.train` with a linear warm-up/decay schedule,
/// evaluates on `data.dev` after every epoch (and after the last step), and
/// returns the parameters of the best dev evaluation; ties keep the earlier.
pub fn finetune(mut model: EncoderModel, data: &TaskDataset, spec: &FinetuneSpec, pad: TokenId) -> Result<FinetuneOutcome> {
    spec.validate()?;
    if data.train.is_empty() || data.dev.is_empty() {
        return Err(Error::Data("fine-tuning needs non-empty train and dev splits".into()));
    }
    check_task(&mut model, data, spec)?;
    model.config.dropout = spec.dropout;
    model.config.attention_dropout = spec.dropout;
    let opt = spec.optimizer(data.train.len());
    let total = opt.total_steps;
    let mut state = OptimizerState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epochs: Vec<EpochLog> = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut step = 0u64;
    let mut epoch = 0;
    while step < total {
        epoch += 1;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(spec.batch) {
            if step == total {
                break;
            }
            let examples: Vec<&Example> = chunk.iter().map(|&i| &data.train[i]).collect();
            let mut g = Graph::training(spec.seed.wrapping_mul(0x2545_f491).wrapping_add(step));
            step += 1;
            let Some((loss, bound)) = batch_loss(&mut g, &model, &examples, pad)? else {
                continue;
            };
            loss_sum += g.value(loss).item() as f64;
            batches += 1;
            let grads = g.backward(loss)?;
            let grads = model.collect_grads(&bound, &grads);
            adam_step(&mut model.params, &grads, &mut state, &opt)?;
        }
        let dev = evaluate(&model, &data.dev, &data.labels, pad)?;
        let metric = spec.selection.pick(&dev)?;
        if best.as_ref().is_none_or(|(_, m, _)| spec.selection.better(metric, *m)) {
            best = Some((epoch, metric, model.params.clone()));
        }
        epochs.push(EpochLog {
            epoch,
            step,
            train_loss: if batches == 0 { f64::NAN } else { loss_sum / batches as f64 },
            dev,
            dev_metric: metric,
        });
    }
    let (best_epoch, best_metric, params) = best.ok_or_else(|| Error::Training("no epoch completed".into()))?;
    model.params = params;
    Ok(FinetuneOutcome {
        model,
        epochs,
        best_epoch,
        best_metric,
    })
}
