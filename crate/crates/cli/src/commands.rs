//! One function per subcommand. Each reads its inputs, writes everything it
//! produces under the run directory and returns a one-line summary.

use std::fs;
use std::path::{Path, PathBuf};

use mlmkit::bpe::{load_tokenizer, save_tokenizer, train_bpe, SpecialRole, TokenizerModel};
use mlmkit::data::{build_diedat, read_examples_jsonl, read_lines, write_examples_jsonl, DIEDAT_WORDS};
use mlmkit::fairness::{
    association_test, audit, default_templates, load_predictions, load_professions, load_templates,
    write_association_csv, write_fairness_report, write_group_roc, write_predictions, FairnessRecord,
};
use mlmkit::finetune::{
    evaluate, finetune, grid_search, learning_curve, review_examples, write_curve_csv, write_epoch_log_csv,
    write_grid_csv, DevMetrics, FinetuneOutcome, LearningCurveSpec, TaskDataset,
};
use mlmkit::metrics::{accuracy_ci, write_metric_report};
use mlmkit::model::{load_model, save_model, Batch, EncoderModel};
use mlmkit::pretrain::{masked_accuracy, masking_vocab, pack_corpus, pretrain_to_dir};
use mlmkit::zeroshot::{eval_zeroshot, write_outcomes_csv, MlmScorer};
use mlmkit::{Error, Result};
use serde::Serialize;

use crate::config::{write_snapshot, RunConfig};
use crate::tasks::{labels, load_dataset, load_examples};

pub const METRICS_FILE: &str = "metrics.csv";

/// A resolved configuration and the directory the run owns.
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
}

impl Run {
    /// Creates the run directory, which must not hold earlier results, and
    /// writes the config snapshot into it.
    pub fn start(config: RunConfig, dir: PathBuf) -> Result<Self> {
        if dir.exists() {
            let mut entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
            if entries.next().is_some() {
                return Err(Error::Config(format!("run directory {} is not empty", dir.display())));
            }
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_snapshot(&config, &dir)?;
        Ok(Self { config, dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// A model directory also carries its tokenizer; the file names do not clash.
fn save_bundle(model: &EncoderModel, tok: &TokenizerModel, dir: &Path) -> Result<()> {
    save_model(model, dir)?;
    save_tokenizer(tok, dir)
}

pub fn load_bundle(model_dir: &Path, tokenizer_dir: Option<&Path>) -> Result<(EncoderModel, TokenizerModel)> {
    let model = load_model(model_dir)?;
    let tok = load_tokenizer(tokenizer_dir.unwrap_or(model_dir))?;
    if tok.vocab_size() != model.config.vocab_size {
        return Err(Error::Config(format!(
            "tokenizer has {} entries but the model expects {}",
            tok.vocab_size(),
            model.config.vocab_size
        )));
    }
    Ok((model, tok))
}

#[derive(Serialize)]
struct MetricRow<'a> {
    split: &'a str,
    n: usize,
    correct: usize,
    accuracy: f64,
    ci_lo: f64,
    ci_hi: f64,
    loss: Option<f64>,
    span_f1: Option<f64>,
}

fn metric_row<'a>(split: &'a str, m: &DevMetrics) -> Result<MetricRow<'a>> {
    let ci = accuracy_ci(m.correct, m.total)?;
    Ok(MetricRow {
        split,
        n: m.total,
        correct: m.correct,
        accuracy: ci.accuracy,
        ci_lo: ci.lower,
        ci_hi: ci.upper,
        loss: Some(m.loss),
        span_f1: m.span_f1,
    })
}

fn write_rows(path: &Path, rows: &[MetricRow<'_>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn pad_of(tok: &TokenizerModel) -> Result<u32> {
    tok.require_special(SpecialRole::Pad)
}

pub fn train_tokenizer(run: &Run, corpus: &Path) -> Result<String> {
    let lines = read_lines(corpus)?;
    let tok = train_bpe(lines.iter().map(String::as_str), &run.config.tokenizer.trainer())?;
    save_tokenizer(&tok, &run.path("tokenizer"))?;
    write_metric_report(
        &run.path(METRICS_FILE),
        &[("vocab_size", tok.vocab_size() as f64), ("merges", tok.merges().len() as f64)],
    )?;
    Ok(format!("tokenizer with {} entries", tok.vocab_size()))
}

pub fn pretrain(run: &Run, corpus: &Path, tokenizer: &Path, init: Option<&Path>) -> Result<String> {
    let tok = load_tokenizer(tokenizer)?;
    let cfg = &run.config;
    let mut model = match init {
        Some(dir) => load_bundle(dir, Some(tokenizer))?.0,
        None => EncoderModel::init(cfg.model.build(tok.vocab_size())?, cfg.model.init_seed)?,
    };
    let lines = read_lines(corpus)?;
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    let log = pretrain_to_dir(&mut model, &refs, &tok, &cfg.pretrain, &run.dir)?;
    let ckpts = run.path("checkpoints");
    if ckpts.exists() {
        for entry in fs::read_dir(&ckpts).map_err(|e| Error::io(&ckpts, e))? {
            let entry = entry.map_err(|e| Error::io(&ckpts, e))?;
            save_tokenizer(&tok, &entry.path())?;
        }
    }
    save_bundle(&model, &tok, &run.path("model"))?;
    let windows = pack_corpus(refs.iter().copied(), &tok, cfg.pretrain.max_len)?;
    let acc = masked_accuracy(
        &model,
        &windows,
        &masking_vocab(&tok)?,
        pad_of(&tok)?,
        &cfg.pretrain.masking,
        cfg.pretrain.seed,
    )?;
    let last = log.last().ok_or_else(|| Error::Training("no optimizer step was taken".into()))?;
    write_metric_report(
        &run.path(METRICS_FILE),
        &[
            ("steps", last.step as f64),
            ("tokens_seen", last.tokens_seen as f64),
            ("final_loss", last.loss),
            ("masked_accuracy", acc),
        ],
    )?;
    Ok(format!("{} steps, final loss {:.4}, masked top-1 {:.4}", last.step, last.loss, acc))
}

/// Inputs shared by the fine-tuning family of commands.
pub struct TaskInputs<'a> {
    pub model: &'a Path,
    pub tokenizer: Option<&'a Path>,
    pub train: &'a Path,
    pub dev: Option<&'a Path>,
    pub test: Option<&'a Path>,
}

fn prepare(run: &Run, inputs: &TaskInputs<'_>) -> Result<(EncoderModel, TokenizerModel, TaskDataset)> {
    let (model, tok) = load_bundle(inputs.model, inputs.tokenizer)?;
    let data = load_dataset(&run.config.data, inputs.train, inputs.dev, &tok, run.config.finetune.seed)?;
    Ok((model, tok, data))
}

fn report_outcome(
    run: &Run,
    outcome: &FinetuneOutcome,
    tok: &TokenizerModel,
    data: &TaskDataset,
    test: Option<&Path>,
) -> Result<String> {
    write_epoch_log_csv(&run.path("epoch_log.csv"), &outcome.epochs)?;
    save_bundle(&outcome.model, tok, &run.path("model"))?;
    let pad = pad_of(tok)?;
    let dev = outcome.epochs[outcome.best_epoch - 1].dev;
    let mut rows = vec![metric_row("dev", &dev)?];
    let mut summary = format!("best epoch {} with dev metric {:.4}", outcome.best_epoch, outcome.best_metric);
    let test_metrics = match test {
        Some(p) => {
            let examples = load_examples(run.config.data.task, p, tok, run.config.data.max_len)?;
            Some(evaluate(&outcome.model, &examples, &data.labels, pad)?)
        }
        None => None,
    };
    if let Some(m) = &test_metrics {
        rows.push(metric_row("test", m)?);
        summary.push_str(&format!(", test accuracy {:.4}", m.accuracy));
    }
    write_rows(&run.path(METRICS_FILE), &rows)?;
    Ok(summary)
}

pub fn finetune_cmd(run: &Run, inputs: &TaskInputs<'_>) -> Result<String> {
    let (model, tok, data) = prepare(run, inputs)?;
    let outcome = finetune(model, &data, &run.config.finetune, pad_of(&tok)?)?;
    report_outcome(run, &outcome, &tok, &data, inputs.test)
}

pub fn grid_search_cmd(run: &Run, inputs: &TaskInputs<'_>) -> Result<String> {
    let (model, tok, data) = prepare(run, inputs)?;
    let factory = || Ok(model.clone());
    let g = grid_search(&factory, &data, &run.config.finetune, &run.config.grid, pad_of(&tok)?)?;
    write_grid_csv(&run.path("grid.csv"), &g.table)?;
    let best = toml::to_string(&g.best).map_err(|e| Error::Config(e.to_string()))?;
    let best_path = run.path("best.toml");
    fs::write(&best_path, best).map_err(|e| Error::io(&best_path, e))?;
    let summary = report_outcome(run, &g.outcome, &tok, &data, inputs.test)?;
    Ok(format!("lr {} batch {}: {summary}", g.best.lr, g.best.batch))
}

pub fn learning_curve_cmd(run: &Run, inputs: &TaskInputs<'_>) -> Result<String> {
    let test_path = inputs
        .test
        .ok_or_else(|| Error::Config("learning-curve needs a test file".into()))?;
    let (model, tok, data) = prepare(run, inputs)?;
    let test = load_examples(run.config.data.task, test_path, &tok, run.config.data.max_len)?;
    let curve = LearningCurveSpec {
        sizes: run.config.curve.resolve(data.train.len())?,
        spec: run.config.finetune.clone(),
        subset_seed: run.config.curve.subset_seed,
    };
    let factory = || Ok(model.clone());
    let points = learning_curve(&factory, &data, &test, &curve, pad_of(&tok)?)?;
    write_curve_csv(&run.path("learning_curve.csv"), &points)?;
    let table: Vec<String> = points.iter().map(|p| format!("{}: {:.4}", p.size, p.accuracy)).collect();
    Ok(table.join(", "))
}

pub fn eval(run: &Run, model: &Path, tokenizer: Option<&Path>, test: &Path) -> Result<String> {
    let (model, tok) = load_bundle(model, tokenizer)?;
    let task = run.config.data.task;
    let examples = load_examples(task, test, &tok, run.config.data.max_len)?;
    let m = evaluate(&model, &examples, &labels(task), pad_of(&tok)?)?;
    let row = metric_row("test", &m)?;
    let summary = format!("accuracy {:.4} ({:.4}, {:.4})", row.accuracy, row.ci_lo, row.ci_hi);
    write_rows(&run.path(METRICS_FILE), &[row])?;
    Ok(summary)
}

pub fn zeroshot(run: &Run, model: &Path, tokenizer: Option<&Path>, examples: &Path) -> Result<String> {
    let (model, tok) = load_bundle(model, tokenizer)?;
    let examples = read_examples_jsonl(examples)?;
    let report = eval_zeroshot(
        &MlmScorer {
            model: &model,
            tokenizer: &tok,
        },
        &examples,
    )?;
    write_outcomes_csv(&run.path("outcomes.csv"), &examples, &report)?;
    let ci = report.accuracy;
    write_rows(
        &run.path(METRICS_FILE),
        &[MetricRow {
            split: "test",
            n: examples.len(),
            correct: report.correct,
            accuracy: ci.accuracy,
            ci_lo: ci.lower,
            ci_hi: ci.upper,
            loss: None,
            span_f1: None,
        }],
    )?;
    Ok(format!("accuracy {:.4} ({:.4}, {:.4})", ci.accuracy, ci.lower, ci.upper))
}

pub fn build_diedat_cmd(run: &Run, corpus: &Path) -> Result<String> {
    let lines = read_lines(corpus)?;
    let d = &run.config.data;
    let split = build_diedat(&lines, d.diedat_head, d.diedat_tail, &DIEDAT_WORDS)?;
    write_examples_jsonl(&run.path("train.jsonl"), &split.train)?;
    write_examples_jsonl(&run.path("test.jsonl"), &split.test)?;
    write_metric_report(
        &run.path(METRICS_FILE),
        &[
            ("train_examples", split.train.len() as f64),
            ("test_examples", split.test.len() as f64),
            ("skipped_lines", split.skipped_lines as f64),
        ],
    )?;
    Ok(format!("{} train and {} test examples", split.train.len(), split.test.len()))
}

/// Where the audited scores come from.
pub enum AuditSource<'a> {
    Predictions(&'a Path),
    /// A fine-tuned binary sentiment model scored on reviews; the score is
    /// the positive logit minus the negative one.
    Model {
        model: &'a Path,
        tokenizer: Option<&'a Path>,
        reviews: &'a Path,
    },
}

fn score_reviews(run: &Run, model: &Path, tokenizer: Option<&Path>, reviews: &Path) -> Result<Vec<FairnessRecord>> {
    let (model, tok) = load_bundle(model, tokenizer)?;
    if model.heads.seq_classes != Some(2) {
        return Err(Error::Config("fairness audit needs a model with a two-class sequence head".into()));
    }
    let reviews = mlmkit::data::load_reviews(reviews)?;
    let examples = review_examples(&reviews, &tok, run.config.data.max_len)?;
    let pad = pad_of(&tok)?;
    let wanted = run.config.fairness.attribute_value.to_lowercase();
    let mut out = Vec::with_capacity(reviews.len());
    for (chunk_i, chunk) in examples.chunks(32).enumerate() {
        let seqs: Vec<Vec<u32>> = chunk.iter().map(|e| e.ids.clone()).collect();
        let logits = model.forward_seq_cls(&Batch::from_sequences(&seqs, pad)?)?;
        for j in 0..chunk.len() {
            let i = chunk_i * 32 + j;
            let row = logits.row(j);
            out.push(FairnessRecord {
                id: (i + 1).to_string(),
                y: reviews[i].label.index() == 1,
                score: (row[1] - row[0]) as f64,
                a: reviews[i].gender.as_ref().map(|g| g.to_lowercase() == wanted),
            });
        }
    }
    Ok(out)
}

pub fn fairness_audit(run: &Run, source: AuditSource<'_>) -> Result<String> {
    let f = &run.config.fairness;
    let records = match source {
        AuditSource::Predictions(p) => load_predictions(p, f.positive_level)?,
        AuditSource::Model {
            model,
            tokenizer,
            reviews,
        } => {
            let r = score_reviews(run, model, tokenizer, reviews)?;
            write_predictions(&run.path("predictions.csv"), &r)?;
            r
        }
    };
    if f.thresholds.is_empty() {
        return Err(Error::Config("fairness audit needs at least one threshold".into()));
    }
    let mut reports = Vec::new();
    for (i, &t) in f.thresholds.iter().enumerate() {
        let (report, rocs) = audit(&records, t, f.designated)?;
        let name = if f.thresholds.len() == 1 {
            "roc_by_group.csv".to_string()
        } else {
            format!("roc_by_group_{i}.csv")
        };
        write_group_roc(&run.path(&name), &rocs)?;
        reports.push(report);
    }
    write_fairness_report(&run.path("fairness_report.csv"), &reports)?;
    let r = &reports[0];
    let show = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    Ok(format!(
        "threshold {}: dpr {}, eo {}, auc {:.4} / {:.4}",
        r.threshold,
        show(r.dpr),
        show(r.eo_diff),
        r.auc_rest,
        r.auc_designated
    ))
}

pub fn association(
    run: &Run,
    model: &Path,
    tokenizer: Option<&Path>,
    professions: &Path,
    templates: Option<&Path>,
) -> Result<String> {
    let (model, tok) = load_bundle(model, tokenizer)?;
    let professions = load_professions(professions)?;
    let templates = match templates {
        Some(p) => load_templates(p)?,
        None => default_templates(),
    };
    let a = &run.config.association;
    let rows = association_test(&model, &tok, &templates, &professions, (&a.male, &a.female))?;
    write_association_csv(&run.path("association.csv"), &templates, &rows)?;
    Ok(format!("{} template × profession rows", rows.len()))
}
