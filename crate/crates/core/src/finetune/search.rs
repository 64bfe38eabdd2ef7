use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, finetune, subsample, EpochLog, Example, FinetuneOutcome, FinetuneSpec, TaskDataset};
use crate::bpe::TokenId;
use crate::error::{Error, Result};
use crate::metrics::accuracy_ci;
use crate::model::EncoderModel;

/// Learning rates × batch sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lrs: Vec<f64>,
    pub batches: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lrs: vec![1e-5, 2e-5, 3e-5, 1e-4],
            batches: vec![16, 32, 48],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub batch: usize,
    pub dev_metric: f64,
}

pub struct GridOutcome {
    pub best: FinetuneSpec,
    pub table: Vec<GridCell>,
    pub outcome: FinetuneOutcome,
}

/// Fine-tunes a fresh model from `factory` for every grid cell and keeps the
/// best dev score. Cells are visited by ascending learning rate, then
/// ascending batch size, and only a strictly better score replaces the
/// incumbent.
pub fn grid_search(
    factory: &dyn Fn() -> Result<EncoderModel>,
    data: &TaskDataset,
    base: &FinetuneSpec,
    grid: &Grid,
    pad: TokenId,
) -> Result<GridOutcome> {
    if grid.lrs.is_empty() || grid.batches.is_empty() {
        return Err(Error::Config("grid search needs at least one learning rate and batch size".into()));
    }
    let mut lrs = grid.lrs.clone();
    lrs.sort_by(f64::total_cmp);
    let mut batches = grid.batches.clone();
    batches.sort_unstable();
    let higher = base.selection.higher_is_better();
    let mut table = Vec::new();
    let mut best: Option<(FinetuneSpec, FinetuneOutcome)> = None;
    for &lr in &lrs {
        for &batch in &batches {
            let spec = FinetuneSpec {
                lr,
                batch,
                ..base.clone()
            };
            let outcome = finetune(factory()?, data, &spec, pad)?;
            let m = outcome.best_metric;
            table.push(GridCell {
                lr,
                batch,
                dev_metric: m,
            });
            let wins = match &best {
                None => true,
                Some((_, b)) => {
                    if higher {
                        m > b.best_metric
                    } else {
                        m < b.best_metric
                    }
                }
            };
            if wins {
                best = Some((spec, outcome));
            }
        }
    }
    let (best, outcome) = best.expect("grid is non-empty");
    Ok(GridOutcome { best, table, outcome })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveSpec {
    /// Training-set sizes, sorted one way or the other.
    pub sizes: Vec<usize>,
    pub spec: FinetuneSpec,
    /// Seed of the single shuffle that all subsets are prefixes of.
    pub subset_seed: u64,
}

impl LearningCurveSpec {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|&s| s == 0 || s > n_train) {
            return Err(Error::Config(format!(
                "learning-curve sizes {:?} must lie in [1, {n_train}]",
                self.sizes
            )));
        }
        let asc = self.sizes.windows(2).all(|w| w[0] < w[1]);
        let desc = self.sizes.windows(2).all(|w| w[0] > w[1]);
        if !asc && !desc {
            return Err(Error::Config("learning-curve sizes must be strictly sorted".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub accuracy: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Test accuracy after fine-tuning on nested subsets of the training set.
/// Every run uses the same hyperparameters and the full dev set for
/// selection.
pub fn learning_curve(
    factory: &dyn Fn() -> Result<EncoderModel>,
    data: &TaskDataset,
    test: &[Example],
    curve: &LearningCurveSpec,
    pad: TokenId,
) -> Result<Vec<CurvePoint>> {
    curve.validate(data.train.len())?;
    let mut points = Vec::with_capacity(curve.sizes.len());
    for &size in &curve.sizes {
        let subset = TaskDataset {
            train: subsample(&data.train, size, curve.subset_seed),
            dev: data.dev.clone(),
            labels: data.labels.clone(),
        };
        let outcome = finetune(factory()?, &subset, &curve.spec, pad)?;
        let m = evaluate(&outcome.model, test, &data.labels, pad)?;
        let ci = accuracy_ci(m.correct, m.total)?;
        points.push(CurvePoint {
            size,
            accuracy: ci.accuracy,
            ci_lo: ci.lower,
            ci_hi: ci.upper,
        });
    }
    Ok(points)
}

pub fn write_grid_csv(path: &Path, table: &[GridCell]) -> Result<()> {
    write_rows(path, table)
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let rows: Vec<(usize, f64, f64, f64)> = points.iter().map(|p| (p.size, p.accuracy, p.ci_lo, p.ci_hi)).collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["size", "acc", "ci_lo", "ci_hi"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_epoch_log_csv(path: &Path, epochs: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "step", "train_loss", "dev_metric"])?;
    for e in epochs {
        w.serialize((e.epoch, e.step, e.train_loss, e.dev_metric))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
