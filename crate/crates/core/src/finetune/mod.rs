//! Task fine-tuning: sequence, paired-sequence and token classification,
//! dev-based model selection, grid search and learning curves.

mod examples;
mod search;
mod train;

pub use examples::{
    carve_dev, label_inventory, make_pair_example, review_examples, subsample, tagged_examples, truncate_tail, Example,
    TaskDataset, Target,
};
pub(crate) use examples::{fit_context, slot_form};
pub use search::{
    grid_search, learning_curve, write_curve_csv, write_epoch_log_csv, write_grid_csv, CurvePoint, Grid, GridCell,
    GridOutcome, LearningCurveSpec,
};
pub use train::{
    evaluate, finetune, predict, DevMetrics, Duration, EpochLog, FinetuneOutcome, FinetuneSpec, SelectionMetric,
    TaskKind, Warmup,
};
