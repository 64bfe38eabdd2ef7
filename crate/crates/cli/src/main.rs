//! `mlmkit`: every workflow of the toolkit behind one command.

mod commands;
mod config;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlmkit::{Error, ErrorKind};
use toml::Value;

use commands::{AuditSource, Run, TaskInputs};
use config::{parse_override, resolve, Task};

#[derive(Parser)]
#[command(name = "mlmkit", version, about = "Masked-language-model toolkit: tokenizer, pre-training, fine-tuning, evaluation and fairness audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand takes.
#[derive(Args)]
struct RunArgs {
    /// Run directory; all outputs go here. Must be empty or absent.
    #[arg(long)]
    out: PathBuf,
    /// TOML config file, layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named starting configuration, e.g. tiny-pos or diedat-10k.
    #[arg(long)]
    preset: Option<String>,
    /// Override any config key, e.g. --set finetune.lr=3e-5. Repeatable; beats the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct ModelArgs {
    /// Model directory (a tokenizer stored alongside is used by default).
    #[arg(long)]
    model: PathBuf,
    /// Tokenizer directory, when it is not stored with the model.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
}

#[derive(Args)]
struct TaskArgs {
    /// Task whose file format and labels to use; defaults to the preset's.
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long)]
    train: PathBuf,
    /// Dev file; without one a share of the training file is held out.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a byte-level BPE vocabulary from a text corpus.
    TrainTokenizer {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        min_freq: Option<u64>,
    },
    /// Masked-LM pre-training of a fresh or existing model.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        tokenizer: PathBuf,
        /// Continue from this model directory instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tune on a labelled task with dev-based epoch selection.
    Finetune {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Fine-tune once per learning rate × batch size and keep the best dev score.
    GridSearch {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, value_delimiter = ',')]
        lrs: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        batches: Option<Vec<usize>>,
    },
    /// Test accuracy after fine-tuning on growing subsets of the training set.
    LearningCurve {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        task: TaskArgs,
        /// Comma-separated sizes; `full` is the whole training set.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<String>>,
    },
    /// Accuracy with a 95% interval of a fine-tuned model on a test file.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum)]
        task: Option<Task>,
        #[arg(long)]
        test: PathBuf,
    },
    /// Score masked-choice examples with the MLM head, without fine-tuning.
    Zeroshot {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// JSONL examples as written by build-diedat.
        #[arg(long)]
        examples: PathBuf,
    },
    /// Turn a corpus into die/dat masked-choice train and test sets.
    BuildDiedat {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        corpus: PathBuf,
        /// Lines from the start of the corpus used for training.
        #[arg(long)]
        head: Option<usize>,
        /// Lines from the end of the corpus used for testing.
        #[arg(long)]
        tail: Option<usize>,
    },
    /// Demographic parity ratio, equal-opportunity difference and per-group ROC.
    FairnessAudit {
        #[command(flatten)]
        run: RunArgs,
        /// CSV with columns id, score, y, a.
        #[arg(long, conflicts_with_all = ["model", "reviews"])]
        predictions: Option<PathBuf>,
        /// Fine-tuned sentiment model to score `--reviews` with.
        #[arg(long, requires = "reviews")]
        model: Option<PathBuf>,
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        #[arg(long, requires = "model")]
        reviews: Option<PathBuf>,
        /// Decision thresholds, comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        threshold: Option<Vec<f64>>,
        /// Ratings at or above this count as positive.
        #[arg(long)]
        positive_level: Option<f64>,
    },
    /// Rank difference between two pronouns at the mask of profession templates.
    AssociationTest {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// TSV with header profession, gender_score.
        #[arg(long)]
        professions: PathBuf,
        /// TSV with header template, co_referent; built-in templates otherwise.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        male: Option<String>,
        #[arg(long)]
        female: Option<String>,
    },
}

/// Overrides collected from dedicated flags, applied after `--set`.
#[derive(Default)]
struct Overrides(Vec<(Vec<String>, Value)>);

impl Overrides {
    fn set<T: serde::Serialize>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            let v = Value::try_from(v).expect("flag values are plain data");
            self.0.push((key.split('.').map(str::to_string).collect(), v));
        }
    }
}

fn start(run: RunArgs, flags: Overrides) -> Result<Run, Error> {
    let mut all = run.sets.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    all.extend(flags.0);
    let config = resolve(run.preset.as_deref(), run.config.as_deref(), &all)?;
    Run::start(config, run.out)
}

fn inputs<'a>(m: &'a ModelArgs, t: &'a TaskArgs) -> TaskInputs<'a> {
    TaskInputs {
        model: &m.model,
        tokenizer: m.tokenizer.as_deref(),
        train: &t.train,
        dev: t.dev.as_deref(),
        test: t.test.as_deref(),
    }
}

fn execute(command: Command) -> Result<String, Error> {
    let mut o = Overrides::default();
    match command {
        Command::TrainTokenizer {
            run,
            corpus,
            vocab_size,
            min_freq,
        } => {
            o.set("tokenizer.vocab_size", vocab_size);
            o.set("tokenizer.min_pair_frequency", min_freq);
            commands::train_tokenizer(&start(run, o)?, &corpus)
        }
        Command::Pretrain {
            run,
            corpus,
            tokenizer,
            init,
            steps,
            seed,
        } => {
            o.set("pretrain.steps", steps);
            o.set("pretrain.seed", seed);
            commands::pretrain(&start(run, o)?, &corpus, &tokenizer, init.as_deref())
        }
        Command::Finetune {
            run,
            model,
            task,
            lr,
            batch,
        } => {
            o.set("data.task", task.task);
            o.set("finetune.lr", lr);
            o.set("finetune.batch", batch);
            commands::finetune_cmd(&start(run, o)?, &inputs(&model, &task))
        }
        Command::GridSearch {
            run,
            model,
            task,
            lrs,
            batches,
        } => {
            o.set("data.task", task.task);
            o.set("grid.lrs", lrs);
            o.set("grid.batches", batches);
            commands::grid_search_cmd(&start(run, o)?, &inputs(&model, &task))
        }
        Command::LearningCurve { run, model, task, sizes } => {
            o.set("data.task", task.task);
            o.set("curve.sizes", sizes);
            commands::learning_curve_cmd(&start(run, o)?, &inputs(&model, &task))
        }
        Command::Eval { run, model, task, test } => {
            o.set("data.task", task);
            commands::eval(&start(run, o)?, &model.model, model.tokenizer.as_deref(), &test)
        }
        Command::Zeroshot { run, model, examples } => {
            commands::zeroshot(&start(run, o)?, &model.model, model.tokenizer.as_deref(), &examples)
        }
        Command::BuildDiedat { run, corpus, head, tail } => {
            o.set("data.diedat_head", head);
            o.set("data.diedat_tail", tail);
            commands::build_diedat_cmd(&start(run, o)?, &corpus)
        }
        Command::FairnessAudit {
            run,
            predictions,
            model,
            tokenizer,
            reviews,
            threshold,
            positive_level,
        } => {
            o.set("fairness.thresholds", threshold);
            o.set("fairness.positive_level", positive_level);
            let source = match (&predictions, &model, &reviews) {
                (Some(p), _, _) => AuditSource::Predictions(p),
                (None, Some(m), Some(r)) => AuditSource::Model {
                    model: m,
                    tokenizer: tokenizer.as_deref(),
                    reviews: r,
                },
                _ => return Err(Error::Config("give --predictions, or --model with --reviews".into())),
            };
            commands::fairness_audit(&start(run, o)?, source)
        }
        Command::AssociationTest {
            run,
            model,
            professions,
            templates,
            male,
            female,
        } => {
            o.set("association.male", male);
            o.set("association.female", female);
            let run = start(run, o)?;
            commands::association(
                &run,
                &model.model,
                model.tokenizer.as_deref(),
                &professions,
                templates.as_deref(),
            )
        }
    }
}

/// Exit status per error category; clap itself exits with 2 on usage errors.
fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Internal => 1,
        ErrorKind::Config => 3,
        ErrorKind::Data => 4,
        ErrorKind::Training => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
