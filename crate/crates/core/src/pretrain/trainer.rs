use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, mask_batch, MaskingPolicy, MaskingVocab, OptimizerConfig, OptimizerState};
use crate::autodiff::{Graph, Tensor};
use crate::bpe::{SpecialRole, TokenId, TokenizerModel};
use crate::error::{Error, Result};
use crate::model::{save_model, Batch, EncoderModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub masking: MaskingPolicy,
    /// Sequences per optimizer step.
    pub logical_batch: usize,
    /// Sequences per forward/backward pass; must divide `logical_batch`.
    pub micro_batch: usize,
    /// Window length in tokens, begin and end markers included.
    pub max_len: usize,
    /// Optimizer steps to run.
    pub steps: u64,
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

impl PretrainConfig {
    /// Full-scale regime; recorded for reference, not run at desk scale.
    pub fn base() -> Self {
        Self {
            optimizer: OptimizerConfig::pretrain_base(),
            masking: MaskingPolicy::default(),
            logical_batch: 8192,
            micro_batch: 32,
            max_len: 512,
            steps: 16_000,
            checkpoint_every: Some(1000),
            seed: 0,
        }
    }

    /// Desk-scale regime for the tiny model.
    pub fn tiny() -> Self {
        Self {
            optimizer: OptimizerConfig {
                peak_lr: 1e-3,
                warmup_steps: 100,
                total_steps: 2000,
                weight_decay: 0.01,
                ..OptimizerConfig::pretrain_base()
            },
            masking: MaskingPolicy::default(),
            logical_batch: 16,
            micro_batch: 8,
            max_len: 64,
            steps: 2000,
            checkpoint_every: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.masking.validate()?;
        if self.micro_batch == 0 || !self.logical_batch.is_multiple_of(self.micro_batch) {
            return Err(Error::Config(format!(
                "micro batch {} does not divide logical batch {}",
                self.micro_batch, self.logical_batch
            )));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must leave room for content tokens".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub tokens_seen: u64,
}

/// Packs corpus lines into `[begin] … [end]` windows of at most `max_len`
/// tokens. Consecutive lines share a window while they fit; a blank line
/// ends a document and no window crosses it. Lines longer than a window
/// are split.
pub fn pack_corpus<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    tokenizer: &TokenizerModel,
    max_len: usize,
) -> Result<Vec<Vec<TokenId>>> {
    let bos = tokenizer.require_special(SpecialRole::Bos)?;
    let eos = tokenizer.require_special(SpecialRole::Eos)?;
    let budget = max_len.saturating_sub(2);
    if budget == 0 {
        return Err(Error::Config("max_len must leave room for content tokens".into()));
    }
    let mut windows = Vec::new();
    let mut current: Vec<TokenId> = Vec::new();
    let mut flush = |cur: &mut Vec<TokenId>| {
        if !cur.is_empty() {
            let mut w = Vec::with_capacity(cur.len() + 2);
            w.push(bos);
            w.append(cur);
            w.push(eos);
            windows.push(w);
        }
    };
    for line in lines {
        if line.trim().is_empty() {
            flush(&mut current);
            continue;
        }
        let ids = tokenizer.encode(line, false)?.ids;
        if current.len() + ids.len() > budget {
            flush(&mut current);
        }
        for chunk in ids.chunks(budget) {
            if current.len() + chunk.len() > budget {
                flush(&mut current);
            }
            current.extend_from_slice(chunk);
        }
    }
    flush(&mut current);
    Ok(windows)
}

/// Masking vocabulary of a tokenizer whose specials precede all other ids.
pub fn masking_vocab(tokenizer: &TokenizerModel) -> Result<MaskingVocab> {
    Ok(MaskingVocab {
        mask_id: tokenizer.require_special(SpecialRole::Mask)?,
        first_regular: tokenizer.specials().len() as TokenId,
        vocab_size: tokenizer.vocab_size(),
    })
}

/// Gradients for one logical batch, accumulated over micro batches.
///
/// Each micro batch's mean loss is back-propagated with weight
/// `masked_in_micro / masked_in_logical`, so the sum equals the gradient of
/// the mean loss over every masked token of the logical batch.
pub struct Accumulated {
    pub grads: Vec<Tensor>,
    pub loss: f64,
    pub masked_tokens: usize,
}

pub fn accumulate_gradients(
    model: &EncoderModel,
    inputs: &[Vec<TokenId>],
    labels: &[Vec<Option<TokenId>>],
    micro_batch: usize,
    pad: TokenId,
    dropout_seed: u64,
) -> Result<Accumulated> {
    let total: usize = labels.iter().flatten().filter(|l| l.is_some()).count();
    if total == 0 {
        return Err(Error::UndefinedMetric("logical batch has no masked token".into()));
    }
    let mut acc: Vec<Tensor> = model.params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
    let mut loss_sum = 0.0;
    for (k, (inp, lab)) in inputs.chunks(micro_batch).zip(labels.chunks(micro_batch)).enumerate() {
        let batch = Batch::from_sequences(inp, pad)?;
        let mut flat = vec![None; batch.ids.len()];
        for (i, l) in lab.iter().enumerate() {
            flat[batch.row(i, 0)..batch.row(i, 0) + l.len()].copy_from_slice(l);
        }
        let n = flat.iter().filter(|l| l.is_some()).count();
        if n == 0 {
            continue;
        }
        let mut g = Graph::training(dropout_seed.wrapping_add(k as u64));
        let bound = model.bind(&mut g)?;
        let loss = model.mlm_loss(&mut g, &bound, &batch, &flat)?;
        let weight = n as f64 / total as f64;
        loss_sum += g.value(loss).item() as f64 * n as f64;
        let grads = g.backward_scaled(loss, weight)?;
        for (a, t) in acc.iter_mut().zip(model.collect_grads(&bound, &grads)) {
            for (x, y) in a.data_mut().iter_mut().zip(t.data()) {
                *x += *y;
            }
        }
    }
    Ok(Accumulated {
        grads: acc,
        loss: loss_sum / total as f64,
        masked_tokens: total,
    })
}

/// Streams logical batches of windows, reshuffled each epoch.
struct Epochs<'a> {
    windows: &'a [Vec<TokenId>],
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl<'a> Epochs<'a> {
    fn new(windows: &'a [Vec<TokenId>], seed: u64) -> Self {
        let mut e = Self {
            windows,
            order: (0..windows.len()).collect(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        e.order.shuffle(&mut e.rng);
        e
    }

    fn take(&mut self, n: usize) -> Vec<Vec<TokenId>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.windows[self.order[self.cursor]].clone());
            self.cursor += 1;
        }
        out
    }
}

/// Runs `config.steps` optimizer steps on pre-packed windows, calling
/// `on_step` after every step and `on_checkpoint` at the configured
/// interval and after the last step.
pub fn pretrain(
    model: &mut EncoderModel,
    windows: &[Vec<TokenId>],
    vocab: &MaskingVocab,
    pad: TokenId,
    config: &PretrainConfig,
    on_step: &mut dyn FnMut(&StepLog) -> Result<()>,
    on_checkpoint: &mut dyn FnMut(u64, &EncoderModel) -> Result<()>,
) -> Result<OptimizerState> {
    config.validate()?;
    if windows.len() < config.micro_batch {
        return Err(Error::Data(format!(
            "corpus packs into {} windows, fewer than one micro batch of {}",
            windows.len(),
            config.micro_batch
        )));
    }
    if let Some(w) = windows.iter().find(|w| w.len() > config.max_len) {
        return Err(Error::TooLong {
            len: w.len(),
            max: config.max_len,
        });
    }
    let mut epochs = Epochs::new(windows, config.seed);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d61_736b);
    let mut state = OptimizerState::new(&model.params);
    let mut tokens_seen = 0u64;
    for step in 1..=config.steps {
        let seqs = epochs.take(config.logical_batch);
        tokens_seen += seqs.iter().map(|s| s.len() as u64).sum::<u64>();
        // Masks are drawn for the whole logical batch before it is split,
        // so the split cannot change which tokens are predicted.
        let (inputs, labels) = loop {
            let (i, l) = mask_batch(&seqs, &config.masking, vocab, &mut mask_rng);
            if l.iter().flatten().any(|x| x.is_some()) || config.masking.select_prob == 0.0 {
                break (i, l);
            }
        };
        let dropout_seed = config.seed.wrapping_mul(0x9e37_79b9).wrapping_add(step << 16);
        let acc = accumulate_gradients(model, &inputs, &labels, config.micro_batch, pad, dropout_seed)?;
        let lr = adam_step(&mut model.params, &acc.grads, &mut state, &config.optimizer)?;
        on_step(&StepLog {
            step,
            lr,
            loss: acc.loss,
            tokens_seen,
        })?;
        let due = config.checkpoint_every.is_some_and(|k| k > 0 && step % k == 0);
        if due || step == config.steps {
            on_checkpoint(step, model)?;
        }
    }
    Ok(state)
}

/// [`pretrain`] writing `loss_log.csv` (step, lr, loss, tokens_seen) and
/// `checkpoints/step-N` under `out_dir`. Returns the per-step log.
pub fn pretrain_to_dir(
    model: &mut EncoderModel,
    corpus: &[&str],
    tokenizer: &TokenizerModel,
    config: &PretrainConfig,
    out_dir: &Path,
) -> Result<Vec<StepLog>> {
    let windows = pack_corpus(corpus.iter().copied(), tokenizer, config.max_len)?;
    let vocab = masking_vocab(tokenizer)?;
    let pad = tokenizer.require_special(SpecialRole::Pad)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("loss_log.csv");
    let exists = log_path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut writer = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    let mut log = Vec::new();
    let ckpt_dir = out_dir.join("checkpoints");
    pretrain(
        model,
        &windows,
        &vocab,
        pad,
        config,
        &mut |entry| {
            writer.serialize(entry)?;
            writer.flush().map_err(|e| Error::io(&log_path, e))?;
            log.push(entry.clone());
            Ok(())
        },
        &mut |step, m| save_model(m, &ckpt_dir.join(format!("step-{step}"))),
    )?;
    Ok(log)
}

/// Top-1 accuracy of the MLM head at masked positions of `windows`.
pub fn masked_accuracy(
    model: &EncoderModel,
    windows: &[Vec<TokenId>],
    vocab: &MaskingVocab,
    pad: TokenId,
    policy: &MaskingPolicy,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut correct, mut total) = (0usize, 0usize);
    for chunk in windows.chunks(16) {
        let (inputs, labels) = mask_batch(chunk, policy, vocab, &mut rng);
        let batch = Batch::from_sequences(&inputs, pad)?;
        let mut rows = Vec::new();
        let mut gold = Vec::new();
        for (i, lab) in labels.iter().enumerate() {
            for (pos, l) in lab.iter().enumerate() {
                if let Some(t) = l {
                    rows.push(batch.row(i, pos));
                    gold.push(*t as usize);
                }
            }
        }
        if rows.is_empty() {
            continue;
        }
        let logits = model.forward_mlm_rows(&batch, &rows)?;
        for (r, &g) in gold.iter().enumerate() {
            correct += usize::from(argmax(logits.row(r)) == g);
        }
        total += rows.len();
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no masked positions to score".into()));
    }
    Ok(correct as f64 / total as f64)
}

pub(crate) fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::{train_bpe, TrainerConfig};

    fn tokenizer() -> TokenizerModel {
        let cfg = TrainerConfig {
            target_vocab_size: 300,
            min_pair_frequency: 2,
            ..Default::default()
        };
        train_bpe(["een twee drie", "vier vijf zes", "een twee"], &cfg).unwrap()
    }

    #[test]
    fn packing_respects_budget_and_documents() {
        let tok = tokenizer();
        let lines = ["een twee drie", "vier vijf zes", "", "een twee", "een twee drie vier vijf zes een twee drie"];
        let windows = pack_corpus(lines, &tok, 12).unwrap();
        let bos = tok.special(SpecialRole::Bos).unwrap();
        let eos = tok.special(SpecialRole::Eos).unwrap();
        for w in &windows {
            assert!(w.len() <= 12);
            assert_eq!((w[0], *w.last().unwrap()), (bos, eos));
        }
        let body: Vec<TokenId> = windows.iter().flat_map(|w| w[1..w.len() - 1].to_vec()).collect();
        let expected: Vec<TokenId> = lines.iter().flat_map(|l| tok.encode(l, false).unwrap().ids).collect();
        assert_eq!(body, expected);
        // The blank line forces a boundary even though both halves would fit.
        let first_doc_len: usize = lines[..2].iter().map(|l| tok.encode(l, false).unwrap().len()).sum();
        assert!(windows.iter().any(|w| w.len() - 2 == first_doc_len) || first_doc_len > 10);
    }

    #[test]
    fn too_small_corpus_is_a_data_error() {
        let tok = tokenizer();
        let windows = pack_corpus(["een twee"], &tok, 16).unwrap();
        let mut model = EncoderModel::init(crate::model::ModelConfig::tiny(tok.vocab_size()), 0).unwrap();
        let cfg = PretrainConfig {
            logical_batch: 4,
            micro_batch: 2,
            steps: 1,
            ..PretrainConfig::tiny()
        };
        let err = pretrain(
            &mut model,
            &windows,
            &masking_vocab(&tok).unwrap(),
            1,
            &cfg,
            &mut |_| Ok(()),
            &mut |_, _| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn base_preset_is_recorded() {
        let c = PretrainConfig::base();
        c.validate().unwrap();
        assert_eq!(c.logical_batch, 8192);
        assert_eq!(c.steps, 16_000);
        assert_eq!(c.optimizer.peak_lr, 1e-6);
    }
}
