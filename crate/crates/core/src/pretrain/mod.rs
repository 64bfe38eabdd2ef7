//! Masked-LM pre-training: dynamic masking, Adam with warm-up and decay, and
//! gradient accumulation.

mod masking;
mod optim;
mod trainer;

pub use masking::{mask_batch, MaskingPolicy, MaskingVocab};
pub use optim::{adam_step, lr_at, Decay, OptimizerConfig, OptimizerState};
pub use trainer::{
    accumulate_gradients, masked_accuracy, masking_vocab, pack_corpus, pretrain, pretrain_to_dir, Accumulated,
    PretrainConfig, StepLog,
};
