//! Desk-scale masked-language-model toolkit.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bpe;
pub mod data;
pub mod error;
pub mod fairness;
pub mod finetune;
pub mod metrics;
pub mod model;
pub mod pretrain;
pub mod zeroshot;

pub use error::{Error, ErrorKind, Result};
