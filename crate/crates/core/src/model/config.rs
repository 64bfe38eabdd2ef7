use serde::{Deserialize, Serialize};

use crate::autodiff::GeluKind;
use crate::error::{Error, Result};

/// Position ids start here; slots below are reserved, so a sequence may hold
/// at most `max_positions - POSITION_OFFSET` tokens.
pub const POSITION_OFFSET: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub attention_dropout: f64,
    #[serde(default = "yes")]
    pub tie_lm_head_to_embeddings: bool,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default)]
    pub gelu: GeluKind,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn yes() -> bool {
    true
}

fn default_eps() -> f64 {
    1e-5
}

fn default_init_std() -> f64 {
    0.02
}

impl ModelConfig {
    /// Desk-scale model: 2 layers, width 64, 128 usable positions.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 2,
            ffn_hidden: 256,
            vocab_size,
            max_positions: 128 + POSITION_OFFSET,
            dropout: 0.1,
            attention_dropout: 0.1,
            tie_lm_head_to_embeddings: true,
            layer_norm_eps: default_eps(),
            gelu: GeluKind::Exact,
            init_std: default_init_std(),
        }
    }

    /// The full-size 12-layer, 768-wide model with a 40k vocabulary.
    pub fn base() -> Self {
        Self {
            layers: 12,
            hidden: 768,
            heads: 12,
            ffn_hidden: 3072,
            vocab_size: 40_000,
            max_positions: 512 + POSITION_OFFSET,
            ..Self::tiny(40_000)
        }
    }

    pub fn max_sequence_len(&self) -> usize {
        self.max_positions.saturating_sub(POSITION_OFFSET)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn without_dropout(mut self) -> Self {
        self.dropout = 0.0;
        self.attention_dropout = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|p| p.1 == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.max_positions <= POSITION_OFFSET {
            return Err(Error::Config(format!(
                "max_positions must exceed the {POSITION_OFFSET} reserved slots"
            )));
        }
        for (name, p) in [("dropout", self.dropout), ("attention_dropout", self.attention_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} not in [0, 1)")));
            }
        }
        if !(self.layer_norm_eps > 0.0) || !(self.init_std > 0.0) {
            return Err(Error::Config("layer_norm_eps and init_std must be positive".into()));
        }
        Ok(())
    }
}

/// Closed-form parameter count of the encoder plus its masked-LM head.
///
/// Embeddings `V·H + P·H + 2H`; each layer `4(H²+H) + (H·F+F) + (F·H+H) + 4H`;
/// LM head `H²+H + 2H + V`, plus `V·H` when the output projection is untied.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let (h, f, v, p, l) = (
        config.hidden,
        config.ffn_hidden,
        config.vocab_size,
        config.max_positions,
        config.layers,
    );
    let embeddings = v * h + p * h + 2 * h;
    let layer = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h;
    let mut head = h * h + h + 2 * h + v;
    if !config.tie_lm_head_to_embeddings {
        head += v * h;
    }
    embeddings + layer * l + head
}
