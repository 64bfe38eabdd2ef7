use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Named parameters in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    map: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.map.get_index_of(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.map.values()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }
}

/// Biases and normalization parameters are not weight-decayed.
pub fn is_decay_exempt(name: &str) -> bool {
    name.ends_with(".bias") || name.contains(".norm.")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Which task heads sit on top of the encoder besides the masked-LM head.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub seq_classes: Option<usize>,
    pub token_labels: Option<usize>,
}

/// Name, shape and initializer of every parameter, in registration order.
pub fn param_specs(config: &ModelConfig, heads: &HeadConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (h, f, v, p) = (config.hidden, config.ffn_hidden, config.vocab_size, config.max_positions);
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| specs.push((name, shape, init));
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
        push(format!("{prefix}.norm.gain"), vec![h], Init::Ones);
        push(format!("{prefix}.norm.bias"), vec![h], Init::Zeros);
    };
    let dense = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str, i: usize, o: usize| {
        push(format!("{prefix}.weight"), vec![i, o], Init::Normal);
        push(format!("{prefix}.bias"), vec![o], Init::Zeros);
    };
    push("embeddings.token".into(), vec![v, h], Init::Normal);
    push("embeddings.position".into(), vec![p, h], Init::Normal);
    norm(&mut push, "embeddings");
    for l in 0..config.layers {
        for part in ["query", "key", "value", "output"] {
            dense(&mut push, &format!("layers.{l}.attention.{part}"), h, h);
        }
        norm(&mut push, &format!("layers.{l}.attention"));
        dense(&mut push, &format!("layers.{l}.ffn.inner"), h, f);
        dense(&mut push, &format!("layers.{l}.ffn.outer"), f, h);
        norm(&mut push, &format!("layers.{l}.ffn"));
    }
    dense(&mut push, "lm_head.dense", h, h);
    norm(&mut push, "lm_head");
    if !config.tie_lm_head_to_embeddings {
        push("lm_head.decoder".into(), vec![v, h], Init::Normal);
    }
    push("lm_head.bias".into(), vec![v], Init::Zeros);
    if let Some(c) = heads.seq_classes {
        dense(&mut push, "seq_head.pooler", h, h);
        dense(&mut push, "seq_head.classifier", h, c);
    }
    if let Some(n) = heads.token_labels {
        dense(&mut push, "tok_head.classifier", h, n);
    }
    specs
}

/// Normal samples with everything beyond two standard deviations redrawn.
pub fn truncated_normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("std is positive");
    Tensor::from_fn(shape, |_| loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * std {
            break x as f32;
        }
    })
}

pub fn init_tensor(shape: &[usize], init: Init, std: f64, rng: &mut impl Rng) -> Tensor {
    match init {
        Init::Normal => truncated_normal(shape, std, rng),
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, 1.0),
    }
}

/// Checks that `store` holds exactly the parameters `specs` describe.
pub fn check_against_specs(store: &ParamStore, specs: &[(String, Vec<usize>, Init)]) -> Result<()> {
    if store.len() != specs.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, the configuration needs {}",
            store.len(),
            specs.len()
        )));
    }
    for ((name, t), (want, shape, _)) in store.iter().zip(specs) {
        if name != want || t.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "found {name} {:?} where {want} {shape:?} was expected",
                t.shape()
            )));
        }
    }
    Ok(())
}
