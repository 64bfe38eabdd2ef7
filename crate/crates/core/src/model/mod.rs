//! Post-norm transformer encoder with masked-LM, sequence and token heads.

mod batch;
mod config;
mod io;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Element, Gradients, Graph, Tensor, Var};
use crate::bpe::TokenId;
use crate::error::{Error, Result};

pub use batch::Batch;
pub use config::{count_parameters, ModelConfig, POSITION_OFFSET};
pub use io::{load_model, save_model, MODEL_MANIFEST};
pub use params::{is_decay_exempt, param_specs, truncated_normal, HeadConfig, Init, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: ModelConfig,
    pub heads: HeadConfig,
    pub params: ParamStore,
}

/// Graph nodes of every parameter, aligned with the store's order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl EncoderModel {
    /// Fresh model with only the masked-LM head, initialized from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let heads = HeadConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        for (name, shape, init) in param_specs(&config, &heads) {
            params.insert(name, params::init_tensor(&shape, init, config.init_std, &mut rng));
        }
        Ok(Self { config, heads, params })
    }

    fn attach(&mut self, heads: HeadConfig, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, shape, init) in param_specs(&self.config, &heads) {
            if self.params.get(&name).is_none() {
                let t = params::init_tensor(&shape, init, self.config.init_std, &mut rng);
                self.params.insert(name, t);
            }
        }
        self.heads = heads;
    }

    /// Adds a pooled sequence-classification head (replacing any previous one).
    pub fn attach_seq_head(&mut self, classes: usize, seed: u64) -> Result<()> {
        if classes < 2 {
            return Err(Error::Config("a classification head needs at least 2 classes".into()));
        }
        self.detach_task_heads();
        self.attach(
            HeadConfig {
                seq_classes: Some(classes),
                token_labels: None,
            },
            seed,
        );
        Ok(())
    }

    /// Adds a per-token classification head (replacing any previous one).
    pub fn attach_tok_head(&mut self, labels: usize, seed: u64) -> Result<()> {
        if labels < 2 {
            return Err(Error::Config("a tagging head needs at least 2 labels".into()));
        }
        self.detach_task_heads();
        self.attach(
            HeadConfig {
                seq_classes: None,
                token_labels: Some(labels),
            },
            seed,
        );
        Ok(())
    }

    pub fn detach_task_heads(&mut self) {
        let keep: Vec<(String, Tensor)> = self
            .params
            .iter()
            .filter(|(n, _)| !n.starts_with("seq_head.") && !n.starts_with("tok_head."))
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        self.params = ParamStore::default();
        for (n, t) in keep {
            self.params.insert(n, t);
        }
        self.heads = HeadConfig::default();
    }

    pub fn num_parameters(&self) -> usize {
        self.params.numel()
    }

    /// Registers every parameter as a differentiable leaf of `g`.
    pub fn bind<E: Element>(&self, g: &mut Graph<E>) -> Result<Bound> {
        let vars = self
            .params
            .tensors()
            .map(|t| g.param(t.cast()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    /// Per-parameter gradients in store order; parameters the loss did not
    /// reach get zeros.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients<f32>) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect()
    }

    fn p(&self, bound: &Bound, name: &str) -> Var {
        let i = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("parameter {name} is not registered"));
        bound.vars[i]
    }

    fn dense<E: Element>(&self, g: &mut Graph<E>, b: &Bound, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(b, &format!("{prefix}.weight"));
        let bias = self.p(b, &format!("{prefix}.bias"));
        let y = g.matmul(x, w)?;
        g.add_bias(y, bias)
    }

    fn norm<E: Element>(&self, g: &mut Graph<E>, b: &Bound, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.p(b, &format!("{prefix}.norm.gain"));
        let bias = self.p(b, &format!("{prefix}.norm.bias"));
        g.layer_norm(x, gain, bias, self.config.layer_norm_eps)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let max = self.config.max_sequence_len();
        if batch.seq > max {
            return Err(Error::TooLong { len: batch.seq, max });
        }
        if let Some(&bad) = batch.ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Final hidden states `[batch·seq, hidden]`.
    pub fn encode<E: Element>(&self, g: &mut Graph<E>, b: &Bound, batch: &Batch) -> Result<Var> {
        self.check_batch(batch)?;
        let c = &self.config;
        let (n, s) = (batch.batch, batch.seq);
        let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..n * s).map(|r| POSITION_OFFSET + r % s).collect();
        let tok = g.gather_rows(self.p(b, "embeddings.token"), &ids)?;
        let pos = g.gather_rows(self.p(b, "embeddings.position"), &positions)?;
        let x = g.add(tok, pos)?;
        let x = self.norm(g, b, x, "embeddings")?;
        let mut x = g.dropout(x, c.dropout)?;
        let scale = 1.0 / (c.head_dim() as f64).sqrt();
        for l in 0..c.layers {
            let at = format!("layers.{l}.attention");
            let mut heads = Vec::with_capacity(3);
            for part in ["query", "key", "value"] {
                let y = self.dense(g, b, x, &format!("{at}.{part}"))?;
                heads.push(g.split_heads(y, n, s, c.heads)?);
            }
            let scores = g.batch_matmul(heads[0], heads[1], true)?;
            let scores = g.scale(scores, scale)?;
            let probs = g.masked_softmax(scores, &batch.valid, c.heads)?;
            let probs = g.dropout(probs, c.attention_dropout)?;
            let ctx = g.batch_matmul(probs, heads[2], false)?;
            let ctx = g.merge_heads(ctx, n, s, c.heads)?;
            let out = self.dense(g, b, ctx, &format!("{at}.output"))?;
            let out = g.dropout(out, c.dropout)?;
            let sum = g.add(x, out)?;
            x = self.norm(g, b, sum, &at)?;

            let ffn = format!("layers.{l}.ffn");
            let inner = self.dense(g, b, x, &format!("{ffn}.inner"))?;
            let inner = g.gelu_with(inner, c.gelu)?;
            let out = self.dense(g, b, inner, &format!("{ffn}.outer"))?;
            let out = g.dropout(out, c.dropout)?;
            let sum = g.add(x, out)?;
            x = self.norm(g, b, sum, &ffn)?;
        }
        Ok(x)
    }

    /// Vocabulary logits for the selected rows of `hidden` (all rows when
    /// `rows` is `None`).
    pub fn lm_logits<E: Element>(
        &self,
        g: &mut Graph<E>,
        b: &Bound,
        hidden: Var,
        rows: Option<&[usize]>,
    ) -> Result<Var> {
        let h = match rows {
            Some(r) => g.gather_rows(hidden, r)?,
            None => hidden,
        };
        let t = self.dense(g, b, h, "lm_head.dense")?;
        let t = g.gelu_with(t, self.config.gelu)?;
        let t = self.norm(g, b, t, "lm_head")?;
        let out = if self.config.tie_lm_head_to_embeddings {
            self.p(b, "embeddings.token")
        } else {
            self.p(b, "lm_head.decoder")
        };
        let logits = g.matmul_nt(t, out)?;
        g.add_bias(logits, self.p(b, "lm_head.bias"))
    }

    /// Mean masked-LM cross-entropy over the positions with a label.
    pub fn mlm_loss<E: Element>(
        &self,
        g: &mut Graph<E>,
        b: &Bound,
        batch: &Batch,
        labels: &[Option<TokenId>],
    ) -> Result<Var> {
        if labels.len() != batch.ids.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} positions",
                labels.len(),
                batch.ids.len()
            )));
        }
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
        if rows.is_empty() {
            return Err(Error::UndefinedMetric("no masked positions in batch".into()));
        }
        let targets: Vec<Option<usize>> = rows.iter().map(|&i| labels[i].map(|t| t as usize)).collect();
        let hidden = self.encode(g, b, batch)?;
        let logits = self.lm_logits(g, b, hidden, Some(&rows))?;
        g.cross_entropy(logits, &targets)
    }

    /// Logits `[batch, classes]` from the begin-of-sequence position.
    pub fn seq_logits<E: Element>(&self, g: &mut Graph<E>, b: &Bound, hidden: Var, batch: &Batch) -> Result<Var> {
        if self.heads.seq_classes.is_none() {
            return Err(Error::Config("model has no sequence-classification head".into()));
        }
        let first: Vec<usize> = (0..batch.batch).map(|i| i * batch.seq).collect();
        let cls = g.gather_rows(hidden, &first)?;
        let pooled = self.dense(g, b, cls, "seq_head.pooler")?;
        let pooled = g.tanh(pooled)?;
        let pooled = g.dropout(pooled, self.config.dropout)?;
        self.dense(g, b, pooled, "seq_head.classifier")
    }

    /// Logits `[batch·seq, labels]`.
    pub fn tok_logits<E: Element>(&self, g: &mut Graph<E>, b: &Bound, hidden: Var) -> Result<Var> {
        if self.heads.token_labels.is_none() {
            return Err(Error::Config("model has no token-classification head".into()));
        }
        let h = g.dropout(hidden, self.config.dropout)?;
        self.dense(g, b, h, "tok_head.classifier")
    }

    /// Inference-mode vocabulary logits `[batch, seq, vocab]`.
    pub fn forward_mlm(&self, batch: &Batch) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let h = self.encode(&mut g, &b, batch)?;
        let logits = self.lm_logits(&mut g, &b, h, None)?;
        let v = self.config.vocab_size;
        g.value(logits).clone().reshape(vec![batch.batch, batch.seq, v])
    }

    /// Inference-mode logits for the selected rows only, `[rows, vocab]`.
    pub fn forward_mlm_rows(&self, batch: &Batch, rows: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let h = self.encode(&mut g, &b, batch)?;
        let logits = self.lm_logits(&mut g, &b, h, Some(rows))?;
        Ok(g.value(logits).clone())
    }

    /// Inference-mode class logits `[batch, classes]`.
    pub fn forward_seq_cls(&self, batch: &Batch) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let h = self.encode(&mut g, &b, batch)?;
        let logits = self.seq_logits(&mut g, &b, h, batch)?;
        Ok(g.value(logits).clone())
    }

    /// Inference-mode tag logits `[batch, seq, labels]`.
    pub fn forward_tok_cls(&self, batch: &Batch) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let h = self.encode(&mut g, &b, batch)?;
        let logits = self.tok_logits(&mut g, &b, h)?;
        let labels = self.heads.token_labels.unwrap_or(0);
        g.value(logits).clone().reshape(vec![batch.batch, batch.seq, labels])
    }
}
