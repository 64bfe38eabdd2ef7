use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::check_finite;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which GELU formula to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeluKind {
    /// `x * Φ(x)` with the erf-based normal CDF.
    #[default]
    Exact,
    /// `0.5 x (1 + tanh(sqrt(2/π) (x + 0.044715 x³)))`.
    Tanh,
}

#[derive(Debug)]
enum Op<E: Element> {
    Leaf,
    MatMul {
        trans_a: bool,
        trans_b: bool,
    },
    BatchMatMul {
        trans_b: bool,
    },
    Add,
    Sub,
    AddBias,
    Mul,
    Scale(E),
    Sum,
    Mean,
    Softmax {
        outer: usize,
        len: usize,
        inner: usize,
    },
    MaskedSoftmax,
    LayerNorm {
        xhat: Vec<E>,
        rstd: Vec<E>,
    },
    Gelu(GeluKind),
    Tanh,
    Dropout {
        mask: Vec<E>,
    },
    GatherRows {
        rows: Vec<usize>,
    },
    SplitHeads {
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MergeHeads {
        batch: usize,
        seq: usize,
        heads: usize,
    },
    CrossEntropy {
        targets: Vec<Option<usize>>,
        probs: Vec<E>,
        count: usize,
    },
    Reshape,
}

impl<E: Element> Op<E> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::AddBias => "add_bias",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Softmax { .. } => "softmax",
            Op::MaskedSoftmax => "masked_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::Tanh => "tanh",
            Op::Dropout { .. } => "dropout",
            Op::GatherRows { .. } => "gather_rows",
            Op::SplitHeads { .. } => "split_heads",
            Op::MergeHeads { .. } => "merge_heads",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Reshape => "reshape",
        }
    }
}

#[derive(Debug)]
struct Node<E: Element> {
    value: Tensor<E>,
    op: Op<E>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// A define-by-run computation graph.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and every input precedes its consumer.
#[derive(Debug)]
pub struct Graph<E: Element = f32> {
    nodes: Vec<Node<E>>,
    rng: Option<ChaCha8Rng>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    /// Inference-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            rng: None,
        }
    }

    /// Training-mode graph whose dropout masks come from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, inputs: Vec<Var>) -> Result<Var> {
        check_finite(value.data(), op.name())?;
        let requires_grad = match op {
            Op::Leaf => value.requires_grad(),
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Adds a leaf; whether it is differentiated follows `t.requires_grad()`.
    pub fn input(&mut self, t: Tensor<E>) -> Result<Var> {
        self.push(t, Op::Leaf, Vec::new())
    }

    pub fn param(&mut self, t: Tensor<E>) -> Result<Var> {
        self.input(t.with_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<E>) -> Result<Var> {
        self.input(t.with_grad(false))
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("{what} must be 2-d, got {s:?}"))),
        }
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, true)
    }

    pub fn matmul_ex(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (ar, ac) = self.matrix_dims(a, "matmul lhs")?;
        let (br, bc) = self.matrix_dims(b, "matmul rhs")?;
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: [{m}×{k}] · [{k2}×{n}]"
            )));
        }
        let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        let mut out = vec![E::zero(); m * n];
        E::gemm(
            m,
            k,
            n,
            E::one(),
            self.value(a).data(),
            rsa,
            csa,
            self.value(b).data(),
            rsb,
            csb,
            E::zero(),
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::new(vec![m, n], out)?;
        self.push(value, Op::MatMul { trans_a, trans_b }, vec![a, b])
    }

    /// Batched product `[N×m×k] · [N×k×n]`, or with `trans_b` `[N×m×k] · [N×n×k]ᵀ`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ([na, m, k], [nb, b1, b2]) = (sa.as_slice(), sb.as_slice()) else {
            return Err(Error::Shape(format!(
                "batch_matmul needs 3-d operands, got {sa:?} and {sb:?}"
            )));
        };
        let (k2, n) = if trans_b { (*b2, *b1) } else { (*b1, *b2) };
        if na != nb || *k != k2 {
            return Err(Error::Shape(format!(
                "batch_matmul shapes disagree: {sa:?} · {sb:?} (trans_b={trans_b})"
            )));
        }
        let (batch, m, k) = (*na, *m, *k);
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        let mut out = vec![E::zero(); batch * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            E::gemm(
                m,
                k,
                n,
                E::one(),
                &av[i * m * k..(i + 1) * m * k],
                k as isize,
                1,
                &bv[i * k * n..(i + 1) * k * n],
                rsb,
                csb,
                E::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
                n as isize,
                1,
            );
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        self.push(value, Op::BatchMatMul { trans_b }, vec![a, b])
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{op} needs equal shapes, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op<E>, f: impl Fn(E, E) -> E) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, op, vec![a, b])
    }

    fn map(&mut self, a: Var, op: Op<E>, f: impl Fn(E) -> E) -> Result<Var> {
        let x = self.value(a);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())?;
        self.push(value, op, vec![a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Add, |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Sub, |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Mul, |p, q| p * q)
    }

    /// Adds a `[H]` bias to every row of a `[..., H]` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let h = self.value(a).last_dim();
        if self.shape(bias) != [h] {
            return Err(Error::Shape(format!(
                "bias {:?} does not match last dimension {h}",
                self.shape(bias)
            )));
        }
        let x = self.value(a);
        let b = self.value(bias).data();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % h])
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        self.push(value, Op::AddBias, vec![a, bias])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = E::from_f64(c);
        self.map(a, Op::Scale(c), |v| v * c)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum, vec![a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let s: E = x.data().iter().copied().sum();
        let m = s / E::from_f64(x.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean, vec![a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().with_grad(false).reshape(shape)?;
        self.push(value, Op::Reshape, vec![a])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = vec![E::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mut mx = E::neg_infinity();
                for j in 0..len {
                    mx = mx.max(x[idx(j)]);
                }
                let mut total = E::zero();
                for j in 0..len {
                    let e = (x[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Softmax { outer, len, inner }, vec![a])
    }

    /// Softmax over the last axis of attention scores `[batch·heads, q, k]`,
    /// restricted to keys whose `key_valid[b·k_len + key]` flag is set.
    ///
    /// Masked keys get probability exactly 0; a row with no valid key is all
    /// zeros rather than NaN.
    pub fn masked_softmax(&mut self, scores: Var, key_valid: &[bool], heads: usize) -> Result<Var> {
        let shape = self.shape(scores).to_vec();
        let [bh, q, k] = shape.as_slice() else {
            return Err(Error::Shape(format!(
                "masked_softmax needs [batch·heads, q, k], got {shape:?}"
            )));
        };
        let (bh, q, k) = (*bh, *q, *k);
        if heads == 0 || bh % heads != 0 || key_valid.len() != (bh / heads) * k {
            return Err(Error::Shape(format!(
                "key mask of length {} does not fit scores {shape:?} with {heads} heads",
                key_valid.len()
            )));
        }
        let x = self.value(scores).data();
        let mut out = vec![E::zero(); x.len()];
        for row in 0..bh * q {
            let b = row / q / heads;
            let valid = &key_valid[b * k..(b + 1) * k];
            let xs = &x[row * k..(row + 1) * k];
            let ys = &mut out[row * k..(row + 1) * k];
            let mut mx = E::neg_infinity();
            for (j, &v) in xs.iter().enumerate() {
                if valid[j] {
                    mx = mx.max(v);
                }
            }
            if mx == E::neg_infinity() {
                continue;
            }
            let mut total = E::zero();
            for j in 0..k {
                if valid[j] {
                    let e = (xs[j] - mx).exp();
                    ys[j] = e;
                    total += e;
                }
            }
            for y in ys.iter_mut() {
                *y = *y / total;
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::MaskedSoftmax, vec![scores])
    }

    /// Normalizes every row of `[..., H]` to zero mean and unit variance, then
    /// applies `gain` and `bias` of shape `[H]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let h = self.value(x).last_dim();
        if self.shape(gain) != [h] || self.shape(bias) != [h] {
            return Err(Error::Shape(format!(
                "layer_norm gain {:?} / bias {:?} must be [{h}]",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xv = self.value(x);
        let rows = xv.numel() / h;
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let eps = E::from_f64(eps);
        let hn = E::from_f64(h as f64);
        let mut xhat = vec![E::zero(); xv.numel()];
        let mut rstd = vec![E::zero(); rows];
        let mut out = vec![E::zero(); xv.numel()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<E>() / hn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() / hn;
            let rs = E::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..h {
                let xh = (row[j] - mean) * rs;
                xhat[r * h + j] = xh;
                out[r * h + j] = xh * g[j] + b[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(value, Op::LayerNorm { xhat, rstd }, vec![x, gain, bias])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.gelu_with(x, GeluKind::Exact)
    }

    pub fn gelu_with(&mut self, x: Var, kind: GeluKind) -> Result<Var> {
        self.map(x, Op::Gelu(kind), |v| gelu_value(v, kind))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Tanh, |v| v.tanh())
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Identity in
    /// inference mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let n = self.nodes[x.0].value.numel();
        let keep = E::from_f64(1.0 / (1.0 - p));
        let mask: Vec<E> = (0..n)
            .map(|_| if rng.random::<f64>() < p { E::zero() } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(value, Op::Dropout { mask }, vec![x])
    }

    /// Selects rows of a `[R, H]` tensor; also serves as embedding lookup.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, h) = self.matrix_dims(x, "gather_rows source")?;
        if rows.is_empty() {
            return Err(Error::Shape("gather_rows with no rows".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!("row index {bad} out of range for {r} rows")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * h);
        for &i in rows {
            out.extend_from_slice(xv.row(i));
        }
        let value = Tensor::new(vec![rows.len(), h], out)?;
        self.push(value, Op::GatherRows { rows: rows.to_vec() }, vec![x])
    }

    /// `[B·S, H] → [B·heads, S, H/heads]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let (rows, hidden) = self.matrix_dims(x, "split_heads input")?;
        if rows != batch * seq || heads == 0 || hidden % heads != 0 {
            return Err(Error::Shape(format!(
                "cannot split [{rows}, {hidden}] into batch {batch}, seq {seq}, {heads} heads"
            )));
        }
        let dh = hidden / heads;
        let xv = self.value(x).data();
        let mut out = vec![E::zero(); xv.len()];
        head_permute(xv, &mut out, batch, seq, heads, dh, true);
        let value = Tensor::new(vec![batch * heads, seq, dh], out)?;
        self.push(value, Op::SplitHeads { batch, seq, heads }, vec![x])
    }

    /// Inverse of [`split_heads`](Self::split_heads).
    pub fn merge_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || shape[0] != batch * heads || shape[1] != seq {
            return Err(Error::Shape(format!(
                "cannot merge {shape:?} with batch {batch}, seq {seq}, {heads} heads"
            )));
        }
        let dh = shape[2];
        let xv = self.value(x).data();
        let mut out = vec![E::zero(); xv.len()];
        head_permute(xv, &mut out, batch, seq, heads, dh, false);
        let value = Tensor::new(vec![batch * seq, heads * dh], out)?;
        self.push(value, Op::MergeHeads { batch, seq, heads }, vec![x])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: [n, V]`. `None` targets are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (n, v) = self.matrix_dims(logits, "cross_entropy logits")?;
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "{} targets for {n} logit rows",
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(Error::Contract(format!("target class {bad} outside [0, {v})")));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::UndefinedMetric(
                "cross-entropy over zero non-ignored positions".into(),
            ));
        }
        let lv = self.value(logits);
        let mut probs = vec![E::zero(); n * v];
        let mut total = E::zero();
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            let row = lv.row(r);
            let mx = row.iter().copied().fold(E::neg_infinity(), E::max);
            let z: E = row.iter().map(|&x| (x - mx).exp()).sum();
            let lz = z.ln();
            for j in 0..v {
                probs[r * v + j] = (row[j] - mx).exp() / z;
            }
            total += lz - (row[t] - mx);
        }
        let loss = total / E::from_f64(count as f64);
        let op = Op::CrossEntropy {
            targets: targets.to_vec(),
            probs,
            count,
        };
        self.push(Tensor::scalar(loss), op, vec![logits])
    }

    /// Gradients of a scalar `loss` with respect to every leaf that requires
    /// them; contributions from shared sub-expressions add up.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        self.backward_scaled(loss, 1.0)
    }

    /// Like [`backward`](Self::backward) with the seed gradient set to `seed`
    /// instead of 1 (used for weighted gradient accumulation).
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Gradients<E>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads: leaf_grads });
        }
        grads[loss.0] = Some(vec![E::from_f64(seed)]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                leaf_grads[id] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn propagate(&self, node: &Node<E>, g: &[E], grads: &mut [Option<Vec<E>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let inputs = &node.inputs;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { trans_a, trans_b } => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let s = val(a).shape();
                let k = if *trans_a { s[0] } else { s[1] };
                let (rsa, csa) = if *trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if *trans_b { (1, k as isize) } else { (n as isize, 1) };
                if wants(a) {
                    // d op(A) = dC · op(B)ᵀ, written through op(A)'s layout.
                    let (rsc, csc) = if *trans_a { (1, m as isize) } else { (k as isize, 1) };
                    let da = slot(grads, a, m * k);
                    E::gemm(
                        m,
                        n,
                        k,
                        E::one(),
                        g,
                        n as isize,
                        1,
                        val(b).data(),
                        csb,
                        rsb,
                        E::one(),
                        da,
                        rsc,
                        csc,
                    );
                }
                if wants(b) {
                    // d op(B) = op(A)ᵀ · dC.
                    let (rsc, csc) = if *trans_b { (1, k as isize) } else { (n as isize, 1) };
                    let db = slot(grads, b, k * n);
                    E::gemm(
                        k,
                        m,
                        n,
                        E::one(),
                        val(a).data(),
                        csa,
                        rsa,
                        g,
                        n as isize,
                        1,
                        E::one(),
                        db,
                        rsc,
                        csc,
                    );
                }
            }
            Op::BatchMatMul { trans_b } => {
                let (a, b) = (inputs[0], inputs[1]);
                let os = node.value.shape();
                let (batch, m, n) = (os[0], os[1], os[2]);
                let k = val(a).shape()[2];
                let (rsb, csb) = if *trans_b { (1, k as isize) } else { (n as isize, 1) };
                if wants(a) {
                    let bv = val(b).data();
                    let da = slot(grads, a, batch * m * k);
                    for i in 0..batch {
                        E::gemm(
                            m,
                            n,
                            k,
                            E::one(),
                            &g[i * m * n..(i + 1) * m * n],
                            n as isize,
                            1,
                            &bv[i * k * n..(i + 1) * k * n],
                            csb,
                            rsb,
                            E::one(),
                            &mut da[i * m * k..(i + 1) * m * k],
                            k as isize,
                            1,
                        );
                    }
                }
                if wants(b) {
                    let av = val(a).data();
                    let db = slot(grads, b, batch * k * n);
                    for i in 0..batch {
                        E::gemm(
                            k,
                            m,
                            n,
                            E::one(),
                            &av[i * m * k..(i + 1) * m * k],
                            1,
                            k as isize,
                            &g[i * m * n..(i + 1) * m * n],
                            n as isize,
                            1,
                            E::one(),
                            &mut db[i * k * n..(i + 1) * k * n],
                            rsb,
                            csb,
                        );
                    }
                }
            }
            Op::Add => {
                for &x in inputs {
                    if wants(x) {
                        add_into(slot(grads, x, g.len()), g);
                    }
                }
            }
            Op::Sub => {
                if wants(inputs[0]) {
                    add_into(slot(grads, inputs[0], g.len()), g);
                }
                if wants(inputs[1]) {
                    let d = slot(grads, inputs[1], g.len());
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::AddBias => {
                let (a, bias) = (inputs[0], inputs[1]);
                if wants(a) {
                    add_into(slot(grads, a, g.len()), g);
                }
                if wants(bias) {
                    let h = val(bias).numel();
                    let db = slot(grads, bias, h);
                    for row in g.chunks_exact(h) {
                        add_into(db, row);
                    }
                }
            }
            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if wants(a) {
                    let bv = val(b).data();
                    let da = slot(grads, a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if wants(b) {
                    let av = val(a).data();
                    let db = slot(grads, b, g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(c) => {
                let d = slot(grads, inputs[0], g.len());
                for (d, &gv) in d.iter_mut().zip(g) {
                    *d += gv * *c;
                }
            }
            Op::Sum | Op::Mean => {
                let x = inputs[0];
                let n = val(x).numel();
                let gv = match node.op {
                    Op::Mean => g[0] / E::from_f64(n as f64),
                    _ => g[0],
                };
                for d in slot(grads, x, n).iter_mut() {
                    *d += gv;
                }
            }
            Op::Reshape => add_into(slot(grads, inputs[0], g.len()), g),
            Op::Softmax { outer, len, inner } => {
                let y = node.value.data();
                let d = slot(grads, inputs[0], g.len());
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: E = (0..*len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..*len {
                            d[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            }
            Op::MaskedSoftmax => {
                let y = node.value.data();
                let k = *node.value.shape().last().unwrap();
                let d = slot(grads, inputs[0], g.len());
                for ((ys, gs), ds) in y.chunks_exact(k).zip(g.chunks_exact(k)).zip(d.chunks_exact_mut(k)) {
                    let dot: E = ys.iter().zip(gs).map(|(&p, &q)| p * q).sum();
                    for j in 0..k {
                        ds[j] += ys[j] * (gs[j] - dot);
                    }
                }
            }
            Op::LayerNorm { xhat, rstd } => {
                let (x, gain, bias) = (inputs[0], inputs[1], inputs[2]);
                let h = val(gain).numel();
                let gv = val(gain).data();
                if wants(x) {
                    let hn = E::from_f64(h as f64);
                    let dx = slot(grads, x, g.len());
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * h..(r + 1) * h];
                        let xr = &xhat[r * h..(r + 1) * h];
                        let mut mean_d = E::zero();
                        let mut mean_dx = E::zero();
                        for j in 0..h {
                            let dxh = gr[j] * gv[j];
                            mean_d += dxh;
                            mean_dx += dxh * xr[j];
                        }
                        mean_d = mean_d / hn;
                        mean_dx = mean_dx / hn;
                        for j in 0..h {
                            let dxh = gr[j] * gv[j];
                            dx[r * h + j] += rs * (dxh - mean_d - xr[j] * mean_dx);
                        }
                    }
                }
                if wants(gain) {
                    let dg = slot(grads, gain, h);
                    for (gr, xr) in g.chunks_exact(h).zip(xhat.chunks_exact(h)) {
                        for j in 0..h {
                            dg[j] += gr[j] * xr[j];
                        }
                    }
                }
                if wants(bias) {
                    let db = slot(grads, bias, h);
                    for gr in g.chunks_exact(h) {
                        add_into(db, gr);
                    }
                }
            }
            Op::Gelu(kind) => {
                let xv = val(inputs[0]).data();
                let d = slot(grads, inputs[0], g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * gelu_derivative(xv[i], *kind);
                }
            }
            Op::Tanh => {
                let y = node.value.data();
                let d = slot(grads, inputs[0], g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * (E::one() - y[i] * y[i]);
                }
            }
            Op::Dropout { mask } => {
                let d = slot(grads, inputs[0], g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * mask[i];
                }
            }
            Op::GatherRows { rows } => {
                let x = inputs[0];
                let h = val(x).last_dim();
                let d = slot(grads, x, val(x).numel());
                for (r, &src) in rows.iter().enumerate() {
                    add_into(&mut d[src * h..(src + 1) * h], &g[r * h..(r + 1) * h]);
                }
            }
            Op::SplitHeads { batch, seq, heads } => {
                let dh = node.value.shape()[2];
                let mut tmp = vec![E::zero(); g.len()];
                head_permute(g, &mut tmp, *batch, *seq, *heads, dh, false);
                add_into(slot(grads, inputs[0], g.len()), &tmp);
            }
            Op::MergeHeads { batch, seq, heads } => {
                let dh = val(inputs[0]).shape()[2];
                let mut tmp = vec![E::zero(); g.len()];
                head_permute(g, &mut tmp, *batch, *seq, *heads, dh, true);
                add_into(slot(grads, inputs[0], g.len()), &tmp);
            }
            Op::CrossEntropy {
                targets,
                probs,
                count,
            } => {
                let x = inputs[0];
                let v = val(x).last_dim();
                let scale = g[0] / E::from_f64(*count as f64);
                let d = slot(grads, x, probs.len());
                for (r, target) in targets.iter().enumerate() {
                    let Some(t) = *target else { continue };
                    for j in 0..v {
                        d[r * v + j] += probs[r * v + j] * scale;
                    }
                    d[r * v + t] -= scale;
                }
            }
        }
    }
}

fn slot<E: Element>(grads: &mut [Option<Vec<E>>], v: Var, n: usize) -> &mut [E] {
    grads[v.0].get_or_insert_with(|| vec![E::zero(); n])
}

fn add_into<E: Element>(dst: &mut [E], src: &[E]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

// split=true maps [B·S, heads·dh] → [B·heads, S, dh]; split=false inverts it.
fn head_permute<E: Element>(
    src: &[E],
    dst: &mut [E],
    batch: usize,
    seq: usize,
    heads: usize,
    dh: usize,
    split: bool,
) {
    let hidden = heads * dh;
    for b in 0..batch {
        for s in 0..seq {
            for h in 0..heads {
                let flat = (b * seq + s) * hidden + h * dh;
                let split_at = ((b * heads + h) * seq + s) * dh;
                let (from, to) = if split { (flat, split_at) } else { (split_at, flat) };
                dst[to..to + dh].copy_from_slice(&src[from..from + dh]);
            }
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

pub(crate) fn gelu_value<E: Element>(x: E, kind: GeluKind) -> E {
    let half = E::from_f64(0.5);
    match kind {
        GeluKind::Exact => x * half * (E::one() + (x * E::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf()),
        GeluKind::Tanh => {
            let inner = E::from_f64(SQRT_2_OVER_PI) * (x + E::from_f64(0.044715) * x * x * x);
            half * x * (E::one() + inner.tanh())
        }
    }
}

fn gelu_derivative<E: Element>(x: E, kind: GeluKind) -> E {
    let half = E::from_f64(0.5);
    match kind {
        GeluKind::Exact => {
            let cdf = half * (E::one() + (x * E::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
            let pdf = (-(x * x) * half).exp() * E::from_f64(0.398_942_280_401_432_7);
            cdf + x * pdf
        }
        GeluKind::Tanh => {
            let c = E::from_f64(SQRT_2_OVER_PI);
            let a = E::from_f64(0.044715);
            let inner = c * (x + a * x * x * x);
            let t = inner.tanh();
            let dinner = c * (E::one() + E::from_f64(3.0) * a * x * x);
            half * (E::one() + t) + half * x * (E::one() - t * t) * dinner
        }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<E: Element = f32> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    /// Gradient of a leaf; `None` when the leaf does not influence the loss
    /// or was not marked as requiring a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf with untouched leaves reported as zeros.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<E> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<E>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
