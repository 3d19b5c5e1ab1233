//! Tape-based reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated; each returns
//! a [`Var`] handle to its result. [`Tape::backward`] walks the tape in
//! reverse and accumulates gradients for every recorded value. A tape is
//! used for one forward/backward pass and then dropped.
//!
//! Conventions: arrays are row-major; "rows" means every axis but the last;
//! reductions act on one axis and drop it; `min`/`max` send the whole
//! gradient to the first index attaining the extreme; `std` is the
//! population standard deviation computed as `sqrt(var + 1e-8) - 1e-4`,
//! which is exactly zero on constant sets and has a finite gradient there.

use rand::Rng;

use crate::error::{Error, Result};

/// Variance offset inside the square root of [`Tape::reduce`] with
/// [`Reduction::Std`].
pub const STD_EPS: f64 = 1e-8;

/// Variance offset of [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Probability floor inside the log of [`Tape::nll_probs`] and
/// [`Tape::softmax_cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// A plain dense array, used for parameters and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(format!("invalid tensor shape {shape:?}")));
        }
        if len != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Min,
    Max,
    Mean,
    Std,
}

/// Operation names accepted by [`Tape::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    Concat,
    Reduce { kind: Reduction, axis: usize },
    Relu,
    Sigmoid,
    Log,
    Exp,
    Softmax,
    Dropout { rate: f64, seed: u64 },
    BroadcastAdd,
    Scale(f64),
    LayerNorm,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    AddRow(Var, Var),
    BroadcastRows(Var),
    Reshape(Var),
    LayerNorm { x: Var, inv_sd: Vec<f64> },
    Concat(Vec<Var>),
    Reduce { x: Var, kind: Reduction, outer: usize, len: usize, inner: usize, arg: Vec<usize> },
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Softmax(Var),
    Dropout(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Sum(Var),
    NllProbs { p: Var, targets: Vec<usize> },
    SoftmaxCe { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// Records a computation for one reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    backward_done: bool,
    training: bool,
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("shapes are nonempty")
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Sum in ascending order, so the result depends only on the multiset of
/// terms and not on row order.
pub fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

impl Tape {
    /// A tape in inference mode (dropout is the identity).
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape in training mode.
    pub fn training() -> Self {
        Self {
            training: true,
            ..Self::default()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
        }
    }

    /// Gradient of the loss passed to [`Tape::backward`] with respect to `v`.
    pub fn grad(&self, v: Var) -> Result<&[f64]> {
        if !self.backward_done {
            return Err(Error::invalid("gradients requested before backward"));
        }
        Ok(&self.grads[v.0])
    }

    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, Op::Leaf))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::invalid(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, value, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::invalid(format!("matmul: shapes {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }))
    }

    /// Adds a vector of length `last_dim(x)` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let d = last_dim(self.shape(x));
        if self.shape(row) != [d] {
            return Err(Error::invalid(format!(
                "broadcast-add: row of shape {:?} onto {:?}",
                self.shape(row),
                self.shape(x)
            )));
        }
        let r = self.value(row).to_vec();
        let value = self
            .value(x)
            .chunks(d)
            .flat_map(|c| c.iter().zip(&r).map(|(a, b)| a + b))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, value, Op::AddRow(x, row)))
    }

    /// Repeats a vector as `rows` rows: `[d] -> [rows, d]`.
    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        if self.shape(v).len() != 1 || rows == 0 {
            return Err(Error::invalid(format!(
                "broadcast: need a vector and rows > 0, got {:?} x {rows}",
                self.shape(v)
            )));
        }
        let d = self.shape(v)[0];
        let value = self.value(v).repeat(rows);
        Ok(self.push(vec![rows, d], value, Op::BroadcastRows(v)))
    }

    /// Same values under a new shape of equal size.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.contains(&0) || shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::invalid(format!(
                "reshape: {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).to_vec();
        Ok(self.push(shape, value, Op::Reshape(x)))
    }

    /// Standardizes every row over the last axis:
    /// `(x - mean) / sqrt(var + 1e-5)`, population variance, no affine part.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let d = last_dim(self.shape(x));
        let mut value = self.value(x).to_vec();
        let mut inv_sd = Vec::with_capacity(value.len() / d);
        for row in value.chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_sd.push(inv);
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::LayerNorm { x, inv_sd })
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || &s[..lead.len()] != lead {
                return Err(Error::invalid(format!(
                    "concat: shape {s:?} incompatible with {:?}",
                    self.shape(first)
                )));
            }
            widths.push(last_dim(s));
        }
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(self.push(shape, value, Op::Concat(parts.to_vec())))
    }

    /// Reduces `axis` away.
    pub fn reduce(&mut self, x: Var, kind: Reduction, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!("reduce: axis {axis} of shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xs = self.value(x);
        let mut value = vec![0.0; outer * inner];
        let mut arg = Vec::new();
        if matches!(kind, Reduction::Min | Reduction::Max) {
            arg = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| xs[(o * len + k) * inner + i];
                let slot = o * inner + i;
                value[slot] = match kind {
                    Reduction::Min | Reduction::Max => {
                        let mut best = 0;
                        for k in 1..len {
                            let better = match kind {
                                Reduction::Min => at(k) < at(best),
                                _ => at(k) > at(best),
                            };
                            if better {
                                best = k;
                            }
                        }
                        arg[slot] = best;
                        at(best)
                    }
                    Reduction::Mean => (0..len).map(at).sum::<f64>() / len as f64,
                    Reduction::Std => {
                        let mean = (0..len).map(at).sum::<f64>() / len as f64;
                        let var = (0..len).map(|k| (at(k) - mean).powi(2)).sum::<f64>() / len as f64;
                        (var + STD_EPS).sqrt() - STD_EPS.sqrt()
                    }
                };
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis].iter().chain(&shape[axis + 1..]).copied().collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.push(
            out_shape,
            value,
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                arg,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("log of nonpositive value {bad}")));
        }
        Ok(self.map(x, f64::ln, Op::Log(x)))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let d = last_dim(self.shape(x));
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, value, Op::Softmax(x))
    }

    /// Inverted dropout with keep-probability `1 - rate`; identity unless the
    /// tape is in training mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let value = self.value(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, value, Op::Dropout(x, mask)))
    }

    /// Selects rows (first axis) of a 2-D value; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::invalid(format!("gather_rows: shape {s:?} is not 2-D")));
        }
        let (r, d) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::invalid(format!("gather_rows: index {bad} >= {r}")));
        }
        if idx.is_empty() {
            return Err(Error::invalid("gather_rows: empty index list"));
        }
        let xs = self.value(x);
        let mut value = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            value.extend_from_slice(&xs[i * d..(i + 1) * d]);
        }
        Ok(self.push(vec![idx.len(), d], value, Op::GatherRows(x, idx.to_vec())))
    }

    /// `out[targets[p]] += x[p]` with `rows` output rows.
    pub fn scatter_add_rows(&mut self, x: Var, targets: &[usize], rows: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] != targets.len() || rows == 0 {
            return Err(Error::invalid(format!(
                "scatter_add_rows: shape {s:?} with {} targets into {rows} rows",
                targets.len()
            )));
        }
        let d = s[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= rows) {
            return Err(Error::invalid(format!("scatter_add_rows: target {bad} >= {rows}")));
        }
        let xs = self.value(x);
        let mut value = vec![0.0; rows * d];
        for (p, &t) in targets.iter().enumerate() {
            for (o, &v) in value[t * d..(t + 1) * d].iter_mut().zip(&xs[p * d..(p + 1) * d]) {
                *o += v;
            }
        }
        Ok(self.push(vec![rows, d], value, Op::ScatterAddRows(x, targets.to_vec())))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    fn check_targets(&self, x: Var, targets: &[usize], what: &str) -> Result<usize> {
        let d = last_dim(self.shape(x));
        let rows = self.value(x).len() / d;
        if rows != targets.len() {
            return Err(Error::invalid(format!(
                "{what}: {rows} rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= d) {
            return Err(Error::invalid(format!("{what}: target {bad} >= {d}")));
        }
        Ok(d)
    }

    /// `sum_r -ln(max(p[r, targets[r]], PROB_FLOOR))` over probability rows.
    pub fn nll_probs(&mut self, p: Var, targets: &[usize]) -> Result<Var> {
        let d = self.check_targets(p, targets, "nll")?;
        let ps = self.value(p);
        let loss = ordered_sum(
            targets
                .iter()
                .enumerate()
                .map(|(r, &t)| -ps[r * d + t].max(PROB_FLOOR).ln())
                .collect(),
        );
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::NllProbs {
                p,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Fused softmax and cross-entropy over rows of logits; same value and
    /// gradient as `nll_probs(softmax(logits))`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let d = self.check_targets(logits, targets, "cross-entropy")?;
        let mut probs = self.value(logits).to_vec();
        let mut terms = Vec::with_capacity(targets.len());
        for (r, row) in probs.chunks_mut(d).enumerate() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
            terms.push(-row[targets[r]].max(PROB_FLOOR).ln());
        }
        let loss = ordered_sum(terms);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Dispatch by operation name. `Dropout` draws its mask from a stream
    /// seeded by `seed`; `Reduce` takes one input, binary ops two, `Concat`
    /// any number.
    pub fn apply(&mut self, op: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::invalid(format!(
                    "{op:?} takes {n} inputs, got {}",
                    inputs.len()
                )));
            }
            Ok(())
        };
        match op {
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::BroadcastAdd => {
                arity(2)?;
                self.add_row(inputs[0], inputs[1])
            }
            OpKind::Concat => self.concat(inputs),
            OpKind::Reduce { kind, axis } => {
                arity(1)?;
                self.reduce(inputs[0], *kind, *axis)
            }
            OpKind::Relu => {
                arity(1)?;
                Ok(self.relu(inputs[0]))
            }
            OpKind::Sigmoid => {
                arity(1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            OpKind::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            OpKind::Exp => {
                arity(1)?;
                Ok(self.exp(inputs[0]))
            }
            OpKind::Softmax => {
                arity(1)?;
                Ok(self.softmax(inputs[0]))
            }
            OpKind::Scale(s) => {
                arity(1)?;
                Ok(self.scale(inputs[0], *s))
            }
            OpKind::LayerNorm => {
                arity(1)?;
                Ok(self.layer_norm(inputs[0]))
            }
            OpKind::Dropout { rate, seed } => {
                arity(1)?;
                let mut rng = crate::rng::stream(*seed, &[]);
                self.dropout(inputs[0], *rate, &mut rng)
            }
        }
    }

    /// Propagates gradients from a scalar `loss` to every recorded value.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::invalid("backward already ran on this tape"));
        }
        if self.shape(loss) != [1] {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            grads.push(vec![0.0; node.value.len()]);
        }
        grads[loss.0][0] = 1.0;
        for idx in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[idx]);
            if g.iter().all(|&v| v == 0.0) {
                grads[idx] = g;
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = g;
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[idx];
        let acc = |grads: &mut [Vec<f64>], v: Var, f: &dyn Fn(usize) -> f64| {
            for (k, slot) in grads[v.0].iter_mut().enumerate() {
                *slot += f(k);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, &|k| g[k]);
                acc(grads, *b, &|k| g[k]);
            }
            Op::Sub(a, b) => {
                acc(grads, *a, &|k| g[k]);
                acc(grads, *b, &|k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(grads, *a, &|k| g[k] * vb[k]);
                acc(grads, *b, &|k| g[k] * va[k]);
            }
            Op::Scale(a, s) => acc(grads, *a, &|k| g[k] * s),
            Op::Reshape(a) => acc(grads, *a, &|k| g[k]),
            Op::LayerNorm { x, inv_sd } => {
                let d = last_dim(&node.shape);
                let ys = &node.value;
                let gx = &mut grads[x.0];
                for (r, &inv) in inv_sd.iter().enumerate() {
                    let row = r * d..(r + 1) * d;
                    let gm = g[row.clone()].iter().sum::<f64>() / d as f64;
                    let gy = g[row.clone()].iter().zip(&ys[row.clone()]).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for k in row {
                        gx[k] += inv * (g[k] - gm - ys[k] * gy);
                    }
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (self.value(*a), self.value(*b));
                // dA = G B^T
                {
                    let ga = &mut grads[a.0];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &vb[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                // dB = A^T G
                {
                    let gb = &mut grads[b.0];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = va[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                }
            }
            Op::AddRow(x, row) => {
                acc(grads, *x, &|k| g[k]);
                let d = self.value(*row).len();
                let gr = &mut grads[row.0];
                for chunk in g.chunks(d) {
                    for (o, &v) in gr.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
            }
            Op::BroadcastRows(v) => {
                let d = self.value(*v).len();
                let gv = &mut grads[v.0];
                for chunk in g.chunks(d) {
                    for (o, &x) in gv.iter_mut().zip(chunk) {
                        *o += x;
                    }
                }
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| last_dim(self.shape(p))).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let gp = &mut grads[p.0];
                    for r in 0..rows {
                        for c in 0..w {
                            gp[r * w + c] += g[r * total + offset + c];
                        }
                    }
                    offset += w;
                }
            }
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                arg,
            } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let xs = self.value(*x);
                let out = &node.value;
                let gx = &mut grads[x.0];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        let at = |k: usize| (o * len + k) * inner + i;
                        match kind {
                            Reduction::Min | Reduction::Max => gx[at(arg[slot])] += g[slot],
                            Reduction::Mean => {
                                for k in 0..len {
                                    gx[at(k)] += g[slot] / len as f64;
                                }
                            }
                            Reduction::Std => {
                                let mean = (0..len).map(|k| xs[at(k)]).sum::<f64>() / len as f64;
                                let sd = out[slot] + STD_EPS.sqrt();
                                for k in 0..len {
                                    gx[at(k)] += g[slot] * (xs[at(k)] - mean) / (len as f64 * sd);
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xs = self.value(*x);
                acc(grads, *x, &|k| if xs[k] > 0.0 { g[k] } else { 0.0 });
            }
            Op::Sigmoid(x) => {
                let ys = &node.value;
                acc(grads, *x, &|k| g[k] * ys[k] * (1.0 - ys[k]));
            }
            Op::Log(x) => {
                let xs = self.value(*x);
                acc(grads, *x, &|k| g[k] / xs[k]);
            }
            Op::Exp(x) => {
                let ys = &node.value;
                acc(grads, *x, &|k| g[k] * ys[k]);
            }
            Op::Softmax(x) => {
                let d = last_dim(&node.shape);
                let ys = &node.value;
                let gx = &mut grads[x.0];
                for r in 0..ys.len() / d {
                    let row = r * d..(r + 1) * d;
                    let dot: f64 = g[row.clone()].iter().zip(&ys[row.clone()]).map(|(a, b)| a * b).sum();
                    for k in row {
                        gx[k] += ys[k] * (g[k] - dot);
                    }
                }
            }
            Op::Dropout(x, mask) => acc(grads, *x, &|k| g[k] * mask[k]),
            Op::GatherRows(x, idx) => {
                let d = last_dim(&node.shape);
                let gx = &mut grads[x.0];
                for (p, &i) in idx.iter().enumerate() {
                    for (o, &v) in gx[i * d..(i + 1) * d].iter_mut().zip(&g[p * d..(p + 1) * d]) {
                        *o += v;
                    }
                }
            }
            Op::ScatterAddRows(x, targets) => {
                let d = last_dim(&node.shape);
                let gx = &mut grads[x.0];
                for (p, &t) in targets.iter().enumerate() {
                    for (o, &v) in gx[p * d..(p + 1) * d].iter_mut().zip(&g[t * d..(t + 1) * d]) {
                        *o += v;
                    }
                }
            }
            Op::Sum(x) => acc(grads, *x, &|_| g[0]),
            Op::NllProbs { p, targets } => {
                let d = last_dim(self.shape(*p));
                let ps = self.value(*p);
                let gp = &mut grads[p.0];
                for (r, &t) in targets.iter().enumerate() {
                    let v = ps[r * d + t];
                    if v > PROB_FLOOR {
                        gp[r * d + t] -= g[0] / v;
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
            } => {
                let d = last_dim(self.shape(*logits));
                let gl = &mut grads[logits.0];
                for (r, &t) in targets.iter().enumerate() {
                    let row = &probs[r * d..(r + 1) * d];
                    if row[t] <= PROB_FLOOR {
                        continue;
                    }
                    for (k, &p) in row.iter().enumerate() {
                        let onehot = if k == t { 1.0 } else { 0.0 };
                        gl[r * d + k] += g[0] * (p - onehot);
                    }
                }
            }
        }
    }
}

/// Worst parameter entry found by [`grad_check_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares backpropagated gradients of `f` with central differences of
/// step `h`, entry by entry over all `params`. The relative error of one
/// entry is `|a - d| / (|a| + |d| + 1e-8)`.
pub fn grad_check_report<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_report_floor(f, params, h, 1e-8)
}

/// [`grad_check_report`] with the denominator floor given explicitly, for
/// checks where some gradient entries are near zero and central-difference
/// roundoff would dominate.
pub fn grad_check_report_floor<F>(f: F, params: &[Tensor], h: f64, floor: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec))
        .collect::<Result<_>>()?;
    drop(tape);

    let eval = |params: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss)[0])
    };
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for p in 0..work.len() {
        for i in 0..work[p].len() {
            let orig = work[p].data[i];
            work[p].data[i] = orig + h;
            let up = eval(&work)?;
            work[p].data[i] = orig - h;
            let down = eval(&work)?;
            work[p].data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[p][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + floor);
            if rel > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: rel,
                    worst_param: p,
                    worst_index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

/// Maximum relative error between analytic and central-difference gradients.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(grad_check_report(f, params, h)?.max_rel_error)
}
