//! Define-by-run gradient tape.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse creation order, which is a valid topological
//! order because inputs always exist before the ops that consume them.
//! A tape is built per forward pass and supports exactly one backward pass.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::tensor::{cosine_unchecked, dot, matmul_into, norm, sigmoid, softmax_in_place, softplus, COSINE_NORM_FLOOR};
use super::{GradSet, NumericsError, ParamId, ParamSet, Real, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous row groups used by the block ops. Block `b` covers rows
/// `offset(b)..offset(b) + size(b)`; empty blocks are allowed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Blocks {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl Blocks {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for &s in &sizes {
            offsets.push(total);
            total += s;
        }
        Self { sizes, offsets, total }
    }

    /// `count` blocks of `size` rows each.
    pub fn uniform(count: usize, size: usize) -> Self {
        Self::new(vec![size; count])
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn size(&self, b: usize) -> usize {
        self.sizes[b]
    }

    pub fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b] + self.sizes[b]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, Real),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Vec<(Var, usize)>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SumAll(Var),
    SumCols(Var),
    MulCol(Var, Var),
    RepeatBlocks(Var, Arc<Blocks>),
    CosineBlocks(Var, Var, Arc<Blocks>),
    BlockSoftmax(Var, Arc<Blocks>),
    BlockSum(Var, Arc<Blocks>),
    BlockMean(Var, Arc<Blocks>),
    BlockAttention { q: Var, k: Var, v: Var, blocks: Arc<Blocks>, scale: Real, probs: Vec<Real> },
    PickCols(Var, Vec<usize>),
    BceWithLogits(Var, Tensor),
    SoftmaxXent { logits: Var, targets: Vec<Option<usize>>, both_sided: bool },
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Reference to one row of a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowRef {
    pub tape: u64,
    pub var: Var,
    pub row: usize,
}

pub struct Tape {
    id: u64,
    params: Arc<ParamSet>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::shape(op, detail)
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape with no parameters; inputs are registered with [`Tape::input`].
    pub fn new() -> Self {
        Self::with_params(Arc::new(ParamSet::new()))
    }

    pub fn with_params(params: Arc<ParamSet>) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            consumed: false,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn row_ref(&self, var: Var, row: usize) -> RowRef {
        RowRef { tape: self.id, var, row }
    }

    /// True when `r` points into this tape.
    pub fn owns(&self, r: &RowRef) -> bool {
        r.tape == self.id && r.var.0 < self.nodes.len()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf; gradients are available via [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The node for parameter `id`, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Copy of the forward value with no gradient path.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", format!("{:?} * {:?}", ta.shape(), tb.shape())));
        }
        let mut out = Tensor::zeros(ta.rows(), tb.cols());
        matmul_into(ta.data(), tb.data(), out.data_mut(), ta.rows(), ta.cols(), tb.cols());
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(Real, Real) -> Real) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// `a [m x n] + bias [1 x n]`, bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_err("add_row", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(out, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, s: Real) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x *= s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    fn map(&mut self, a: Var, f: impl Fn(Real) -> Real, op: Op) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|x| *x = f(*x));
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Real::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or(NumericsError::Empty("concat_cols"))?;
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", format!("row count {} vs {rows}", t.rows())));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(shape_err("slice_cols", format!("{start}+{len} > {}", t.cols())));
        }
        let mut out = Tensor::zeros(t.rows(), len);
        for r in 0..t.rows() {
            out.row_mut(r).copy_from_slice(&t.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    /// Stacks the referenced rows. All sources must share a column count.
    pub fn gather_rows(&mut self, refs: &[(Var, usize)], cols: usize) -> Result<Var, NumericsError> {
        let mut out = Tensor::zeros(refs.len(), cols);
        for (i, &(v, r)) in refs.iter().enumerate() {
            let t = self.value(v);
            if t.cols() != cols || r >= t.rows() {
                return Err(shape_err("gather_rows", format!("row {r} of {:?}, want {cols} cols", t.shape())));
            }
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        let ng = refs.iter().any(|&(v, _)| self.ng(v));
        Ok(self.push(out, Op::GatherRows(refs.to_vec()), ng))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let mut out = self.value(a).clone();
        if out.cols() == 0 {
            return Err(NumericsError::Empty("softmax_rows"));
        }
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::SoftmaxRows(a), ng))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let mut out = self.value(a).clone();
        if out.cols() == 0 {
            return Err(NumericsError::Empty("log_softmax_rows"));
        }
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = super::tensor::log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::LogSoftmaxRows(a), ng))
    }

    /// Sum of all elements as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    /// Row sums, `[m x n] -> [m x 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let out = Tensor::new(t.rows(), 1, data).expect("sized");
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    /// `a [m x n] * s [m x 1]`, each row scaled by its own scalar.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.cols() != 1 || ts.rows() != ta.rows() {
            return Err(shape_err("mul_col", format!("{:?} * {:?}", ta.shape(), ts.shape())));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            let k = ts.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|x| *x *= k);
        }
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(out, Op::MulCol(a, s), ng))
    }

    /// Row `b` of `x` repeated `blocks.size(b)` times.
    pub fn repeat_blocks(&mut self, x: Var, blocks: &Arc<Blocks>) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.rows() != blocks.len() {
            return Err(shape_err("repeat_blocks", format!("{} rows for {} blocks", t.rows(), blocks.len())));
        }
        let mut out = Tensor::zeros(blocks.total(), t.cols());
        for b in 0..blocks.len() {
            for r in blocks.range(b) {
                out.row_mut(r).copy_from_slice(t.row(b));
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::RepeatBlocks(x, blocks.clone()), ng))
    }

    /// Cosine similarity of query row `b` against every key row in block `b`,
    /// as a `[total x 1]` column. Zero-norm rows score 0.
    pub fn cosine_blocks(&mut self, queries: Var, keys: Var, blocks: &Arc<Blocks>) -> Result<Var, NumericsError> {
        let (tq, tk) = (self.value(queries), self.value(keys));
        if tq.rows() != blocks.len() || tk.rows() != blocks.total() || tq.cols() != tk.cols() {
            return Err(shape_err(
                "cosine_blocks",
                format!("queries {:?}, keys {:?}, {} blocks", tq.shape(), tk.shape(), blocks.len()),
            ));
        }
        let mut out = Tensor::zeros(blocks.total(), 1);
        for b in 0..blocks.len() {
            for r in blocks.range(b) {
                out.set(r, 0, cosine_unchecked(tq.row(b), tk.row(r)));
            }
        }
        let ng = self.ng(queries) || self.ng(keys);
        Ok(self.push(out, Op::CosineBlocks(queries, keys, blocks.clone()), ng))
    }

    /// Softmax within each block of a `[total x 1]` column.
    pub fn block_softmax(&mut self, x: Var, blocks: &Arc<Blocks>) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.cols() != 1 || t.rows() != blocks.total() {
            return Err(shape_err("block_softmax", format!("{:?} for total {}", t.shape(), blocks.total())));
        }
        let mut out = t.clone();
        for b in 0..blocks.len() {
            let range = blocks.range(b);
            if !range.is_empty() {
                softmax_in_place(&mut out.data_mut()[range]);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::BlockSoftmax(x, blocks.clone()), ng))
    }

    /// Sum of the rows of each block, `[total x n] -> [blocks x n]`.
    /// Empty blocks yield zero rows.
    pub fn block_sum(&mut self, x: Var, blocks: &Arc<Blocks>) -> Result<Var, NumericsError> {
        self.block_reduce(x, blocks, false)
    }

    /// Mean of the rows of each block; empty blocks yield zero rows.
    pub fn block_mean(&mut self, x: Var, blocks: &Arc<Blocks>) -> Result<Var, NumericsError> {
        self.block_reduce(x, blocks, true)
    }

    fn block_reduce(&mut self, x: Var, blocks: &Arc<Blocks>, mean: bool) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if t.rows() != blocks.total() {
            return Err(shape_err("block_reduce", format!("{:?} for total {}", t.shape(), blocks.total())));
        }
        let mut out = Tensor::zeros(blocks.len(), t.cols());
        for b in 0..blocks.len() {
            let range = blocks.range(b);
            let n = range.len();
            let dst = out.row_mut(b);
            for r in range {
                for (d, s) in dst.iter_mut().zip(t.row(r)) {
                    *d += s;
                }
            }
            if mean && n > 0 {
                dst.iter_mut().for_each(|d| *d /= n as Real);
            }
        }
        let ng = self.ng(x);
        let op = if mean { Op::BlockMean(x, blocks.clone()) } else { Op::BlockSum(x, blocks.clone()) };
        Ok(self.push(out, op, ng))
    }

    /// Scaled dot-product attention restricted to each block:
    /// `softmax(Q K^T * scale) V` with rows of a block attending only to
    /// rows of the same block.
    pub fn block_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        blocks: &Arc<Blocks>,
        scale: Real,
    ) -> Result<Var, NumericsError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.rows() != blocks.total() || tv.rows() != blocks.total() {
            return Err(shape_err(
                "block_attention",
                format!("q {:?} k {:?} v {:?} total {}", tq.shape(), tk.shape(), tv.shape(), blocks.total()),
            ));
        }
        let dv = tv.cols();
        let mut out = Tensor::zeros(blocks.total(), dv);
        let mut probs = Vec::with_capacity(blocks.sizes().iter().map(|s| s * s).sum());
        for b in 0..blocks.len() {
            let range = blocks.range(b);
            let n = range.len();
            let base = range.start;
            for i in 0..n {
                let start = probs.len();
                for j in 0..n {
                    probs.push(dot(tq.row(base + i), tk.row(base + j)) * scale);
                }
                softmax_in_place(&mut probs[start..]);
                let row = &probs[start..];
                let dst = out.row_mut(base + i);
                for (j, &p) in row.iter().enumerate() {
                    for (d, s) in dst.iter_mut().zip(tv.row(base + j)) {
                        *d += p * s;
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(out, Op::BlockAttention { q, k, v, blocks: blocks.clone(), scale, probs }, ng))
    }

    /// Per-row selection `out[i] = x[i, idx[i]]`, `[m x 1]`.
    pub fn pick_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if idx.len() != t.rows() || idx.iter().any(|&c| c >= t.cols()) {
            return Err(shape_err("pick_cols", format!("{} indices for {:?}", idx.len(), t.shape())));
        }
        let data = idx.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let out = Tensor::new(t.rows(), 1, data).expect("sized");
        let ng = self.ng(x);
        Ok(self.push(out, Op::PickCols(x, idx.to_vec()), ng))
    }

    /// Elementwise binary cross-entropy between `sigmoid(logits)` and
    /// `targets`, summed: `sum(-x ln d - (1 - x) ln(1 - d))`, evaluated as
    /// `softplus(z) - x z` for stability.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var, NumericsError> {
        let t = self.value(logits);
        if t.shape() != targets.shape() {
            return Err(shape_err("bce_with_logits", format!("{:?} vs {:?}", t.shape(), targets.shape())));
        }
        let loss: Real = t.data().iter().zip(targets.data()).map(|(&z, &x)| softplus(z) - x * z).sum();
        let ng = self.ng(logits);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits(logits, targets.clone()), ng))
    }

    /// Cross-entropy of per-row softmax against one-hot targets, summed over
    /// rows with `None` targets masked. With `both_sided` every vocabulary
    /// entry also contributes `-(1 - x) ln(1 - d)`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[Option<usize>], both_sided: bool) -> Result<Var, NumericsError> {
        let t = self.value(logits);
        if targets.len() != t.rows() || targets.iter().flatten().any(|&c| c >= t.cols()) {
            return Err(shape_err("softmax_xent", format!("{} targets for {:?}", targets.len(), t.shape())));
        }
        let mut loss = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let Some(tgt) = *target else { continue };
            let row = t.row(r);
            let lse = super::tensor::log_sum_exp(row);
            loss += lse - row[tgt];
            if both_sided {
                for i in 0..row.len() {
                    if i != tgt {
                        loss -= log1m_softmax(row, i, lse);
                    }
                }
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent { logits, targets: targets.to_vec(), both_sided },
            ng,
        ))
    }

    /// Reverse pass from a `1 x 1` loss.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.consumed {
            return Err(NumericsError::TapeConsumed);
        }
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(NumericsError::NonScalarLoss { rows: lt.rows(), cols: lt.cols() });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<Real>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: HashMap<usize, Tensor> = HashMap::new();
        let mut param_grads: Vec<(ParamId, Tensor)> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let out = self.value(Var(i));
            let (rows, cols) = (out.rows(), out.cols());
            match &node.op {
                Op::Leaf => {
                    leaf_grads.insert(i, Tensor::new(rows, cols, g).expect("sized"));
                }
                Op::Param(id) => {
                    param_grads.push((*id, Tensor::new(rows, cols, g).expect("sized")));
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if self.ng(*a) {
                        let da = acc(&mut grads, *a, m * k);
                        for r in 0..m {
                            let g_row = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                da[r * k + p] += dot(g_row, &tb.data()[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    if self.ng(*b) {
                        let db = acc(&mut grads, *b, k * n);
                        for r in 0..m {
                            let g_row = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let a_rp = ta.data()[r * k + p];
                                if a_rp == 0.0 {
                                    continue;
                                }
                                for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                    *d += a_rp * gv;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.ng(v) {
                            axpy(acc(&mut grads, v, g.len()), 1.0, &g);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*a) {
                        axpy(acc(&mut grads, *a, g.len()), 1.0, &g);
                    }
                    if self.ng(*b) {
                        axpy(acc(&mut grads, *b, g.len()), -1.0, &g);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                    if self.ng(*a) {
                        let da = acc(&mut grads, *a, g.len());
                        for ((d, gv), bv) in da.iter_mut().zip(&g).zip(tb) {
                            *d += gv * bv;
                        }
                    }
                    if self.ng(*b) {
                        let db = acc(&mut grads, *b, g.len());
                        for ((d, gv), av) in db.iter_mut().zip(&g).zip(ta) {
                            *d += gv * av;
                        }
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.ng(*a) {
                        axpy(acc(&mut grads, *a, g.len()), 1.0, &g);
                    }
                    if self.ng(*bias) {
                        let db = acc(&mut grads, *bias, cols);
                        for r in 0..rows {
                            axpy(db, 1.0, &g[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                Op::Scale(a, s) => axpy(acc(&mut grads, *a, g.len()), *s, &g),
                Op::Sigmoid(a) => {
                    let y = out.data();
                    let da = acc(&mut grads, *a, g.len());
                    for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }
                Op::Tanh(a) => {
                    let y = out.data();
                    let da = acc(&mut grads, *a, g.len());
                    for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let da = acc(&mut grads, *a, g.len());
                    for ((d, gv), xv) in da.iter_mut().zip(&g).zip(x) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Softplus(a) => {
                    let x = self.value(*a).data();
                    let da = acc(&mut grads, *a, g.len());
                    for ((d, gv), xv) in da.iter_mut().zip(&g).zip(x) {
                        *d += gv * sigmoid(*xv);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        if self.ng(p) {
                            let dp = acc(&mut grads, p, rows * pc);
                            for r in 0..rows {
                                axpy(&mut dp[r * pc..(r + 1) * pc], 1.0, &g[r * cols + off..r * cols + off + pc]);
                            }
                        }
                        off += pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ac = self.value(*a).cols();
                    let da = acc(&mut grads, *a, rows * ac);
                    for r in 0..rows {
                        axpy(&mut da[r * ac + start..r * ac + start + cols], 1.0, &g[r * cols..(r + 1) * cols]);
                    }
                }
                Op::GatherRows(refs) => {
                    for (i_out, &(v, r)) in refs.iter().enumerate() {
                        if !self.ng(v) {
                            continue;
                        }
                        let len = self.value(v).len();
                        let dv = acc(&mut grads, v, len);
                        axpy(&mut dv[r * cols..(r + 1) * cols], 1.0, &g[i_out * cols..(i_out + 1) * cols]);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = out.data();
                    let da = acc(&mut grads, *a, g.len());
                    for r in 0..rows {
                        let s = r * cols..(r + 1) * cols;
                        softmax_backward(&mut da[s.clone()], &g[s.clone()], &y[s]);
                    }
                }
                Op::LogSoftmaxRows(a) => {
                    let y = out.data();
                    let da = acc(&mut grads, *a, g.len());
                    for r in 0..rows {
                        let s = r * cols..(r + 1) * cols;
                        let gsum: Real = g[s.clone()].iter().sum();
                        for j in s {
                            da[j] += g[j] - y[j].exp() * gsum;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let len = self.value(*a).len();
                    let da = acc(&mut grads, *a, len);
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::SumCols(a) => {
                    let ac = self.value(*a).cols();
                    let da = acc(&mut grads, *a, rows * ac);
                    for r in 0..rows {
                        da[r * ac..(r + 1) * ac].iter_mut().for_each(|d| *d += g[r]);
                    }
                }
                Op::MulCol(a, s) => {
                    let (ta, ts) = (self.value(*a), self.value(*s));
                    let ac = ta.cols();
                    if self.ng(*a) {
                        let da = acc(&mut grads, *a, g.len());
                        for r in 0..rows {
                            axpy(&mut da[r * ac..(r + 1) * ac], ts.get(r, 0), &g[r * ac..(r + 1) * ac]);
                        }
                    }
                    if self.ng(*s) {
                        let ds = acc(&mut grads, *s, rows);
                        for r in 0..rows {
                            ds[r] += dot(&g[r * ac..(r + 1) * ac], ta.row(r));
                        }
                    }
                }
                Op::RepeatBlocks(x, blocks) => {
                    let dx = acc(&mut grads, *x, blocks.len() * cols);
                    for b in 0..blocks.len() {
                        for r in blocks.range(b) {
                            axpy(&mut dx[b * cols..(b + 1) * cols], 1.0, &g[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                Op::CosineBlocks(qv, kv, blocks) => {
                    let (tq, tk) = (self.value(*qv), self.value(*kv));
                    let d = tq.cols();
                    let mut dq = self.ng(*qv).then(|| vec![0.0; tq.len()]);
                    let mut dk = self.ng(*kv).then(|| vec![0.0; tk.len()]);
                    for b in 0..blocks.len() {
                        let q = tq.row(b);
                        let nq = norm(q);
                        for r in blocks.range(b) {
                            let k = tk.row(r);
                            let nk = norm(k);
                            if nq < COSINE_NORM_FLOOR || nk < COSINE_NORM_FLOOR || g[r] == 0.0 {
                                continue;
                            }
                            let c = out.get(r, 0);
                            let inv = 1.0 / (nq * nk);
                            if let Some(dq) = dq.as_mut() {
                                for j in 0..d {
                                    dq[b * d + j] += g[r] * (k[j] * inv - c * q[j] / (nq * nq));
                                }
                            }
                            if let Some(dk) = dk.as_mut() {
                                for j in 0..d {
                                    dk[r * d + j] += g[r] * (q[j] * inv - c * k[j] / (nk * nk));
                                }
                            }
                        }
                    }
                    if let Some(dq) = dq {
                        axpy(acc(&mut grads, *qv, dq.len()), 1.0, &dq);
                    }
                    if let Some(dk) = dk {
                        axpy(acc(&mut grads, *kv, dk.len()), 1.0, &dk);
                    }
                }
                Op::BlockSoftmax(x, blocks) => {
                    let y = out.data();
                    let dx = acc(&mut grads, *x, g.len());
                    for b in 0..blocks.len() {
                        let s = blocks.range(b);
                        if !s.is_empty() {
                            softmax_backward(&mut dx[s.clone()], &g[s.clone()], &y[s]);
                        }
                    }
                }
                Op::BlockSum(x, blocks) | Op::BlockMean(x, blocks) => {
                    let mean = matches!(node.op, Op::BlockMean(..));
                    let dx = acc(&mut grads, *x, blocks.total() * cols);
                    for b in 0..blocks.len() {
                        let range = blocks.range(b);
                        let w = if mean && !range.is_empty() { 1.0 / range.len() as Real } else { 1.0 };
                        for r in range {
                            axpy(&mut dx[r * cols..(r + 1) * cols], w, &g[b * cols..(b + 1) * cols]);
                        }
                    }
                }
                Op::BlockAttention { q, k, v, blocks, scale, probs } => {
                    let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (da_, dv_) = (tq.cols(), tv.cols());
                    let mut dq = vec![0.0; tq.len()];
                    let mut dk = vec![0.0; tk.len()];
                    let mut dvv = vec![0.0; tv.len()];
                    let mut p_off = 0;
                    let mut dp = Vec::new();
                    for b in 0..blocks.len() {
                        let range = blocks.range(b);
                        let n = range.len();
                        let base = range.start;
                        for i in 0..n {
                            let p = &probs[p_off + i * n..p_off + (i + 1) * n];
                            let g_row = &g[(base + i) * dv_..(base + i + 1) * dv_];
                            dp.clear();
                            for j in 0..n {
                                dp.push(dot(g_row, tv.row(base + j)));
                                axpy(&mut dvv[(base + j) * dv_..(base + j + 1) * dv_], p[j], g_row);
                            }
                            let pd: Real = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                let ds = p[j] * (dp[j] - pd) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                axpy(&mut dq[(base + i) * da_..(base + i + 1) * da_], ds, tk.row(base + j));
                                axpy(&mut dk[(base + j) * da_..(base + j + 1) * da_], ds, tq.row(base + i));
                            }
                        }
                        p_off += n * n;
                    }
                    for (var, d) in [(*q, dq), (*k, dk), (*v, dvv)] {
                        if self.ng(var) {
                            axpy(acc(&mut grads, var, d.len()), 1.0, &d);
                        }
                    }
                }
                Op::PickCols(x, idx) => {
                    let xc = self.value(*x).cols();
                    let dx = acc(&mut grads, *x, rows * xc);
                    for (r, &c) in idx.iter().enumerate() {
                        dx[r * xc + c] += g[r];
                    }
                }
                Op::BceWithLogits(z, targets) => {
                    let tz = self.value(*z).data();
                    let dz = acc(&mut grads, *z, tz.len());
                    for ((d, zv), xv) in dz.iter_mut().zip(tz).zip(targets.data()) {
                        *d += g[0] * (sigmoid(*zv) - xv);
                    }
                }
                Op::SoftmaxXent { logits, targets, both_sided } => {
                    let tz = self.value(*logits);
                    let vc = tz.cols();
                    let dz = acc(&mut grads, *logits, tz.len());
                    let mut p = vec![0.0; vc];
                    for (r, target) in targets.iter().enumerate() {
                        let Some(tgt) = *target else { continue };
                        p.copy_from_slice(tz.row(r));
                        softmax_in_place(&mut p);
                        let dst = &mut dz[r * vc..(r + 1) * vc];
                        if !*both_sided {
                            for (j, d) in dst.iter_mut().enumerate() {
                                *d += g[0] * (p[j] - if j == tgt { 1.0 } else { 0.0 });
                            }
                            continue;
                        }
                        // dL/dd_i = -1/d_t for the target, 1/(1 - d_i) elsewhere;
                        // chain through softmax: dz_j = d_j (g_j - sum_i g_i d_i).
                        let gd: Vec<Real> = (0..vc)
                            .map(|i| if i == tgt { -1.0 } else { p[i] / one_minus(&p, i) })
                            .collect();
                        let total: Real = gd.iter().sum();
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d += g[0] * (gd[j] - p[j] * total);
                        }
                    }
                }
            }
        }

        Ok(Gradients { tape: self.id, leaf_grads, param_grads })
    }
}

/// `1 - p_i` computed as the sum of the other probabilities.
fn one_minus(p: &[Real], i: usize) -> Real {
    let s: Real = p.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
    s.max(Real::MIN_POSITIVE)
}

/// `ln(1 - softmax(row)_i)` evaluated in log space.
fn log1m_softmax(row: &[Real], i: usize, lse: Real) -> Real {
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| *v)
        .fold(Real::NEG_INFINITY, Real::max);
    let others: Real = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + others.ln() - lse
}

fn softmax_backward(dx: &mut [Real], g: &[Real], y: &[Real]) {
    let gy: Real = g.iter().zip(y).map(|(a, b)| a * b).sum();
    for ((d, gv), yv) in dx.iter_mut().zip(g).zip(y) {
        *d += yv * (gv - gy);
    }
}

fn axpy(dst: &mut [Real], a: Real, src: &[Real]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn acc(grads: &mut [Option<Vec<Real>>], v: Var, len: usize) -> &mut [Real] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Result of a backward pass.
pub struct Gradients {
    tape: u64,
    leaf_grads: HashMap<usize, Tensor>,
    param_grads: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn tape_id(&self) -> u64 {
        self.tape
    }

    /// Gradient of the loss with respect to a differentiable input.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_grads.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }

    pub fn param_grads(&self) -> &[(ParamId, Tensor)] {
        &self.param_grads
    }

    /// Adds the parameter gradients into `out`.
    pub fn accumulate_into(&self, out: &mut GradSet) {
        for (id, g) in &self.param_grads {
            let dst = out.get_mut(*id);
            for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
    }
}
