//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Each
//! recorded node keeps its value and the operation that produced it, so
//! [`Tape::backward`] can walk the nodes in reverse and accumulate
//! vector-Jacobian products. Parameters enter the tape through
//! [`Tape::param`]; their gradients are written back into the
//! [`ParamStore`] they came from.

use std::sync::Arc;

use super::tensor::{dot, matmul_acc, matmul_tn_acc, transpose};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{invalid, Error, Result};

/// Smallest row norm accepted by [`Tape::l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Sparse square matrix applied block-wise along the row axis.
#[derive(Clone, Debug)]
pub struct BlockOperator {
    size: usize,
    /// `rows[i]` lists `(j, weight)` pairs so that `out_i = sum_j w * in_j`.
    rows: Vec<Vec<(usize, f64)>>,
}

impl BlockOperator {
    pub fn from_dense(size: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != size * size {
            return Err(invalid("block operator needs a square matrix"));
        }
        let rows = (0..size)
            .map(|i| {
                (0..size)
                    .filter_map(|j| {
                        let w = dense[i * size + j];
                        (w != 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        Ok(Self { size, rows })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(col, _)| *col == j)
            .map_or(0.0, |(_, w)| *w)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    MulRows(usize, Arc<Vec<f64>>),
    Affine(usize, f64),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SegmentMean(usize, Arc<Vec<(usize, usize)>>),
    MaskedMean(usize, Arc<Vec<f64>>, f64),
    Relu(usize),
    Softmax(usize),
    L2Normalize(usize, Vec<f64>),
    RowDot(usize, usize),
    Clamp(usize, f64, f64),
    Square(usize),
    Sum(usize),
    WeightedSum(usize, Arc<Vec<f64>>),
    CrossEntropy(usize, Arc<Vec<usize>>),
    BlockMix(usize, Arc<BlockOperator>),
    TemporalUnfold(usize, UnfoldSpec),
    Reshape(usize),
}

#[derive(Clone, Copy, Debug)]
struct UnfoldSpec {
    frames: usize,
    joints: usize,
    channels: usize,
    kernel: usize,
    stride: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward pass for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
}

fn check_rows_cols(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(invalid(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.val(v).data()[0]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a stored parameter; repeated calls on the same tape reuse the node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| invalid(format!("unknown parameter `{name}`")))?;
        Ok(self.param_id(store, id))
    }

    pub fn param_id(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.bound[id.0] = Some(v);
        v
    }

    // ---- primitives -------------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(invalid(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0)))
    }

    /// `[m,k] x [n,k]^T -> [m,n]`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        if tb.cols() != k {
            return Err(invalid(format!(
                "matmul_t: {:?} x {:?}^T",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = dot(ta.row_slice(i), tb.row_slice(j));
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulT(a.0, b.0)))
    }

    /// Elementwise sum. `b` may also be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            let t = Tensor::new(ta.shape().to_vec(), data)?;
            return Ok(self.push(t, Op::Add(a.0, b.0)));
        }
        if tb.len() == ta.cols() && tb.rows() == 1 {
            let cols = ta.cols();
            let mut data = ta.data().to_vec();
            for row in data.chunks_mut(cols) {
                for (x, y) in row.iter_mut().zip(tb.data()) {
                    *x += y;
                }
            }
            let t = Tensor::new(ta.shape().to_vec(), data)?;
            return Ok(self.push(t, Op::AddRow(a.0, b.0)));
        }
        Err(invalid(format!(
            "add: shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        )))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        check_rows_cols(ta, tb, "mul")?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a.0, b.0)))
    }

    /// Scales row `i` by the constant `weights[i]` (masking).
    pub fn mul_rows(&mut self, a: Var, weights: Arc<Vec<f64>>) -> Result<Var> {
        let ta = self.val(a);
        if weights.len() != ta.rows() {
            return Err(invalid(format!(
                "mul_rows: {} weights for {} rows",
                weights.len(),
                ta.rows()
            )));
        }
        let cols = ta.cols();
        let mut data = ta.data().to_vec();
        for (row, w) in data.chunks_mut(cols).zip(weights.iter()) {
            row.iter_mut().for_each(|x| *x *= w);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::MulRows(a.0, weights)))
    }

    /// `scale * a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let ta = self.val(a);
        let data = ta.data().iter().map(|x| scale * x + shift).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same length");
        self.push(t, Op::Affine(a.0, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// Concatenates along the trailing axis; all inputs share their row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat of nothing"))?;
        let rows = self.val(*first).rows();
        if parts.iter().any(|p| self.val(*p).rows() != rows) {
            return Err(invalid("concat_cols: row counts differ"));
        }
        let total: usize = parts.iter().map(|p| self.val(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.val(*p).row_slice(r));
            }
        }
        let t = Tensor::matrix(rows, total, data)?;
        Ok(self.push(t, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    /// Stacks rows; all inputs share their column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat of nothing"))?;
        let cols = self.val(*first).cols();
        if parts.iter().any(|p| self.val(*p).cols() != cols) {
            return Err(invalid("concat_rows: column counts differ"));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.val(*p).data());
        }
        let rows = data.len() / cols;
        let t = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(t, Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.val(a);
        let (rows, cols) = (ta.rows(), ta.cols());
        if start + len > cols || len == 0 {
            return Err(invalid(format!(
                "slice_cols: [{start}, {}) out of {cols}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&ta.row_slice(r)[start..start + len]);
        }
        let t = Tensor::matrix(rows, len, data)?;
        Ok(self.push(t, Op::SliceCols(a.0, start)))
    }

    /// Mean over each half-open row range; one output row per range.
    pub fn mean_pool(&mut self, a: Var, ranges: Arc<Vec<(usize, usize)>>) -> Result<Var> {
        let ta = self.val(a);
        let cols = ta.cols();
        let mut data = vec![0.0; ranges.len() * cols];
        for (s, &(lo, hi)) in ranges.iter().enumerate() {
            if lo >= hi || hi > ta.rows() {
                return Err(invalid(format!("mean_pool: bad range [{lo}, {hi})")));
            }
            let out = &mut data[s * cols..(s + 1) * cols];
            for r in lo..hi {
                for (o, x) in out.iter_mut().zip(ta.row_slice(r)) {
                    *o += x;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let t = Tensor::matrix(ranges.len(), cols, data)?;
        Ok(self.push(t, Op::SegmentMean(a.0, ranges)))
    }

    /// Weighted row mean `sum_i w_i a_i / sum_i w_i` producing a single row.
    pub fn masked_mean(&mut self, a: Var, weights: Arc<Vec<f64>>) -> Result<Var> {
        let ta = self.val(a);
        if weights.len() != ta.rows() {
            return Err(invalid("masked_mean: weight count differs from rows"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateInput("masked_mean over an empty mask".into()));
        }
        let cols = ta.cols();
        let mut data = vec![0.0; cols];
        for (r, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for (o, x) in data.iter_mut().zip(ta.row_slice(r)) {
                *o += w * x;
            }
        }
        data.iter_mut().for_each(|o| *o /= total);
        let t = Tensor::row(data);
        Ok(self.push(t, Op::MaskedMean(a.0, weights, total)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.val(a);
        let data = ta.data().iter().map(|x| x.max(0.0)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same length");
        self.push(t, Op::Relu(a.0))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.val(a);
        let cols = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same length");
        self.push(t, Op::Softmax(a.0))
    }

    /// Row-wise unit normalization; rows with norm below [`MIN_NORM`] are rejected.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let ta = self.val(a);
        let cols = ta.cols();
        let mut norms = Vec::with_capacity(ta.rows());
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(cols) {
            let norm = dot(row, row).sqrt();
            if !(norm >= MIN_NORM) {
                return Err(Error::DegenerateVector {
                    norm,
                    threshold: MIN_NORM,
                });
            }
            row.iter_mut().for_each(|x| *x /= norm);
            norms.push(norm);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::L2Normalize(a.0, norms)))
    }

    /// Row-wise inner products `[m,n] . [m,n] -> [m,1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        check_rows_cols(ta, tb, "row_dot")?;
        let data: Vec<f64> = (0..ta.rows())
            .map(|r| dot(ta.row_slice(r), tb.row_slice(r)))
            .collect();
        let t = Tensor::matrix(data.len(), 1, data)?;
        Ok(self.push(t, Op::RowDot(a.0, b.0)))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let ta = self.val(a);
        let data = ta.data().iter().map(|x| x.clamp(lo, hi)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same length");
        self.push(t, Op::Clamp(a.0, lo, hi))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let ta = self.val(a);
        let data = ta.data().iter().map(|x| x * x).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same length");
        self.push(t, Op::Square(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.val(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `sum_i w_i a_i` over the flattened tensor.
    pub fn weighted_sum(&mut self, a: Var, weights: Arc<Vec<f64>>) -> Result<Var> {
        let ta = self.val(a);
        if weights.len() != ta.len() {
            return Err(invalid("weighted_sum: weight count differs from length"));
        }
        let s = dot(ta.data(), &weights);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a.0, weights)))
    }

    /// Per-row negative log-softmax at `labels[row]`, shape `[m,1]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>) -> Result<Var> {
        let t = self.val(logits);
        let k = t.cols();
        if labels.len() != t.rows() {
            return Err(invalid("cross_entropy: one label per row required"));
        }
        let mut data = Vec::with_capacity(labels.len());
        for (r, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(invalid(format!("label {label} out of range for {k} classes")));
            }
            let row = t.row_slice(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            data.push(lse - row[label]);
        }
        let out = Tensor::matrix(data.len(), 1, data)?;
        Ok(self.push(out, Op::CrossEntropy(logits.0, labels)))
    }

    /// Applies a sparse `J x J` operator to every consecutive block of `J` rows.
    pub fn block_mix(&mut self, a: Var, op: Arc<BlockOperator>) -> Result<Var> {
        let ta = self.val(a);
        let (rows, cols, j) = (ta.rows(), ta.cols(), op.size);
        if j == 0 || rows % j != 0 {
            return Err(invalid(format!("block_mix: {rows} rows not a multiple of {j}")));
        }
        let mut data = vec![0.0; rows * cols];
        let src = ta.data();
        for b in 0..rows / j {
            for (i, entries) in op.rows.iter().enumerate() {
                let out = &mut data[(b * j + i) * cols..(b * j + i + 1) * cols];
                for &(jj, w) in entries {
                    let inp = &src[(b * j + jj) * cols..(b * j + jj + 1) * cols];
                    for (o, x) in out.iter_mut().zip(inp) {
                        *o += w * x;
                    }
                }
            }
        }
        let t = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(t, Op::BlockMix(a.0, op)))
    }

    /// Gathers strided temporal windows.
    ///
    /// Input rows are ordered `(frame, joint)`; output rows are ordered
    /// `(window, joint)` and hold the `kernel` consecutive frames of that joint
    /// concatenated channel-wise.
    pub fn temporal_unfold(
        &mut self,
        a: Var,
        joints: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Var> {
        let ta = self.val(a);
        let channels = ta.cols();
        if joints == 0 || ta.rows() % joints != 0 {
            return Err(invalid("temporal_unfold: rows not a multiple of joints"));
        }
        let frames = ta.rows() / joints;
        if kernel == 0 || stride == 0 || frames < kernel {
            return Err(invalid(format!(
                "temporal_unfold: {frames} frames, kernel {kernel}, stride {stride}"
            )));
        }
        let windows = (frames - kernel) / stride + 1;
        let width = kernel * channels;
        let mut data = vec![0.0; windows * joints * width];
        let src = ta.data();
        for w in 0..windows {
            for j in 0..joints {
                let out_row = (w * joints + j) * width;
                for r in 0..kernel {
                    let in_row = ((w * stride + r) * joints + j) * channels;
                    data[out_row + r * channels..out_row + (r + 1) * channels]
                        .copy_from_slice(&src[in_row..in_row + channels]);
                }
            }
        }
        let t = Tensor::matrix(windows * joints, width, data)?;
        let spec = UnfoldSpec {
            frames,
            joints,
            channels,
            kernel,
            stride,
        };
        Ok(self.push(t, Op::TemporalUnfold(a.0, spec)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.val(a).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(a.0)))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Gradients of `loss` with respect to every node on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidState("backward called on an empty tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidState("loss does not belong to this tape".into()));
        }
        if self.val(loss).len() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.val(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        let mut seed = Tensor::zeros(self.val(loss).shape());
        seed.data_mut()[0] = 1.0;
        grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(grads)
    }

    /// Runs the reverse pass and writes parameter gradients into `store`.
    ///
    /// Every gradient slot is overwritten; parameters the loss does not reach
    /// end up with zero gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.zero_grads();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                let slot = store
                    .grads_mut()
                    .get_mut(id.0)
                    .ok_or_else(|| Error::InvalidState("parameter not in store".into()))?;
                if slot.shape() != g.shape() {
                    return Err(Error::InvalidState(format!(
                        "gradient shape {:?} does not match parameter {:?}",
                        g.shape(),
                        slot.shape()
                    )));
                }
                for (s, v) in slot.data_mut().iter_mut().zip(g.data()) {
                    *s += v;
                }
            }
        }
        store.set_grads_ready(true);
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        let shape_of = |j: usize| self.nodes[j].value.shape();
        let acc = |grads: &mut [Option<Tensor>], j: usize, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[j].get_or_insert_with(|| Tensor::zeros(shape_of(j)));
            f(slot.data_mut());
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let bt = transpose(tb.data(), k, n);
                acc(grads, *a, &mut |ga| matmul_acc(gd, &bt, ga, m, n, k));
                acc(grads, *b, &mut |gb| matmul_tn_acc(ta.data(), gd, gb, m, k, n));
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                acc(grads, *a, &mut |ga| matmul_acc(gd, tb.data(), ga, m, n, k));
                acc(grads, *b, &mut |gb| matmul_tn_acc(gd, ta.data(), gb, m, n, k));
            }
            Op::Add(a, b) => {
                acc(grads, *a, &mut |ga| add_into(ga, gd));
                acc(grads, *b, &mut |gb| add_into(gb, gd));
            }
            Op::AddRow(a, b) => {
                acc(grads, *a, &mut |ga| add_into(ga, gd));
                let cols = g.cols();
                acc(grads, *b, &mut |gb| {
                    for row in gd.chunks(cols) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                acc(grads, *a, &mut |ga| {
                    for ((o, g), y) in ga.iter_mut().zip(gd).zip(tb.data()) {
                        *o += g * y;
                    }
                });
                acc(grads, *b, &mut |gb| {
                    for ((o, g), x) in gb.iter_mut().zip(gd).zip(ta.data()) {
                        *o += g * x;
                    }
                });
            }
            Op::MulRows(a, w) => {
                let cols = g.cols();
                acc(grads, *a, &mut |ga| {
                    for ((orow, grow), wi) in ga.chunks_mut(cols).zip(gd.chunks(cols)).zip(w.iter())
                    {
                        for (o, gv) in orow.iter_mut().zip(grow) {
                            *o += gv * wi;
                        }
                    }
                });
            }
            Op::Affine(a, s) => acc(grads, *a, &mut |ga| {
                for (o, gv) in ga.iter_mut().zip(gd) {
                    *o += s * gv;
                }
            }),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let width = self.nodes[p].value.cols();
                    acc(grads, p, &mut |gp| {
                        for r in 0..rows {
                            let src = &gd[r * total + offset..r * total + offset + width];
                            add_into(&mut gp[r * width..(r + 1) * width], src);
                        }
                    });
                    offset += width;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    acc(grads, p, &mut |gp| add_into(gp, &gd[offset..offset + len]));
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, width) = (g.rows(), g.cols());
                let cols = self.nodes[*a].value.cols();
                acc(grads, *a, &mut |ga| {
                    for r in 0..rows {
                        add_into(
                            &mut ga[r * cols + start..r * cols + start + width],
                            &gd[r * width..(r + 1) * width],
                        );
                    }
                });
            }
            Op::SegmentMean(a, ranges) => {
                let cols = g.cols();
                acc(grads, *a, &mut |ga| {
                    for (s, &(lo, hi)) in ranges.iter().enumerate() {
                        let inv = 1.0 / (hi - lo) as f64;
                        let gs = &gd[s * cols..(s + 1) * cols];
                        for r in lo..hi {
                            for (o, gv) in ga[r * cols..(r + 1) * cols].iter_mut().zip(gs) {
                                *o += gv * inv;
                            }
                        }
                    }
                });
            }
            Op::MaskedMean(a, w, total) => {
                let cols = g.cols();
                acc(grads, *a, &mut |ga| {
                    for (r, wi) in w.iter().enumerate() {
                        if *wi == 0.0 {
                            continue;
                        }
                        let f = wi / total;
                        for (o, gv) in ga[r * cols..(r + 1) * cols].iter_mut().zip(gd) {
                            *o += gv * f;
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.nodes[*a].value.data();
                acc(grads, *a, &mut |ga| {
                    for ((o, gv), xv) in ga.iter_mut().zip(gd).zip(x) {
                        if *xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let cols = g.cols();
                acc(grads, *a, &mut |ga| {
                    for ((orow, grow), yrow) in
                        ga.chunks_mut(cols).zip(gd.chunks(cols)).zip(y.chunks(cols))
                    {
                        let s = dot(grow, yrow);
                        for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yv * (gv - s);
                        }
                    }
                });
            }
            Op::L2Normalize(a, norms) => {
                let y = node.value.data();
                let cols = g.cols();
                acc(grads, *a, &mut |ga| {
                    for (((orow, grow), yrow), n) in ga
                        .chunks_mut(cols)
                        .zip(gd.chunks(cols))
                        .zip(y.chunks(cols))
                        .zip(norms)
                    {
                        let s = dot(grow, yrow);
                        for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += (gv - yv * s) / n;
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let cols = ta.cols();
                acc(grads, *a, &mut |ga| {
                    for (r, gv) in gd.iter().enumerate() {
                        for (o, y) in ga[r * cols..(r + 1) * cols].iter_mut().zip(tb.row_slice(r)) {
                            *o += gv * y;
                        }
                    }
                });
                acc(grads, *b, &mut |gb| {
                    for (r, gv) in gd.iter().enumerate() {
                        for (o, x) in gb[r * cols..(r + 1) * cols].iter_mut().zip(ta.row_slice(r)) {
                            *o += gv * x;
                        }
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.nodes[*a].value.data();
                acc(grads, *a, &mut |ga| {
                    for ((o, gv), xv) in ga.iter_mut().zip(gd).zip(x) {
                        if *xv >= *lo && *xv <= *hi {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Square(a) => {
                let x = self.nodes[*a].value.data();
                acc(grads, *a, &mut |ga| {
                    for ((o, gv), xv) in ga.iter_mut().zip(gd).zip(x) {
                        *o += 2.0 * xv * gv;
                    }
                });
            }
            Op::Sum(a) => {
                let gv = gd[0];
                acc(grads, *a, &mut |ga| ga.iter_mut().for_each(|o| *o += gv));
            }
            Op::WeightedSum(a, w) => {
                let gv = gd[0];
                acc(grads, *a, &mut |ga| {
                    for (o, wi) in ga.iter_mut().zip(w.iter()) {
                        *o += gv * wi;
                    }
                });
            }
            Op::CrossEntropy(a, labels) => {
                let t = &self.nodes[*a].value;
                let k = t.cols();
                acc(grads, *a, &mut |ga| {
                    for (r, &label) in labels.iter().enumerate() {
                        let row = t.row_slice(r);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
                        for c in 0..k {
                            let p = (row[c] - max).exp() / sum;
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            ga[r * k + c] += gd[r] * (p - onehot);
                        }
                    }
                });
            }
            Op::BlockMix(a, op) => {
                let cols = g.cols();
                let j = op.size;
                let blocks = g.rows() / j;
                acc(grads, *a, &mut |ga| {
                    for b in 0..blocks {
                        for (i, entries) in op.rows.iter().enumerate() {
                            let grow = &gd[(b * j + i) * cols..(b * j + i + 1) * cols];
                            for &(jj, w) in entries {
                                let o = &mut ga[(b * j + jj) * cols..(b * j + jj + 1) * cols];
                                for (ov, gv) in o.iter_mut().zip(grow) {
                                    *ov += w * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::TemporalUnfold(a, spec) => {
                let windows = (spec.frames - spec.kernel) / spec.stride + 1;
                let (c, width) = (spec.channels, spec.kernel * spec.channels);
                acc(grads, *a, &mut |ga| {
                    for w in 0..windows {
                        for j in 0..spec.joints {
                            let out_row = (w * spec.joints + j) * width;
                            for r in 0..spec.kernel {
                                let in_row = ((w * spec.stride + r) * spec.joints + j) * c;
                                add_into(
                                    &mut ga[in_row..in_row + c],
                                    &gd[out_row + r * c..out_row + (r + 1) * c],
                                );
                            }
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(grads, *a, &mut |ga| add_into(ga, gd)),
        }
    }

    /// Hash of the branch taken by every piecewise primitive (relu, clamp).
    ///
    /// Two forward passes with equal signatures evaluated the same smooth
    /// piece of the loss, which is what finite-difference checks require.
    pub fn activation_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |code: u8| {
            h ^= code as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => {
                    for x in self.nodes[a].value.data() {
                        feed(u8::from(*x > 0.0));
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    for x in self.nodes[a].value.data() {
                        feed(if *x < lo {
                            0
                        } else if *x > hi {
                            2
                        } else {
                            1
                        });
                    }
                }
                _ => {}
            }
        }
        h
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
