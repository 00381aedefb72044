use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{Gradients, ParamId, ParameterStore};
use super::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::{math, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Embedding { table: ParamId, ids: Vec<u32> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    MeanRows { x: Var, rows: Vec<usize> },
    Sum(Var),
    Softmax(Var),
    Normalize { x: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Sigmoid(Var),
    L2Norm(Var),
    SquaredError(Var, Var),
    Bce { p: Var, target: f64, clamped: bool },
}

#[derive(Debug)]
struct Node<'s> {
    value: Cow<'s, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A computation recorded op by op against a read-only parameter store.
///
/// Nodes that depend on no trainable parameter carry no gradient, so frozen
/// sub-networks cost only their forward pass.
pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node<'s>>,
}

const BCE_CLAMP: f64 = 1e-7;

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_cow(Cow::Owned(value), op, requires_grad)
    }

    fn push_cow(&mut self, value: Cow<'s, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.value(id);
        let rg = self.store.is_trainable(id);
        self.push_cow(Cow::Borrowed(value), Op::Param(id), rg)
    }

    /// Gathers rows of an embedding table without copying the whole table.
    pub fn embedding(&mut self, table: ParamId, ids: &[u32]) -> Result<Var> {
        let t = self.store.value(table);
        let dim = t.cols();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id as usize >= t.rows() {
                return Err(Error::dim(
                    "embedding",
                    alloc::format!("id {id} outside table of {} rows", t.rows()),
                ));
            }
            data.extend_from_slice(t.row(id as usize));
        }
        let value = Tensor::new(ids.len(), dim, data)?;
        let rg = self.store.is_trainable(table);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, k] = self.shape(a);
        let [k2, m] = self.shape(b);
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                alloc::format!("{n}x{k} times {k2}x{m}"),
            ));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(n, m, out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let [n, m] = self.shape(a);
        let src = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = src[i * m + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor { rows: m, cols: n, data: out }, Op::Transpose(a), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                alloc::format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let [r, c] = self.shape(a);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(r, c, data)?, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let [r, c] = self.shape(a);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(r, c, data)?, Op::Sub(a, b), rg))
    }

    fn check_row(&self, op: &'static str, x: Var, row: Var) -> Result<()> {
        let [_, c] = self.shape(x);
        if self.shape(row) != [1, c] {
            return Err(Error::dim(
                op,
                alloc::format!("row {:?} against {:?}", self.shape(row), self.shape(x)),
            ));
        }
        Ok(())
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", x, row)?;
        let [r, c] = self.shape(x);
        let b = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            for (v, bb) in chunk.iter_mut().zip(b) {
                *v += bb;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Tensor::new(r, c, data)?, Op::AddRow(x, row), rg))
    }

    /// Multiplies every row of `x` element-wise by a `1 x c` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", x, row)?;
        let [r, c] = self.shape(x);
        let g = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            for (v, gg) in chunk.iter_mut().zip(g) {
                *v *= gg;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Tensor::new(r, c, data)?, Op::MulRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let [r, c] = self.shape(x);
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let rg = self.rg(x);
        self.push(Tensor { rows: r, cols: c, data }, Op::Scale(x, factor), rg)
    }

    /// Concatenates along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat", "no inputs"));
        };
        let rows = self.shape(first)[0];
        if parts.iter().any(|&p| self.shape(p)[0] != rows) {
            return Err(Error::dim("concat", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [r, c] = self.shape(x);
        if start + len > c {
            return Err(Error::dim(
                "slice",
                alloc::format!("columns {start}..{} of {c}", start + len),
            ));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(r, len, data)?, Op::SliceCols { x, start }, rg))
    }

    /// Mean over axis 0 of the selected rows, giving `1 x c`.
    pub fn mean_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let [r, c] = self.shape(x);
        if rows.is_empty() || rows.iter().any(|&i| i >= r) {
            return Err(Error::dim(
                "mean",
                alloc::format!("row selection {rows:?} of {r} rows"),
            ));
        }
        let src = self.value(x);
        let mut data = vec![0.0; c];
        for &i in rows {
            for (d, v) in data.iter_mut().zip(src.row(i)) {
                *d += v;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        for d in data.iter_mut() {
            *d *= inv;
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::row_vector(data),
            Op::MeanRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let [r, c] = self.shape(x);
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = math::exp(*v - max);
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.rg(x);
        self.push(Tensor { rows: r, cols: c, data }, Op::Softmax(x), rg)
    }

    /// `(x - mean) / sqrt(var + eps)` per row, biased variance.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let [r, c] = self.shape(x);
        let mut data = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(r);
        for row in data.chunks_exact_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / math::sqrt(var + eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(x);
        self.push(Tensor { rows: r, cols: c, data }, Op::Normalize { x, inv_std }, rg)
    }

    /// Row-wise layer normalization with gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.normalize_rows(x, eps);
        let g = self.mul_row(n, gain)?;
        self.add_row(g, bias)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let [r, c] = self.shape(x);
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        self.push(Tensor { rows: r, cols: c, data }, op, rg)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, gelu, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    /// Euclidean norm over all elements.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let n = math::l2_norm(self.value(x).data());
        let rg = self.rg(x);
        self.push(Tensor::scalar(n), Op::L2Norm(x), rg)
    }

    /// `sum((a - b)^2)`.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("squared_error", a, b)?;
        let s = math::sq_dist(self.value(a).data(), self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::SquaredError(a, b), rg))
    }

    /// Binary cross-entropy of a scalar probability against a 0/1 target.
    /// The probability is clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, target: f64) -> Result<Var> {
        let raw = self.value(p).item()?;
        let clamped_p = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let loss = -(target * math::ln(clamped_p) + (1.0 - target) * math::ln(1.0 - clamped_p));
        let rg = self.rg(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                target,
                clamped: clamped_p != raw,
            },
            rg,
        ))
    }

    /// Accumulates d(loss)/d(parameter) into `grads` for every trainable
    /// parameter reached from `loss`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::contract(alloc::format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut node_grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        node_grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let [rows, cols] = node.value.shape();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let slot = grads.slot(*id, g.len());
                    for (s, v) in slot.iter_mut().zip(&g) {
                        *s += v;
                    }
                }
                Op::Embedding { table, ids } => {
                    let len = self.store.value(*table).len();
                    let slot = grads.slot(*table, len);
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut slot[id as usize * cols..(id as usize + 1) * cols];
                        for (s, v) in dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *s += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let [n, k] = self.shape(*a);
                    let m = cols;
                    if self.rg(*a) {
                        let ga = self.grad_buf(&mut node_grads, *a);
                        matmul_nt_acc(&g, self.value(*b).data(), ga, n, m, k);
                    }
                    if self.rg(*b) {
                        let gb = self.grad_buf(&mut node_grads, *b);
                        matmul_tn_acc(self.value(*a).data(), &g, gb, k, n, m);
                    }
                }
                Op::Transpose(a) => {
                    let ga = self.grad_buf(&mut node_grads, *a);
                    // a is cols x rows
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[c * rows + r] += g[r * cols + c];
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut node_grads, *a, &g, 1.0);
                    self.acc(&mut node_grads, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut node_grads, *a, &g, 1.0);
                    self.acc(&mut node_grads, *b, &g, -1.0);
                }
                Op::AddRow(x, row) => {
                    self.acc(&mut node_grads, *x, &g, 1.0);
                    if self.rg(*row) {
                        let gr = self.grad_buf(&mut node_grads, *row);
                        for chunk in g.chunks_exact(cols) {
                            for (s, v) in gr.iter_mut().zip(chunk) {
                                *s += v;
                            }
                        }
                    }
                }
                Op::MulRow(x, row) => {
                    if self.rg(*x) {
                        let gain = self.value(*row).data();
                        let gx = self.grad_buf(&mut node_grads, *x);
                        for (gchunk, xchunk) in g.chunks_exact(cols).zip(gx.chunks_exact_mut(cols)) {
                            for ((s, v), w) in xchunk.iter_mut().zip(gchunk).zip(gain) {
                                *s += v * w;
                            }
                        }
                    }
                    if self.rg(*row) {
                        let xv = self.value(*x).data();
                        let gr = self.grad_buf(&mut node_grads, *row);
                        for (gchunk, xchunk) in g.chunks_exact(cols).zip(xv.chunks_exact(cols)) {
                            for ((s, v), w) in gr.iter_mut().zip(gchunk).zip(xchunk) {
                                *s += v * w;
                            }
                        }
                    }
                }
                Op::Scale(x, f) => self.acc(&mut node_grads, *x, &g, *f),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.shape(p)[1];
                        if self.rg(p) {
                            let gp = self.grad_buf(&mut node_grads, p);
                            for r in 0..rows {
                                let src = &g[r * cols + offset..r * cols + offset + pc];
                                for (s, v) in gp[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                                    *s += v;
                                }
                            }
                        }
                        offset += pc;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xc = self.shape(*x)[1];
                    let gx = self.grad_buf(&mut node_grads, *x);
                    for r in 0..rows {
                        let dst = &mut gx[r * xc + start..r * xc + start + cols];
                        for (s, v) in dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *s += v;
                        }
                    }
                }
                Op::MeanRows { x, rows: sel } => {
                    let inv = 1.0 / sel.len() as f64;
                    let gx = self.grad_buf(&mut node_grads, *x);
                    for &r in sel {
                        for (s, v) in gx[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                            *s += v * inv;
                        }
                    }
                }
                Op::Sum(x) => {
                    let gx = self.grad_buf(&mut node_grads, *x);
                    for s in gx.iter_mut() {
                        *s += g[0];
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let gx = self.grad_buf(&mut node_grads, *x);
                    for ((gchunk, ychunk), xchunk) in g
                        .chunks_exact(cols)
                        .zip(y.chunks_exact(cols))
                        .zip(gx.chunks_exact_mut(cols))
                    {
                        let dot: f64 = gchunk.iter().zip(ychunk).map(|(a, b)| a * b).sum();
                        for ((s, gv), yv) in xchunk.iter_mut().zip(gchunk).zip(ychunk) {
                            *s += yv * (gv - dot);
                        }
                    }
                }
                Op::Normalize { x, inv_std } => {
                    let y = node.value.data();
                    let gx = self.grad_buf(&mut node_grads, *x);
                    let n = cols as f64;
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let yr = &y[r * cols..(r + 1) * cols];
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((s, gv), yv) in gx[r * cols..(r + 1) * cols].iter_mut().zip(gr).zip(yr) {
                            *s += inv_std[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x).data();
                    let gx = self.grad_buf(&mut node_grads, *x);
                    for ((s, gv), &v) in gx.iter_mut().zip(&g).zip(xv) {
                        *s += gv * gelu_grad(v);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gx = self.grad_buf(&mut node_grads, *x);
                    for ((s, gv), yv) in gx.iter_mut().zip(&g).zip(y) {
                        *s += gv * yv * (1.0 - yv);
                    }
                }
                Op::L2Norm(x) => {
                    let norm = node.value.data()[0];
                    if norm > 0.0 {
                        let xv = self.value(*x).data();
                        let gx = self.grad_buf(&mut node_grads, *x);
                        for (s, v) in gx.iter_mut().zip(xv) {
                            *s += g[0] * v / norm;
                        }
                    }
                }
                Op::SquaredError(a, b) => {
                    let diff: Vec<f64> = self
                        .value(*a)
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(x, y)| 2.0 * (x - y))
                        .collect();
                    self.acc(&mut node_grads, *a, &diff, g[0]);
                    self.acc(&mut node_grads, *b, &diff, -g[0]);
                }
                Op::Bce { p, target, clamped } => {
                    if !clamped {
                        let pv = self.value(*p).data()[0];
                        let d = -target / pv + (1.0 - target) / (1.0 - pv);
                        let gp = self.grad_buf(&mut node_grads, *p);
                        gp[0] += g[0] * d;
                    }
                }
            }
        }
        Ok(())
    }

    fn grad_buf<'a>(&self, node_grads: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut [f64] {
        let len = self.nodes[v.0].value.len();
        node_grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn acc(&self, node_grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], factor: f64) {
        if !self.rg(v) {
            return;
        }
        let buf = self.grad_buf(node_grads, v);
        for (s, x) in buf.iter_mut().zip(g) {
            *s += factor * x;
        }
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + math::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = math::exp(-0.5 * x * x) * 0.5 * core::f64::consts::FRAC_2_SQRT_PI * core::f64::consts::FRAC_1_SQRT_2;
    cdf + x * pdf
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}
