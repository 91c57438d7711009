//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is an append-only arena. Every operation evaluates eagerly,
//! pushes its result as a new node and returns a [`Var`] handle. Because a
//! node's inputs always precede it, walking the arena from the back is a
//! reverse topological order, so [`Tape::backward`] visits each node once.

use super::tensor::{sigmoid, softplus};
use super::{NumError, Rng, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Dropout(Var, Vec<f64>),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normalized: Vec<f64>, inv_std: Vec<f64> },
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    Sum(Var),
    BceWithLogits(Var, Tensor),
    SoftmaxXent { logits: Var, keep: Vec<bool>, gold: Vec<usize>, probs: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `var`; all zeros when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

fn unchecked(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("internal shape bookkeeping")
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf; gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        let value = self.value(a).transpose()?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// Elementwise sum; equal shapes or one scalar operand.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product; equal shapes or one scalar operand.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    /// `m × n` matrix plus a `1 × n` row added to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() || x.shape().len() != 2 {
            return Err(NumError::shape("add_row", x.shape(), r.shape()));
        }
        let n = x.cols();
        let mut data = x.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (v, b) in chunk.iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        let value = unchecked(x.shape().to_vec(), data);
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).relu();
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).sigmoid();
        self.push(value, Op::Sigmoid(a), &[a])
    }

    /// Inverted dropout. With `rng` set (training) each entry is zeroed with
    /// probability `p`, one draw per entry in row-major order, and survivors
    /// are scaled by `1/(1-p)`. Without `rng` (evaluation) this is the
    /// identity and records nothing.
    pub fn dropout(&mut self, a: Var, p: f64, rng: Option<&mut Rng>) -> Result<Var, NumError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumError::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(a) };
        if p == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let x = self.value(a);
        let mask: Vec<f64> =
            (0..x.numel()).map(|_| if rng.bernoulli(p) { 0.0 } else { keep_scale }).collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = unchecked(x.shape().to_vec(), data);
        Ok(self.push(value, Op::Dropout(a, mask), &[a]))
    }

    /// Row softmax; `mask` (row-major, `true` = keep) forces entries to zero.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, NumError> {
        let value = self.value(a).softmax_rows(mask)?;
        Ok(self.push(value, Op::SoftmaxRows(a), &[a]))
    }

    /// Per-row layer normalization with learned `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumError> {
        let xv = self.value(x);
        let n = xv.cols();
        for p in [gain, bias] {
            let pv = self.value(p);
            if pv.rows() != 1 || pv.cols() != n {
                return Err(NumError::shape("layer_norm", xv.shape(), pv.shape()));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut normalized = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.numel());
        for r in 0..xv.rows() {
            let row = xv.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                normalized.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let value = unchecked(xv.shape().to_vec(), out);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, normalized, inv_std }, &[x, gain, bias]))
    }

    /// Rows `ids` of `table`, stacked (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let t = self.value(table);
        if ids.is_empty() {
            return Err(NumError::Contract("gather_rows needs at least one id".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(NumError::Contract(format!(
                "row id {bad} out of range for table with {} rows",
                t.rows()
            )));
        }
        let n = t.cols();
        let mut data = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let value = unchecked(vec![ids.len(), n], data);
        Ok(self.push(value, Op::Gather(table, ids.to_vec()), &[table]))
    }

    /// Column means: `m × n` to `1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = (x.rows(), x.cols());
        let mut data = vec![0.0; n];
        for r in 0..m {
            for (acc, v) in data.iter_mut().zip(x.row_slice(r)) {
                *acc += v;
            }
        }
        for v in &mut data {
            *v /= m as f64;
        }
        let value = unchecked(vec![1, n], data);
        self.push(value, Op::MeanRows(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let m = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != m {
                return Err(NumError::shape("concat_cols", self.value(parts[0]).shape(), v.shape()));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = unchecked(vec![m, total], data);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let n = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != n {
                return Err(NumError::shape("concat_rows", self.value(parts[0]).shape(), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = unchecked(vec![rows, n], data);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumError> {
        let x = self.value(a);
        if start >= end || end > x.cols() {
            return Err(NumError::Contract(format!(
                "column range {start}..{end} invalid for shape {:?}",
                x.shape()
            )));
        }
        let mut data = Vec::with_capacity(x.rows() * (end - start));
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(r)[start..end]);
        }
        let value = unchecked(vec![x.rows(), end - start], data);
        Ok(self.push(value, Op::SliceCols(a, start, end), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    /// Mean sigmoid cross-entropy over every entry of `logits`, using
    /// `softplus(z) - y z`, which is exact and overflow-free.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var, NumError> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(NumError::shape("bce_with_logits", z.shape(), targets.shape()));
        }
        if let Some(bad) = targets.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(NumError::Contract(format!("target {bad} is not 0 or 1")));
        }
        let total: f64 =
            z.data().iter().zip(targets.data()).map(|(&z, &y)| softplus(z) - y * z).sum();
        let value = Tensor::scalar(total / z.numel() as f64);
        Ok(self.push(value, Op::BceWithLogits(logits, targets.clone()), &[logits]))
    }

    /// Mean softmax cross-entropy over rows, where each row's softmax only
    /// ranges over the columns with `keep[j]`; the other columns get no
    /// gradient.
    pub fn softmax_xent(&mut self, logits: Var, keep: &[bool], gold: &[usize]) -> Result<Var, NumError> {
        let z = self.value(logits);
        let (m, n) = (z.rows(), z.cols());
        if keep.len() != n || gold.len() != m {
            return Err(NumError::shape("softmax_xent", z.shape(), &[gold.len(), keep.len()]));
        }
        if let Some(&g) = gold.iter().find(|&&g| g >= n || !keep[g]) {
            return Err(NumError::Contract(format!("gold index {g} is not a kept class")));
        }
        let mask: Vec<bool> = (0..m).flat_map(|_| keep.iter().copied()).collect();
        let probs = z.softmax_rows(Some(&mask))?;
        let mut total = 0.0;
        for (r, &g) in gold.iter().enumerate() {
            let row = z.row_slice(r);
            let max = (0..n).filter(|&j| keep[j]).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + (0..n).filter(|&j| keep[j]).map(|j| (row[j] - max).exp()).sum::<f64>().ln();
            total += lse - row[g];
        }
        let value = Tensor::scalar(total / m as f64);
        let op = Op::SoftmaxXent { logits, keep: keep.to_vec(), gold: gold.to_vec(), probs };
        Ok(self.push(value, op, &[logits]))
    }

    /// Propagates `d loss / d node` for every node reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            let contributions = self.local_grads(node, &dy)?;
            for (input, delta) in contributions {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], delta);
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(dy);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn local_grads(&self, node: &Node, dy: &Tensor) -> Result<Vec<(Var, Tensor)>, NumError> {
        let val = |v: Var| self.value(v);
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let da = dy.matmul(&val(*b).transpose()?)?;
                let db = val(*a).transpose()?.matmul(dy)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(a) => vec![(*a, dy.transpose()?)],
            Op::Add(a, b) => {
                vec![(*a, reduce_broadcast(dy, val(*a))), (*b, reduce_broadcast(dy, val(*b)))]
            }
            Op::Mul(a, b) => {
                let da = dy.mul(val(*b))?;
                let db = dy.mul(val(*a))?;
                vec![(*a, reduce_broadcast(&da, val(*a))), (*b, reduce_broadcast(&db, val(*b)))]
            }
            Op::Scale(a, c) => vec![(*a, dy.scale(*c))],
            Op::AddRow(a, row) => {
                let n = dy.cols();
                let mut dr = vec![0.0; n];
                for r in 0..dy.rows() {
                    for (acc, v) in dr.iter_mut().zip(dy.row_slice(r)) {
                        *acc += v;
                    }
                }
                vec![(*a, dy.clone()), (*row, unchecked(val(*row).shape().to_vec(), dr))]
            }
            Op::Relu(a) => {
                let dx = val(*a).zip_with(dy, "relu", |x, g| if x > 0.0 { g } else { 0.0 })?;
                vec![(*a, dx)]
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let dx = val(*a).zip_with(dy, "leaky_relu", |x, g| if x > 0.0 { g } else { s * g })?;
                vec![(*a, dx)]
            }
            Op::Sigmoid(a) => {
                let dx = node.value.zip_with(dy, "sigmoid", |y, g| g * y * (1.0 - y))?;
                vec![(*a, dx)]
            }
            Op::Dropout(a, mask) => {
                let data = dy.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                vec![(*a, unchecked(dy.shape().to_vec(), data))]
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let n = y.cols();
                let mut dx = vec![0.0; y.numel()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), dy.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*a, unchecked(y.shape().to_vec(), dx))]
            }
            Op::LayerNorm { x, gain, bias, normalized, inv_std } => {
                let n = dy.cols();
                let g = val(*gain).data();
                let mut dx = vec![0.0; dy.numel()];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for r in 0..dy.rows() {
                    let gr = dy.row_slice(r);
                    let hr = &normalized[r * n..(r + 1) * n];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..n {
                        let dh = gr[j] * g[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                    }
                    mean_dh /= n as f64;
                    mean_dh_h /= n as f64;
                    for j in 0..n {
                        let dh = gr[j] * g[j];
                        dx[r * n + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                vec![
                    (*x, unchecked(dy.shape().to_vec(), dx)),
                    (*gain, unchecked(val(*gain).shape().to_vec(), dg)),
                    (*bias, unchecked(val(*bias).shape().to_vec(), db)),
                ]
            }
            Op::Gather(table, ids) => {
                let t = val(*table);
                let n = t.cols();
                let mut dt = vec![0.0; t.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for (acc, v) in dt[id * n..(id + 1) * n].iter_mut().zip(dy.row_slice(r)) {
                        *acc += v;
                    }
                }
                vec![(*table, unchecked(t.shape().to_vec(), dt))]
            }
            Op::MeanRows(a) => {
                let x = val(*a);
                let m = x.rows() as f64;
                let mut dx = Vec::with_capacity(x.numel());
                for _ in 0..x.rows() {
                    dx.extend(dy.data().iter().map(|g| g / m));
                }
                vec![(*a, unchecked(x.shape().to_vec(), dx))]
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let pv = val(p);
                    let w = pv.cols();
                    let mut d = Vec::with_capacity(pv.numel());
                    for r in 0..dy.rows() {
                        d.extend_from_slice(&dy.row_slice(r)[start..start + w]);
                    }
                    res.push((p, unchecked(pv.shape().to_vec(), d)));
                    start += w;
                }
                res
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let pv = val(p);
                    let len = pv.numel();
                    res.push((p, unchecked(pv.shape().to_vec(), dy.data()[offset..offset + len].to_vec())));
                    offset += len;
                }
                res
            }
            Op::SliceCols(a, start, end) => {
                let x = val(*a);
                let n = x.cols();
                let mut dx = vec![0.0; x.numel()];
                for r in 0..x.rows() {
                    dx[r * n + start..r * n + end].copy_from_slice(dy.row_slice(r));
                }
                vec![(*a, unchecked(x.shape().to_vec(), dx))]
            }
            Op::Sum(a) => {
                let g = dy.item()?;
                vec![(*a, Tensor::full(val(*a).shape(), g))]
            }
            Op::BceWithLogits(logits, targets) => {
                let g = dy.item()?;
                let z = val(*logits);
                let scale = g / z.numel() as f64;
                let dz = z.zip_with(targets, "bce_with_logits", |z, y| (sigmoid(z) - y) * scale)?;
                vec![(*logits, dz)]
            }
            Op::SoftmaxXent { logits, keep, gold, probs } => {
                let g = dy.item()?;
                let n = probs.cols();
                let scale = g / probs.rows() as f64;
                let mut dz = probs.data().to_vec();
                for (r, &gi) in gold.iter().enumerate() {
                    dz[r * n + gi] -= 1.0;
                    for j in 0..n {
                        if keep[j] {
                            dz[r * n + j] *= scale;
                        } else {
                            dz[r * n + j] = 0.0;
                        }
                    }
                }
                vec![(*logits, unchecked(probs.shape().to_vec(), dz))]
            }
        };
        Ok(out)
    }
}

/// Folds a broadcast gradient back to the operand's shape (scalar operands
/// receive the sum).
fn reduce_broadcast(grad: &Tensor, operand: &Tensor) -> Tensor {
    if grad.shape() == operand.shape() {
        grad.clone()
    } else {
        Tensor::full(operand.shape(), grad.sum())
    }
}
