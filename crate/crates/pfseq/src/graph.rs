//! Tape-based reverse-mode differentiation over dense `Tensor`s.
//!
//! A `Tape` records a DAG of primitive operations as it is built; node indices
//! are append-only, so reverse index order is a valid topological order for
//! backpropagation. The primitive set is exactly what the models in this crate
//! need: matrix products, concatenation/slicing, gated-cell elementwise
//! arithmetic, masked softmax, explicit dropout masks, and mean/squared-error
//! reductions. Gradients flow through everything that is reachable from a
//! `Param` leaf, including predictions fed back into later steps of an
//! unrolled autoregressive decode.
//!
//! Every operation output is checked for NaN/Inf; a violation aborts with a
//! numeric-failure error identifying the offending node.

use crate::error::{Error, Result};
use crate::optim::Params;
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    /// Constant leaf: inputs, targets, dropout masks, frozen weights.
    Value,
    /// Trainable leaf; the payload is the index into the bound `Params`.
    Param(usize),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Matrix plus a row vector broadcast over rows.
    AddRow(NodeId, NodeId),
    ScaleConst(NodeId, f64),
    /// Tensor scaled by a one-element node.
    MulScalar(NodeId, NodeId),
    Recip(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LeakyRelu(NodeId, f64),
    /// Row-wise softmax with an optional additive mask (entries 0 or -inf).
    /// The mask lives inside the op, not on the tape, because -inf is only
    /// legal inside the softmax. Fully masked rows produce all-zero rows.
    MaskedSoftmaxRows(NodeId, Option<Tensor>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    MeanAll(NodeId),
    /// Mean over rows: [m,n] -> [1,n].
    MeanRows(NodeId),
    /// Row gather (embedding lookup): w[v,n] + ids -> [len(ids), n].
    GatherRows(NodeId, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Value => "value",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::ScaleConst(..) => "scale_const",
            Op::MulScalar(..) => "mul_scalar",
            Op::Recip(_) => "recip",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::MaskedSoftmaxRows(..) => "masked_softmax_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::StackRows(_) => "stack_rows",
            Op::MeanAll(_) => "mean_all",
            Op::MeanRows(_) => "mean_rows",
            Op::GatherRows(..) => "gather_rows",
        }
    }
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by `Tape::backward`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite values at node {} ({})",
                self.nodes.len(),
                op.name()
            )));
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Ok(id)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Insert a constant leaf (no gradient will flow into it).
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, false, Op::Value)
    }

    /// Insert a trainable leaf tied to `Params` slot `index`.
    pub fn param_leaf(&mut self, index: usize, value: Tensor) -> Result<NodeId> {
        self.push(value, true, Op::Param(index))
    }

    /// Bind every parameter in `params` as a trainable leaf, in order.
    pub fn bind_params(&mut self, params: &Params) -> Result<Vec<NodeId>> {
        (0..params.len())
            .map(|i| self.param_leaf(i, params.get(i).value.clone()))
            .collect()
    }

    /// Bind every parameter as a frozen constant (no gradients).
    pub fn bind_frozen(&mut self, params: &Params) -> Result<Vec<NodeId>> {
        (0..params.len())
            .map(|i| self.constant(params.get(i).value.clone()))
            .collect()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = (va.rows(), va.cols());
        let (k2, n) = (vb.rows(), vb.cols());
        if k != k2 {
            return Err(Error::config(format!(
                "matmul shape mismatch: [{m}x{k}] x [{k2}x{n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(va.values(), vb.values(), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], out)?, needs, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).transposed();
        let needs = self.needs(x);
        self.push(v, needs, Op::Transpose(x))
    }

    fn zip_same_shape(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::config(format!(
                "{} shape mismatch: {:?} vs {:?}",
                op.name(),
                va.shape(),
                vb.shape()
            )));
        }
        let values = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), values)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, needs, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (vx, vr) = (self.value(x), self.value(row));
        let (m, n) = (vx.rows(), vx.cols());
        if vr.numel() != n {
            return Err(Error::config(format!(
                "add_row: row has {} values, matrix has {n} columns",
                vr.numel()
            )));
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(vx.values()[i * n + j] + vr.values()[j]);
            }
        }
        let needs = self.needs(x) || self.needs(row);
        self.push(Tensor::new(vec![m, n], out)?, needs, Op::AddRow(x, row))
    }

    pub fn scale_const(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.values().iter().map(|&t| c * t).collect())?;
        let needs = self.needs(x);
        self.push(out, needs, Op::ScaleConst(x, c))
    }

    pub fn mul_scalar(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        let vs = self.value(s);
        if vs.numel() != 1 {
            return Err(Error::config(format!(
                "mul_scalar: scale must have one element, got {:?}",
                vs.shape()
            )));
        }
        let c = vs.item();
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.values().iter().map(|&t| c * t).collect())?;
        let needs = self.needs(s) || self.needs(x);
        self.push(out, needs, Op::MulScalar(x, s))
    }

    pub fn recip(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.values().iter().map(|&t| 1.0 / t).collect())?;
        let needs = self.needs(x);
        self.push(out, needs, Op::Recip(x))
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.values().iter().map(|&t| f(t)).collect())?;
        let needs = self.needs(x);
        self.push(out, needs, op)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.map(x, |t| 1.0 / (1.0 + (-t).exp()), Op::Sigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.map(
            x,
            |t| if t > 0.0 { t } else { slope * t },
            Op::LeakyRelu(x, slope),
        )
    }

    /// Row-wise softmax with an optional additive mask. Mask entries must be
    /// 0 (keep) or -inf (drop); rows that are fully masked come out all-zero.
    pub fn masked_softmax_rows(&mut self, x: NodeId, mask: Option<Tensor>) -> Result<NodeId> {
        let v = self.value(x);
        let (m, n) = (v.rows(), v.cols());
        if let Some(mask) = &mask {
            if mask.rows() != m || mask.cols() != n {
                return Err(Error::config(format!(
                    "softmax mask shape {:?} does not match scores [{m}x{n}]",
                    mask.shape()
                )));
            }
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let xr = &v.values()[i * n..(i + 1) * n];
            let or = &mut out[i * n..(i + 1) * n];
            let masked = |j: usize| -> f64 {
                match &mask {
                    Some(mk) => xr[j] + mk.values()[i * n + j],
                    None => xr[j],
                }
            };
            let mut zmax = f64::NEG_INFINITY;
            for j in 0..n {
                zmax = zmax.max(masked(j));
            }
            if zmax == f64::NEG_INFINITY {
                continue; // fully masked row -> all zeros
            }
            let mut sum = 0.0;
            for j in 0..n {
                let e = (masked(j) - zmax).exp();
                or[j] = e;
                sum += e;
            }
            for o in or.iter_mut() {
                *o /= sum;
            }
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![m, n], out)?,
            needs,
            Op::MaskedSoftmaxRows(x, mask),
        )
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        let (m, n) = (v.rows(), v.cols());
        if start + len > n || len == 0 {
            return Err(Error::config(format!(
                "slice_cols [{start}, {start}+{len}) out of {n} columns"
            )));
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&v.values()[i * n + start..i * n + start + len]);
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![m, len], out)?,
            needs,
            Op::SliceCols(x, start, len),
        )
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        let (m, n) = (v.rows(), v.cols());
        if start + len > m || len == 0 {
            return Err(Error::config(format!(
                "slice_rows [{start}, {start}+{len}) out of {m} rows"
            )));
        }
        let out = v.values()[start * n..(start + len) * n].to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![len, n], out)?,
            needs,
            Op::SliceRows(x, start, len),
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::config("concat_cols: no parts"));
        }
        let m = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != m {
                return Err(Error::config("concat_cols: row count mismatch"));
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            Tensor::new(vec![m, total], out)?,
            needs,
            Op::ConcatCols(parts.to_vec()),
        )
    }

    /// Stack row vectors (each [1,n]) into an [m,n] matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::config("stack_rows: no rows"));
        }
        let n = self.value(rows[0]).numel();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let v = self.value(r);
            if v.rows() != 1 || v.numel() != n {
                return Err(Error::config("stack_rows: each part must be a [1,n] row"));
            }
            out.extend_from_slice(v.values());
        }
        let needs = rows.iter().any(|&r| self.needs(r));
        self.push(
            Tensor::new(vec![rows.len(), n], out)?,
            needs,
            Op::StackRows(rows.to_vec()),
        )
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let mean = v.values().iter().sum::<f64>() / v.numel() as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(mean), needs, Op::MeanAll(x))
    }

    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let (m, n) = (v.rows(), v.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += v.values()[i * n + j];
            }
        }
        for o in out.iter_mut() {
            *o /= m as f64;
        }
        let needs = self.needs(x);
        self.push(Tensor::new(vec![1, n], out)?, needs, Op::MeanRows(x))
    }

    pub fn gather_rows(&mut self, w: NodeId, ids: &[usize]) -> Result<NodeId> {
        let v = self.value(w);
        let (rows, n) = (v.rows(), v.cols());
        if ids.is_empty() {
            return Err(Error::input("gather_rows: empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::input(format!(
                "gather_rows: id {bad} out of range (table has {rows} rows)"
            )));
        }
        let mut out = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            out.extend_from_slice(v.row(i));
        }
        let needs = self.needs(w);
        self.push(
            Tensor::new(vec![ids.len(), n], out)?,
            needs,
            Op::GatherRows(w, ids.to_vec()),
        )
    }

    /// mean((a - b)^2) over all entries, as a scalar node.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    /// Reverse pass from a scalar loss node. Returns per-node gradients;
    /// gradients are only materialized along paths that reach a `Param` leaf
    /// or another node marked as needing gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::config(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::filled(loss_node.value.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Value | Op::Param(_)) {
                continue; // leaves keep their accumulated gradient
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(t) => {
                let tv = t.values_mut();
                for (o, c) in tv.iter_mut().zip(contrib.values()) {
                    *o += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Value | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.rows(), va.cols());
                let n = vb.cols();
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt(g.values(), vb.values(), m, n, k, &mut da);
                    self.acc(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn(va.values(), g.values(), m, k, n, &mut db);
                    self.acc(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Transpose(x) => {
                self.acc(grads, *x, g.transposed());
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                let neg =
                    Tensor::new(g.shape().to_vec(), g.values().iter().map(|v| -v).collect())?;
                self.acc(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let vb = self.value(*b);
                    let da = Tensor::new(
                        g.shape().to_vec(),
                        g.values().iter().zip(vb.values()).map(|(x, y)| x * y).collect(),
                    )?;
                    self.acc(grads, *a, da);
                }
                if self.needs(*b) {
                    let va = self.value(*a);
                    let db = Tensor::new(
                        g.shape().to_vec(),
                        g.values().iter().zip(va.values()).map(|(x, y)| x * y).collect(),
                    )?;
                    self.acc(grads, *b, db);
                }
            }
            Op::AddRow(x, row) => {
                if self.needs(*x) {
                    self.acc(grads, *x, g.clone());
                }
                if self.needs(*row) {
                    let (m, n) = (g.rows(), g.cols());
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += g.values()[i * n + j];
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    self.acc(grads, *row, Tensor::new(shape, dr)?);
                }
            }
            Op::ScaleConst(x, c) => {
                let dx =
                    Tensor::new(g.shape().to_vec(), g.values().iter().map(|v| c * v).collect())?;
                self.acc(grads, *x, dx);
            }
            Op::MulScalar(x, s) => {
                let c = self.value(*s).item();
                if self.needs(*x) {
                    let dx = Tensor::new(
                        g.shape().to_vec(),
                        g.values().iter().map(|v| c * v).collect(),
                    )?;
                    self.acc(grads, *x, dx);
                }
                if self.needs(*s) {
                    let vx = self.value(*x);
                    let ds: f64 = g.values().iter().zip(vx.values()).map(|(a, b)| a * b).sum();
                    let shape = self.value(*s).shape().to_vec();
                    self.acc(grads, *s, Tensor::new(shape, vec![ds])?);
                }
            }
            Op::Recip(x) => {
                let y = &node.value;
                let dx = Tensor::new(
                    g.shape().to_vec(),
                    g.values()
                        .iter()
                        .zip(y.values())
                        .map(|(gv, yv)| -gv * yv * yv)
                        .collect(),
                )?;
                self.acc(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let dx = Tensor::new(
                    g.shape().to_vec(),
                    g.values()
                        .iter()
                        .zip(y.values())
                        .map(|(gv, yv)| gv * (1.0 - yv * yv))
                        .collect(),
                )?;
                self.acc(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let dx = Tensor::new(
                    g.shape().to_vec(),
                    g.values()
                        .iter()
                        .zip(y.values())
                        .map(|(gv, yv)| gv * yv * (1.0 - yv))
                        .collect(),
                )?;
                self.acc(grads, *x, dx);
            }
            Op::LeakyRelu(x, slope) => {
                let vx = self.value(*x);
                let dx = Tensor::new(
                    g.shape().to_vec(),
                    g.values()
                        .iter()
                        .zip(vx.values())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { gv * slope })
                        .collect(),
                )?;
                self.acc(grads, *x, dx);
            }
            Op::MaskedSoftmaxRows(x, _mask) => {
                let y = &node.value;
                let (m, n) = (y.rows(), y.cols());
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = y.row(i);
                    let gr = &g.values()[i * n..(i + 1) * n];
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - s);
                    }
                }
                self.acc(grads, *x, Tensor::new(vec![m, n], dx)?);
            }
            Op::SliceCols(x, start, len) => {
                let vx = self.value(*x);
                let (m, n) = (vx.rows(), vx.cols());
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..*len {
                        dx[i * n + start + j] = g.values()[i * len + j];
                    }
                }
                self.acc(grads, *x, Tensor::new(vx.shape().to_vec(), dx)?);
            }
            Op::SliceRows(x, start, len) => {
                let vx = self.value(*x);
                let (m, n) = (vx.rows(), vx.cols());
                let mut dx = vec![0.0; m * n];
                dx[start * n..(start + len) * n].copy_from_slice(g.values());
                self.acc(grads, *x, Tensor::new(vx.shape().to_vec(), dx)?);
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let n_total = g.cols();
                        let mut dp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            dp.extend_from_slice(
                                &g.values()[i * n_total + offset..i * n_total + offset + w],
                            );
                        }
                        let shape = self.value(p).shape().to_vec();
                        self.acc(grads, p, Tensor::new(shape, dp)?);
                    }
                    offset += w;
                }
            }
            Op::StackRows(rows) => {
                let n = g.cols();
                for (i, &r) in rows.iter().enumerate() {
                    if self.needs(r) {
                        let shape = self.value(r).shape().to_vec();
                        let dr = g.values()[i * n..(i + 1) * n].to_vec();
                        self.acc(grads, r, Tensor::new(shape, dr)?);
                    }
                }
            }
            Op::MeanAll(x) => {
                let vx = self.value(*x);
                let c = g.item() / vx.numel() as f64;
                self.acc(grads, *x, Tensor::filled(vx.shape().to_vec(), c));
            }
            Op::MeanRows(x) => {
                let vx = self.value(*x);
                let (m, n) = (vx.rows(), vx.cols());
                let mut dx = Vec::with_capacity(m * n);
                for _ in 0..m {
                    dx.extend(g.values().iter().map(|v| v / m as f64));
                }
                self.acc(grads, *x, Tensor::new(vx.shape().to_vec(), dx)?);
            }
            Op::GatherRows(w, ids) => {
                let vw = self.value(*w);
                let (rows, n) = (vw.rows(), vw.cols());
                let mut dw = vec![0.0; rows * n];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..n {
                        dw[id * n + j] += g.values()[r * n + j];
                    }
                }
                self.acc(grads, *w, Tensor::new(vec![rows, n], dw)?);
            }
        }
        Ok(())
    }
}

/// Build a graph over `params`, run the reverse pass, and accumulate the
/// parameter gradients into `params.grad`. Returns the scalar loss value.
pub fn forward_backward<F>(params: &mut Params, build: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let leaves = tape.bind_params(params)?;
    let loss = build(&mut tape, &leaves)?;
    let loss_value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    for (i, leaf) in leaves.iter().enumerate() {
        if let Some(g) = grads.get(*leaf) {
            if !g.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient for parameter `{}`",
                    params.get(i).name
                )));
            }
            let p = params.get_mut(i);
            let pv = p.grad.values_mut();
            for (o, c) in pv.iter_mut().zip(g.values()) {
                *o += c;
            }
        }
    }
    Ok(loss_value)
}
