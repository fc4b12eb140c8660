//! Define-by-run computation graph. Forward ops evaluate eagerly into a node
//! arena; `backward` walks the arena in reverse topological order (which is
//! simply creation order) and accumulates gradients onto parameter leaves.
//!
//! Reductions (matmul, row statistics, mse) accumulate in f64.

use crate::error::{Error, Result};

use super::{ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Leaf(usize),
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Broadcast-add a 1 x n row onto every row of an m x n matrix.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f32),
    Transpose(NodeId),
    Reshape(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Vec<usize>),
    RepeatRow(NodeId, usize),
    /// Start from `base`, overwrite rows at `indices` with the rows of `rows`.
    RowScatter {
        base: NodeId,
        rows: NodeId,
        indices: Vec<usize>,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        /// Per-row (mean, 1/std) saved from the forward pass.
        stats: Vec<(f32, f32)>,
    },
    Softmax(NodeId),
    Gelu(NodeId),
    MseLoss(NodeId, NodeId),
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const LN_EPS: f32 = 1e-5;

fn dims2(shape: &[usize]) -> (usize, usize) {
    debug_assert_eq!(shape.len(), 2);
    (shape[0], shape[1])
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: NodeId) -> &[f32] {
        &self.nodes[id.0].data
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor {
            shape: self.nodes[id.0].shape.clone(),
            data: self.nodes[id.0].data.clone(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, op: Op, requires_grad: bool) -> Result<NodeId> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {:?}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant input, no gradient tracked.
    pub fn input(&mut self, t: &Tensor) -> Result<NodeId> {
        self.push(t.shape.clone(), t.data.clone(), Op::Input, false)
    }

    /// Parameter leaf; backward accumulates into the store's grad slot.
    pub fn leaf(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        let t = store.value(id);
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf(id.0), true)
    }

    fn require2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.require2(a, "matmul")?;
        let (k2, n) = self.require2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = matmul_f64(self.data(a), self.data(b), m, k, n);
        let rg = self.any_grad(&[a, b]);
        self.push(vec![m, n], data, Op::Matmul(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.any_grad(&[a, b]);
        self.push(self.shape(a).to_vec(), data, Op::Add(a, b), rg)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.require2(a, "add_row")?;
        let rshape = self.shape(row);
        if rshape != [1, n] && rshape != [n] {
            return Err(Error::Shape {
                op: "add_row",
                lhs: vec![m, n],
                rhs: rshape.to_vec(),
            });
        }
        let mut data = self.data(a).to_vec();
        let r = self.data(row);
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += r[j];
            }
        }
        let rg = self.any_grad(&[a, row]);
        self.push(vec![m, n], data, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: NodeId, c: f32) -> Result<NodeId> {
        let data = self.data(a).iter().map(|v| v * c).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.shape(a).to_vec(), data, Op::Scale(a, c), rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.require2(a, "transpose")?;
        let src = self.data(a);
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![n, m], data, Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.data(a).len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let data = self.data(a).to_vec();
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, data, Op::Reshape(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero parts".into()));
        }
        let (_, n) = self.require2(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, n2) = self.require2(p, "concat_rows")?;
            if n2 != n {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: vec![rows, n],
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += m;
            data.extend_from_slice(self.data(p));
        }
        let rg = self.any_grad(parts);
        self.push(vec![rows, n], data, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero parts".into()));
        }
        let (m, _) = self.require2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let (m2, w) = self.require2(p, "concat_cols")?;
            if m2 != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: vec![m],
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(w);
            total += w;
        }
        let mut data = vec![0.0f32; m * total];
        let mut off = 0;
        for (pi, &p) in parts.iter().enumerate() {
            let w = widths[pi];
            let src = self.data(p);
            for i in 0..m {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = self.any_grad(parts);
        self.push(vec![m, total], data, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.require2(a, "slice_cols")?;
        if start + len > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let src = self.data(a);
        let mut data = vec![0.0f32; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![m, len], data, Op::SliceCols(a, start, len), rg)
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (m, n) = self.require2(a, "gather_rows")?;
        if indices.iter().any(|&i| i >= m) {
            return Err(Error::Contract(format!(
                "gather_rows index out of range (rows = {m})"
            )));
        }
        let src = self.data(a);
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(
            vec![indices.len(), n],
            data,
            Op::GatherRows(a, indices.to_vec()),
            rg,
        )
    }

    pub fn repeat_row(&mut self, row: NodeId, times: usize) -> Result<NodeId> {
        let s = self.shape(row);
        let n = if s.len() == 1 {
            s[0]
        } else if s.len() == 2 && s[0] == 1 {
            s[1]
        } else {
            return Err(Error::Shape {
                op: "repeat_row",
                lhs: s.to_vec(),
                rhs: vec![1],
            });
        };
        let src = self.data(row).to_vec();
        let mut data = Vec::with_capacity(times * n);
        for _ in 0..times {
            data.extend_from_slice(&src);
        }
        let rg = self.nodes[row.0].requires_grad;
        self.push(vec![times, n], data, Op::RepeatRow(row, times), rg)
    }

    pub fn row_scatter(&mut self, base: NodeId, rows: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (m, n) = self.require2(base, "row_scatter")?;
        let (r, n2) = self.require2(rows, "row_scatter")?;
        if n2 != n || r != indices.len() {
            return Err(Error::Shape {
                op: "row_scatter",
                lhs: vec![m, n],
                rhs: vec![r, n2],
            });
        }
        if indices.iter().any(|&i| i >= m) {
            return Err(Error::Contract(format!(
                "row_scatter index out of range (rows = {m})"
            )));
        }
        let mut data = self.data(base).to_vec();
        let src = self.data(rows);
        for (k, &i) in indices.iter().enumerate() {
            data[i * n..(i + 1) * n].copy_from_slice(&src[k * n..(k + 1) * n]);
        }
        let rg = self.any_grad(&[base, rows]);
        self.push(
            vec![m, n],
            data,
            Op::RowScatter {
                base,
                rows,
                indices: indices.to_vec(),
            },
            rg,
        )
    }

    /// Layer normalization over the last dimension with learnable gain/bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.require2(x, "layer_norm")?;
        for &p in &[gain, bias] {
            let s = self.shape(p);
            if s != [n] && s != [1, n] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: vec![m, n],
                    rhs: s.to_vec(),
                });
            }
        }
        let src = self.data(x);
        let g = self.data(gain).to_vec();
        let b = self.data(bias).to_vec();
        let mut data = vec![0.0f32; m * n];
        let mut stats = Vec::with_capacity(m);
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = (row.iter().map(|&v| v as f64).sum::<f64>() / n as f64) as f32;
            let var = (row
                .iter()
                .map(|&v| ((v - mean) as f64).powi(2))
                .sum::<f64>()
                / n as f64) as f32;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            stats.push((mean, rstd));
            for j in 0..n {
                data[i * n + j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
        }
        let rg = self.any_grad(&[x, gain, bias]);
        self.push(
            vec![m, n],
            data,
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
            rg,
        )
    }

    /// Row-wise softmax, stabilized by max subtraction.
    pub fn softmax_lastdim(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.require2(a, "softmax_lastdim")?;
        let src = self.data(a);
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0f64;
            for j in 0..n {
                let e = (row[j] - max).exp();
                data[i * n + j] = e;
                sum += e as f64;
            }
            let inv = (1.0 / sum) as f32;
            for j in 0..n {
                data[i * n + j] *= inv;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![m, n], data, Op::Softmax(a), rg)
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.data(a).iter().map(|&v| gelu_f(v)).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(self.shape(a).to_vec(), data, Op::Gelu(a), rg)
    }

    /// x @ w + b with a broadcast bias row.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Mean squared error over all elements; scalar output.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::Shape {
                op: "mse_loss",
                lhs: self.shape(pred).to_vec(),
                rhs: self.shape(target).to_vec(),
            });
        }
        let n = self.data(pred).len();
        let sum: f64 = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum();
        let rg = self.any_grad(&[pred, target]);
        self.push(
            vec![1],
            vec![(sum / n as f64) as f32],
            Op::MseLoss(pred, target),
            rg,
        )
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Reverse pass from a scalar loss; gradients land in the store.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.data(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.accumulate(idx, &gout, &mut grads, store)?;
        }
        Ok(())
    }

    fn add_grad(&self, grads: &mut [Option<Vec<f32>>], id: NodeId, contrib: &[f32]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contrib) {
                    *a += b;
                }
            }
            slot => *slot = Some(contrib.to_vec()),
        }
    }

    fn accumulate(
        &self,
        idx: usize,
        gout: &[f32],
        grads: &mut [Option<Vec<f32>>],
        store: &mut ParamStore,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input => {}
            Op::Leaf(pid) => {
                for (a, b) in store.grad_mut(*pid).iter_mut().zip(gout) {
                    *a += b;
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = dims2(&self.nodes[a.0].shape);
                let n = self.nodes[b.0].shape[1];
                if self.nodes[a.0].requires_grad {
                    // dA = dC @ B^T
                    let bt = transpose_f(self.data(*b), k, n);
                    let da = matmul_f64(gout, &bt, m, n, k);
                    self.add_grad(grads, *a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T @ dC
                    let at = transpose_f(self.data(*a), m, k);
                    let db = matmul_f64(&at, gout, k, m, n);
                    self.add_grad(grads, *b, &db);
                }
            }
            Op::Add(a, b) => {
                self.add_grad(grads, *a, gout);
                self.add_grad(grads, *b, gout);
            }
            Op::AddRow(a, row) => {
                self.add_grad(grads, *a, gout);
                if self.nodes[row.0].requires_grad {
                    let (m, n) = dims2(&node.shape);
                    let mut dr = vec![0.0f32; n];
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += gout[i * n + j];
                        }
                    }
                    self.add_grad(grads, *row, &dr);
                }
            }
            Op::Scale(a, c) => {
                let da: Vec<f32> = gout.iter().map(|g| g * c).collect();
                self.add_grad(grads, *a, &da);
            }
            Op::Transpose(a) => {
                let (n, m) = dims2(&node.shape);
                // gout is n x m; parent is m x n.
                let da = transpose_f(gout, n, m);
                self.add_grad(grads, *a, &da);
            }
            Op::Reshape(a) => {
                self.add_grad(grads, *a, gout);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].data.len();
                    self.add_grad(grads, p, &gout[off..off + len]);
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = dims2(&node.shape);
                let mut off = 0;
                for &p in parts {
                    let w = self.nodes[p.0].shape[1];
                    if self.nodes[p.0].requires_grad {
                        let mut dp = vec![0.0f32; m * w];
                        for i in 0..m {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&gout[i * total + off..i * total + off + w]);
                        }
                        self.add_grad(grads, p, &dp);
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start, len) => {
                if self.nodes[a.0].requires_grad {
                    let (m, n) = dims2(&self.nodes[a.0].shape);
                    let mut da = vec![0.0f32; m * n];
                    for i in 0..m {
                        da[i * n + start..i * n + start + len]
                            .copy_from_slice(&gout[i * len..(i + 1) * len]);
                    }
                    self.add_grad(grads, *a, &da);
                }
            }
            Op::GatherRows(a, indices) => {
                if self.nodes[a.0].requires_grad {
                    let (m, n) = dims2(&self.nodes[a.0].shape);
                    let mut da = vec![0.0f32; m * n];
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..n {
                            da[i * n + j] += gout[k * n + j];
                        }
                    }
                    self.add_grad(grads, *a, &da);
                }
            }
            Op::RepeatRow(row, times) => {
                if self.nodes[row.0].requires_grad {
                    let n = self.nodes[row.0].data.len();
                    let mut dr = vec![0.0f32; n];
                    for t in 0..*times {
                        for j in 0..n {
                            dr[j] += gout[t * n + j];
                        }
                    }
                    self.add_grad(grads, *row, &dr);
                }
            }
            Op::RowScatter {
                base,
                rows,
                indices,
            } => {
                let (m, n) = dims2(&node.shape);
                if self.nodes[rows.0].requires_grad {
                    let mut dr = vec![0.0f32; indices.len() * n];
                    for (k, &i) in indices.iter().enumerate() {
                        dr[k * n..(k + 1) * n].copy_from_slice(&gout[i * n..(i + 1) * n]);
                    }
                    self.add_grad(grads, *rows, &dr);
                }
                if self.nodes[base.0].requires_grad {
                    let mut db = gout.to_vec();
                    let mut overwritten = vec![false; m];
                    for &i in indices {
                        overwritten[i] = true;
                    }
                    for i in 0..m {
                        if overwritten[i] {
                            db[i * n..(i + 1) * n].iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                    self.add_grad(grads, *base, &db);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            } => {
                let (m, n) = dims2(&node.shape);
                let xs = self.data(*x);
                let g = self.data(*gain);
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0f32; m * n];
                    for i in 0..m {
                        let (mean, rstd) = stats[i];
                        let row = &xs[i * n..(i + 1) * n];
                        let go = &gout[i * n..(i + 1) * n];
                        let mut sum_dg = 0.0f64;
                        let mut sum_dg_xhat = 0.0f64;
                        for j in 0..n {
                            let xhat = (row[j] - mean) * rstd;
                            let dg = go[j] * g[j];
                            sum_dg += dg as f64;
                            sum_dg_xhat += (dg * xhat) as f64;
                        }
                        let mean_dg = (sum_dg / n as f64) as f32;
                        let mean_dg_xhat = (sum_dg_xhat / n as f64) as f32;
                        for j in 0..n {
                            let xhat = (row[j] - mean) * rstd;
                            let dg = go[j] * g[j];
                            dx[i * n + j] = rstd * (dg - mean_dg - xhat * mean_dg_xhat);
                        }
                    }
                    self.add_grad(grads, *x, &dx);
                }
                if self.nodes[gain.0].requires_grad {
                    let mut dgain = vec![0.0f32; n];
                    for i in 0..m {
                        let (mean, rstd) = stats[i];
                        for j in 0..n {
                            let xhat = (xs[i * n + j] - mean) * rstd;
                            dgain[j] += gout[i * n + j] * xhat;
                        }
                    }
                    self.add_grad(grads, *gain, &dgain);
                }
                if self.nodes[bias.0].requires_grad {
                    let mut dbias = vec![0.0f32; n];
                    for i in 0..m {
                        for j in 0..n {
                            dbias[j] += gout[i * n + j];
                        }
                    }
                    self.add_grad(grads, *bias, &dbias);
                }
            }
            Op::Softmax(a) => {
                if self.nodes[a.0].requires_grad {
                    let (m, n) = dims2(&node.shape);
                    let y = &node.data;
                    let mut da = vec![0.0f32; m * n];
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let go = &gout[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(go).map(|(&a, &b)| (a * b) as f64).sum();
                        for j in 0..n {
                            da[i * n + j] = yr[j] * (go[j] - dot as f32);
                        }
                    }
                    self.add_grad(grads, *a, &da);
                }
            }
            Op::Gelu(a) => {
                if self.nodes[a.0].requires_grad {
                    let xs = self.data(*a);
                    let da: Vec<f32> = xs
                        .iter()
                        .zip(gout)
                        .map(|(&x, &g)| gelu_grad(x) * g)
                        .collect();
                    self.add_grad(grads, *a, &da);
                }
            }
            Op::MseLoss(pred, target) => {
                let n = self.nodes[pred.0].data.len();
                let scale = gout[0] * 2.0 / n as f32;
                if self.nodes[pred.0].requires_grad {
                    let dp: Vec<f32> = self
                        .data(*pred)
                        .iter()
                        .zip(self.data(*target))
                        .map(|(&a, &b)| scale * (a - b))
                        .collect();
                    self.add_grad(grads, *pred, &dp);
                }
                if self.nodes[target.0].requires_grad {
                    let dt: Vec<f32> = self
                        .data(*pred)
                        .iter()
                        .zip(self.data(*target))
                        .map(|(&a, &b)| -scale * (a - b))
                        .collect();
                    self.add_grad(grads, *target, &dt);
                }
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Leaf(_) => "leaf",
        Op::Matmul(..) => "matmul",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::Transpose(_) => "transpose",
        Op::Reshape(_) => "reshape",
        Op::ConcatRows(_) => "concat_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::SliceCols(..) => "slice_cols",
        Op::GatherRows(..) => "gather_rows",
        Op::RepeatRow(..) => "repeat_row",
        Op::RowScatter { .. } => "row_scatter",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Softmax(_) => "softmax_lastdim",
        Op::Gelu(_) => "gelu",
        Op::MseLoss(..) => "mse_loss",
    }
}

fn matmul_f64(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for kk in 0..k {
            let av = a[i * k + kk] as f64;
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (j, &bv) in brow.iter().enumerate() {
                acc[j] += av * bv as f64;
            }
        }
        for j in 0..n {
            out[i * n + j] = acc[j] as f32;
        }
    }
    out
}

fn transpose_f(a: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

fn gelu_f(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
