//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! tape visits every node after all of its consumers. Shape mismatches inside
//! an op are programming errors and panic; `backward` reports contract
//! violations on its input as errors.
//!
//! Stop-gradient values ([`Graph::detach`]) and discrete choices
//! ([`Graph::freeze_indices`]) are recorded on first evaluation. Replaying a
//! graph from a recorded [`Frozen`] state reuses them verbatim, which is the
//! differentiation contract the gradient checker relies on: every detached
//! quantity and every argmin index is held fixed at the unperturbed point.

use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, log_softmax_in_place, sigmoid, softmax_in_place, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Detached tensors and frozen index choices captured while recording.
#[derive(Clone, Debug, Default)]
pub struct Frozen {
    tensors: Vec<Arc<Tensor>>,
    indices: Vec<Arc<Vec<usize>>>,
}

enum Mode {
    Record,
    Replay {
        frozen: Arc<Frozen>,
        tensor_cursor: usize,
        index_cursor: usize,
    },
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Affine(usize, f64),
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: usize,
        idx: Vec<usize>,
    },
    L2Normalize {
        x: usize,
        norms: Vec<f64>,
    },
    SumAll(usize),
    MeanAll(usize),
    RowSum(usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    PickPerRow {
        x: usize,
        idx: Vec<usize>,
    },
    CausalAttention {
        q: usize,
        k: usize,
        v: usize,
        segments: Vec<(usize, usize)>,
        heads: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    recorded: Frozen,
    mode: Mode,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            recorded: Frozen::default(),
            mode: Mode::Record,
        }
    }

    /// A graph that reuses the detached values and frozen indices of an
    /// earlier recording, in the same order.
    pub fn replay(frozen: Arc<Frozen>) -> Self {
        Graph {
            nodes: Vec::new(),
            recorded: Frozen::default(),
            mode: Mode::Replay {
                frozen,
                tensor_cursor: 0,
                index_cursor: 0,
            },
        }
    }

    pub fn into_frozen(self) -> Frozen {
        self.recorded
    }

    pub fn frozen(&self) -> &Frozen {
        &self.recorded
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[usize]) -> NodeId {
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.push_arc(Arc::new(value), op, needs_grad)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn v(&self, id: usize) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_arc(Arc::new(value), Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push_arc(store.shared(id), Op::Param(id), true)
    }

    /// Stop-gradient copy of `x`. In replay mode the recorded value is used.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let value = match &mut self.mode {
            Mode::Record => {
                let v = Arc::clone(&self.nodes[x.0].value);
                self.recorded.tensors.push(Arc::clone(&v));
                v
            }
            Mode::Replay {
                frozen,
                tensor_cursor,
                ..
            } => {
                let v = Arc::clone(
                    frozen
                        .tensors
                        .get(*tensor_cursor)
                        .expect("replay requested more detached values than were recorded"),
                );
                *tensor_cursor += 1;
                assert_eq!(
                    v.shape(),
                    self.nodes[x.0].value.shape(),
                    "replayed detached value has a different shape"
                );
                v
            }
        };
        self.push_arc(value, Op::Input, false)
    }

    /// Discrete choice computed once while recording and reused on replay.
    pub fn freeze_indices(&mut self, compute: impl FnOnce(&Graph) -> Vec<usize>) -> Vec<usize> {
        match &mut self.mode {
            Mode::Record => {
                let idx = compute(self);
                self.recorded.indices.push(Arc::new(idx.clone()));
                idx
            }
            Mode::Replay {
                frozen,
                index_cursor,
                ..
            } => {
                let idx = frozen
                    .indices
                    .get(*index_cursor)
                    .expect("replay requested more index sets than were recorded")
                    .as_ref()
                    .clone();
                *index_cursor += 1;
                idx
            }
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.v(a.0), self.v(b.0));
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        assert_eq!(k, vb.rows(), "matmul inner dimensions differ");
        let mut out = vec![0.0; m * n];
        gemm(va.data(), false, vb.data(), false, &mut out, m, k, n, 0.0);
        let t = Tensor::matrix(m, n, out).unwrap();
        self.push(t, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.v(a.0), self.v(b.0));
        let (m, k, n) = (va.rows(), va.cols(), vb.rows());
        assert_eq!(k, vb.cols(), "matmul_t inner dimensions differ");
        let mut out = vec![0.0; m * n];
        gemm(va.data(), false, vb.data(), true, &mut out, m, k, n, 0.0);
        let t = Tensor::matrix(m, n, out).unwrap();
        self.push(t, Op::MatMulT(a.0, b.0), &[a.0, b.0])
    }

    fn zip(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (va, vb) = (self.v(a.0), self.v(b.0));
        assert!(va.same_shape(vb), "elementwise op on different shapes");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::matrix(va.rows(), va.cols(), data).unwrap();
        self.push(t, op, &[a.0, b.0])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// `a [m,n] + bias [1,n]` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (self.v(a.0), self.v(bias.0));
        let n = va.cols();
        assert_eq!(vb.len(), n, "bias length must equal column count");
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let t = Tensor::matrix(va.rows(), n, data).unwrap();
        self.push(t, Op::AddRow(a.0, bias.0), &[a.0, bias.0])
    }

    /// `a [m,n] * c [m,1]` broadcast over columns.
    pub fn mul_col(&mut self, a: NodeId, c: NodeId) -> NodeId {
        let (va, vc) = (self.v(a.0), self.v(c.0));
        let n = va.cols();
        assert_eq!(vc.len(), va.rows(), "column scale length must equal row count");
        let mut data = va.data().to_vec();
        for (row, s) in data.chunks_mut(n).zip(vc.data()) {
            for x in row.iter_mut() {
                *x *= s;
            }
        }
        let t = Tensor::matrix(va.rows(), n, data).unwrap();
        self.push(t, Op::MulCol(a.0, c.0), &[a.0, c.0])
    }

    /// `a * scale + shift`.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        let va = self.v(a.0);
        let data = va.data().iter().map(|x| x * scale + shift).collect();
        let t = Tensor::matrix(va.rows(), va.cols(), data).unwrap();
        self.push(t, Op::Affine(a.0, scale), &[a.0])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.affine(a, s, 0.0)
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let va = self.v(a.0);
        let data = va.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::matrix(va.rows(), va.cols(), data).unwrap();
        self.push(t, op, &[a.0])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.map(a, gelu, Op::Gelu(a.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.map(a, f64::ln, Op::Log(a.0))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x * x, Op::Square(a.0))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.v(a.0);
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(va.cols()) {
            softmax_in_place(row);
        }
        let t = Tensor::matrix(va.rows(), va.cols(), data).unwrap();
        self.push(t, Op::SoftmaxRows(a.0), &[a.0])
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.v(a.0);
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(va.cols()) {
            log_softmax_in_place(row);
        }
        let t = Tensor::matrix(va.rows(), va.cols(), data).unwrap();
        self.push(t, Op::LogSoftmaxRows(a.0), &[a.0])
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let (vx, vg, vb) = (self.v(x.0), self.v(gamma.0), self.v(beta.0));
        let n = vx.cols();
        assert!(vg.len() == n && vb.len() == n, "layer norm affine size");
        let rows = vx.rows();
        let mut xhat = vec![0.0; rows * n];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..n {
                let h = (row[c] - mean) * inv;
                xhat[r * n + c] = h;
                out[r * n + c] = h * vg.data()[c] + vb.data()[c];
            }
        }
        let t = Tensor::matrix(rows, n, out).unwrap();
        self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            &[x.0, gamma.0, beta.0],
        )
    }

    /// Rows of `table` selected by `idx`.
    pub fn gather(&mut self, table: NodeId, idx: &[usize]) -> NodeId {
        let vt = self.v(table.0);
        let n = vt.cols();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            assert!(i < vt.rows(), "gather index {i} out of range {}", vt.rows());
            data.extend_from_slice(vt.row(i));
        }
        assert!(!idx.is_empty(), "gather needs at least one index");
        let t = Tensor::matrix(idx.len(), n, data).unwrap();
        self.push(
            t,
            Op::Gather {
                table: table.0,
                idx: idx.to_vec(),
            },
            &[table.0],
        )
    }

    /// Each row divided by its Euclidean norm (floored at 1e-12).
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> NodeId {
        let vx = self.v(x.0);
        let n = vx.cols();
        let mut norms = Vec::with_capacity(vx.rows());
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms.push(norm);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let t = Tensor::matrix(vx.rows(), n, data).unwrap();
        self.push(t, Op::L2Normalize { x: x.0, norms }, &[x.0])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.v(a.0).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = self.v(a.0);
        let s = va.data().iter().sum::<f64>() / va.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a.0), &[a.0])
    }

    /// Per-row sums as an `[m,1]` column.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let va = self.v(a.0);
        let data = va.data().chunks(va.cols()).map(|r| r.iter().sum()).collect();
        self.push(Tensor::column(data), Op::RowSum(a.0), &[a.0])
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let vx = self.v(x.0);
        let n = vx.cols();
        assert!(start + len <= n && len > 0, "column slice out of range");
        let mut data = Vec::with_capacity(vx.rows() * len);
        for r in 0..vx.rows() {
            data.extend_from_slice(&vx.row(r)[start..start + len]);
        }
        let t = Tensor::matrix(vx.rows(), len, data).unwrap();
        self.push(t, Op::SliceCols { x: x.0, start }, &[x.0])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.v(parts[0].0).rows();
        let total: usize = parts.iter().map(|p| self.v(p.0).cols()).sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for p in parts {
            let vp = self.v(p.0);
            assert_eq!(vp.rows(), rows, "concat_cols row mismatch");
            let c = vp.cols();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + c].copy_from_slice(vp.row(r));
            }
            offset += c;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let t = Tensor::matrix(rows, total, data).unwrap();
        self.push(t, Op::ConcatCols(ids.clone()), &ids)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.v(parts[0].0).cols();
        let mut data = Vec::new();
        for p in parts {
            let vp = self.v(p.0);
            assert_eq!(vp.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(vp.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let t = Tensor::matrix(data.len() / cols, cols, data).unwrap();
        self.push(t, Op::ConcatRows(ids.clone()), &ids)
    }

    /// `out[i] = x[i, idx[i]]` as an `[m,1]` column.
    pub fn pick_per_row(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let vx = self.v(x.0);
        assert_eq!(idx.len(), vx.rows(), "one index per row");
        let data = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < vx.cols(), "pick index out of range");
                vx.row(r)[c]
            })
            .collect();
        self.push(
            Tensor::column(data),
            Op::PickPerRow {
                x: x.0,
                idx: idx.to_vec(),
            },
            &[x.0],
        )
    }

    /// Multi-head causal self-attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `[N, d]`; each `(start, len)` segment is one sequence
    /// whose rows attend to themselves and earlier rows of the same segment.
    /// Head `h` uses columns `h·d/heads .. (h+1)·d/heads`.
    pub fn causal_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        segments: &[(usize, usize)],
        heads: usize,
    ) -> NodeId {
        let (vq, vk, vv) = (self.v(q.0), self.v(k.0), self.v(v.0));
        let d = vq.cols();
        assert!(vq.same_shape(vk) && vq.same_shape(vv), "attention q/k/v shapes differ");
        assert!(heads > 0 && d % heads == 0, "model width must divide into heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; vq.len()];
        let mut probs = Vec::new();
        for &(start, len) in segments {
            assert!(start + len <= vq.rows(), "attention segment out of range");
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let base = probs.len();
                probs.resize(base + len * len, 0.0);
                for i in 0..len {
                    let qi = &vq.row(start + i)[cols.clone()];
                    let p = &mut probs[base + i * len..base + i * len + i + 1];
                    for (j, pj) in p.iter_mut().enumerate() {
                        *pj = super::tensor::dot(qi, &vk.row(start + j)[cols.clone()]) * scale;
                    }
                    softmax_in_place(p);
                    let o = &mut out[(start + i) * d + h * dh..(start + i) * d + (h + 1) * dh];
                    for (j, &pj) in p.iter().enumerate() {
                        axpy(o, &vv.row(start + j)[cols.clone()], pj);
                    }
                }
            }
        }
        let t = Tensor::matrix(vq.rows(), d, out).unwrap();
        self.push(
            t,
            Op::CausalAttention {
                q: q.0,
                k: k.0,
                v: v.0,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            &[q.0, k.0, v.0],
        )
    }

    /// Accumulates d`loss`/d`param` into the store's gradient buffers.
    ///
    /// Parameters not reachable from `loss` receive nothing, so after
    /// [`ParamStore::zero_grad`] they read zero.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    let g = store.grad_mut(*pid);
                    for (a, b) in g.data_mut().iter_mut().zip(&dy) {
                        *a += b;
                    }
                }
                _ => self.propagate(id, &dy, &mut grads),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.v(*a), self.v(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.nodes[*a].needs_grad {
                    let ga = self.slot(grads, *a);
                    gemm(dy, false, vb.data(), true, ga, m, n, k, 1.0);
                }
                if self.nodes[*b].needs_grad {
                    let gb = self.slot(grads, *b);
                    gemm(va.data(), true, dy, false, gb, k, m, n, 1.0);
                }
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.v(*a), self.v(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                if self.nodes[*a].needs_grad {
                    let ga = self.slot(grads, *a);
                    gemm(dy, false, vb.data(), false, ga, m, n, k, 1.0);
                }
                if self.nodes[*b].needs_grad {
                    let gb = self.slot(grads, *b);
                    gemm(dy, true, va.data(), false, gb, n, m, k, 1.0);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| axpy(g, dy, 1.0));
                self.acc(grads, *b, |g| axpy(g, dy, 1.0));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| axpy(g, dy, 1.0));
                self.acc(grads, *b, |g| axpy(g, dy, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.v(*a).data(), self.v(*b).data());
                self.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * vb[i];
                    }
                });
                self.acc(grads, *b, |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * va[i];
                    }
                });
            }
            Op::AddRow(a, bias) => {
                let n = y.cols();
                self.acc(grads, *a, |g| axpy(g, dy, 1.0));
                self.acc(grads, *bias, |g| {
                    for row in dy.chunks(n) {
                        axpy(g, row, 1.0);
                    }
                });
            }
            Op::MulCol(a, c) => {
                let n = y.cols();
                let (va, vc) = (self.v(*a).data(), self.v(*c).data());
                self.acc(grads, *a, |g| {
                    for (r, s) in vc.iter().enumerate() {
                        for j in 0..n {
                            g[r * n + j] += dy[r * n + j] * s;
                        }
                    }
                });
                self.acc(grads, *c, |g| {
                    for (r, gr) in g.iter_mut().enumerate() {
                        let row = r * n..(r + 1) * n;
                        *gr += dy[row.clone()]
                            .iter()
                            .zip(&va[row])
                            .map(|(d, x)| d * x)
                            .sum::<f64>();
                    }
                });
            }
            Op::Affine(a, s) => self.acc(grads, *a, |g| axpy(g, dy, *s)),
            Op::Relu(a) => {
                let x = self.v(*a).data();
                self.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            g[i] += dy[i];
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let x = self.v(*a).data();
                self.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * gelu_grad(x[i]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = y.data();
                self.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * yv[i] * (1.0 - yv[i]);
                    }
                });
            }
            Op::Exp(a) => {
                let yv = y.data();
                self.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * yv[i];
                    }
                });
            }
            Op::Log(a) => {
                let x = self.v(*a).data();
                self.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] / x[i];
                    }
                });
            }
            Op::Square(a) => {
                let x = self.v(*a).data();
                self.acc(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += 2.0 * dy[i] * x[i];
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = y.cols();
                self.acc(grads, *a, |g| {
                    for ((gr, yr), dr) in g.chunks_mut(n).zip(y.data().chunks(n)).zip(dy.chunks(n)) {
                        let inner: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                        for j in 0..n {
                            gr[j] += yr[j] * (dr[j] - inner);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let n = y.cols();
                self.acc(grads, *a, |g| {
                    for ((gr, yr), dr) in g.chunks_mut(n).zip(y.data().chunks(n)).zip(dy.chunks(n)) {
                        let total: f64 = dr.iter().sum();
                        for j in 0..n {
                            gr[j] += dr[j] - yr[j].exp() * total;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = y.cols();
                let gv = self.v(*gamma).data();
                self.acc(grads, *gamma, |g| {
                    for (dr, hr) in dy.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            g[j] += dr[j] * hr[j];
                        }
                    }
                });
                self.acc(grads, *beta, |g| {
                    for dr in dy.chunks(n) {
                        axpy(g, dr, 1.0);
                    }
                });
                self.acc(grads, *x, |g| {
                    let nf = n as f64;
                    for (r, ((gr, dr), hr)) in g
                        .chunks_mut(n)
                        .zip(dy.chunks(n))
                        .zip(xhat.chunks(n))
                        .enumerate()
                    {
                        let dh: Vec<f64> = dr.iter().zip(gv).map(|(d, w)| d * w).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let inv = inv_std[r];
                        for j in 0..n {
                            gr[j] += inv / nf * (nf * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                });
            }
            Op::Gather { table, idx } => {
                let n = y.cols();
                self.acc(grads, *table, |g| {
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(&mut g[i * n..(i + 1) * n], &dy[r * n..(r + 1) * n], 1.0);
                    }
                });
            }
            Op::L2Normalize { x, norms } => {
                let n = y.cols();
                self.acc(grads, *x, |g| {
                    for (r, norm) in norms.iter().enumerate() {
                        let yr = &y.data()[r * n..(r + 1) * n];
                        let dr = &dy[r * n..(r + 1) * n];
                        let inner: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            g[r * n + j] += (dr[j] - yr[j] * inner) / norm;
                        }
                    }
                });
            }
            Op::SumAll(a) => self.acc(grads, *a, |g| g.iter_mut().for_each(|v| *v += dy[0])),
            Op::MeanAll(a) => {
                let s = dy[0] / self.v(*a).len() as f64;
                self.acc(grads, *a, |g| g.iter_mut().for_each(|v| *v += s));
            }
            Op::RowSum(a) => {
                let n = self.v(*a).cols();
                self.acc(grads, *a, |g| {
                    for (gr, d) in g.chunks_mut(n).zip(dy) {
                        gr.iter_mut().for_each(|v| *v += d);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (n, len) = (self.v(*x).cols(), y.cols());
                self.acc(grads, *x, |g| {
                    for (gr, dr) in g.chunks_mut(n).zip(dy.chunks(len)) {
                        axpy(&mut gr[*start..start + len], dr, 1.0);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.v(p).cols();
                    self.acc(grads, p, |g| {
                        for (gr, dr) in g.chunks_mut(c).zip(dy.chunks(total)) {
                            axpy(gr, &dr[offset..offset + c], 1.0);
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.v(p).len();
                    self.acc(grads, p, |g| axpy(g, &dy[offset..offset + len], 1.0));
                    offset += len;
                }
            }
            Op::PickPerRow { x, idx } => {
                let n = self.v(*x).cols();
                self.acc(grads, *x, |g| {
                    for (r, &c) in idx.iter().enumerate() {
                        g[r * n + c] += dy[r];
                    }
                });
            }
            Op::CausalAttention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => {
                let (vq, vk, vv) = (self.v(*q), self.v(*k), self.v(*v));
                let d = vq.cols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = vec![0.0; vq.len()];
                let mut gk = vec![0.0; vq.len()];
                let mut gv = vec![0.0; vq.len()];
                let mut base = 0;
                let mut ds = Vec::new();
                for &(start, len) in segments {
                    for h in 0..*heads {
                        let c0 = h * dh;
                        for i in 0..len {
                            let p = &probs[base + i * len..base + i * len + i + 1];
                            let dyi = &dy[(start + i) * d + c0..(start + i) * d + c0 + dh];
                            ds.clear();
                            for (j, &pj) in p.iter().enumerate() {
                                let r = (start + j) * d + c0;
                                ds.push(super::tensor::dot(dyi, &vv.data()[r..r + dh]));
                                axpy(&mut gv[r..r + dh], dyi, pj);
                            }
                            let inner: f64 = p.iter().zip(&ds).map(|(a, b)| a * b).sum();
                            let qi = (start + i) * d + c0;
                            for (j, &pj) in p.iter().enumerate() {
                                let s = pj * (ds[j] - inner) * scale;
                                if s == 0.0 {
                                    continue;
                                }
                                let r = (start + j) * d + c0;
                                axpy(&mut gq[qi..qi + dh], &vk.data()[r..r + dh], s);
                                axpy(&mut gk[r..r + dh], &vq.data()[qi..qi + dh], s);
                            }
                        }
                        base += len * len;
                    }
                }
                self.acc(grads, *q, |g| axpy(g, &gq, 1.0));
                self.acc(grads, *k, |g| axpy(g, &gk, 1.0));
                self.acc(grads, *v, |g| axpy(g, &gv, 1.0));
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: usize) -> &'g mut [f64] {
        grads[id].get_or_insert_with(|| vec![0.0; self.nodes[id].value.len()])
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], id: usize, f: impl FnOnce(&mut [f64])) {
        if self.nodes[id].needs_grad {
            f(self.slot(grads, id));
        }
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
