//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so a single reverse sweep over the node
//! list visits every node after all of its consumers. Parameters enter the
//! tape as leaves bound to a [`ParamId`]; [`Graph::backward`] returns one
//! gradient tensor per parameter of the store.
//!
//! Feature maps for the convolutional ops are stored as `channels × (h·w)`
//! tensors, row-major over (h, w).

use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{dot, matmul, matmul_a_bt, matmul_at_b, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    ConcatRows(NodeId, NodeId),
    GatherRows(NodeId, Vec<usize>),
    SelectRow(NodeId, usize),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        key_valid: Vec<bool>,
        probs: Vec<f64>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
        cols: Tensor,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    TimeMean {
        x: NodeId,
        h: usize,
        w: usize,
    },
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    in_ch: usize,
    h: usize,
    w: usize,
    k: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `x (r×c) + bias (1×c)` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.rows, 1, "bias must be a row vector");
        assert_eq!(xv.cols, bv.cols, "bias width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(out, Op::AddBias(x, bias), rg)
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let xv = self.value(x);
        let out = Tensor::from_vec(xv.rows, xv.cols, xv.data.iter().map(|v| v * s).collect());
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data.iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "concat_rows width mismatch");
        let mut data = av.data.clone();
        data.extend_from_slice(&bv.data);
        let out = Tensor::from_vec(av.rows + bv.rows, av.cols, data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::ConcatRows(a, b), rg)
    }

    /// Rows `indices[i]` of `table`, in order.
    pub fn gather_rows(&mut self, table: NodeId, indices: Vec<usize>) -> NodeId {
        let tv = self.value(table);
        let mut out = Tensor::zeros(indices.len(), tv.cols);
        for (i, &r) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(tv.row(r));
        }
        let rg = self.rg(table);
        self.push(out, Op::GatherRows(table, indices), rg)
    }

    pub fn select_row(&mut self, x: NodeId, row: usize) -> NodeId {
        let xv = self.value(x);
        let out = Tensor::from_vec(1, xv.cols, xv.row(row).to_vec());
        let rg = self.rg(x);
        self.push(out, Op::SelectRow(x, row), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (1×c).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let (rows, cols) = xv.shape();
        assert_eq!(g.shape(), (1, cols), "layer norm gamma shape");
        assert_eq!(b.shape(), (1, cols), "layer norm beta shape");
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out.data[r * cols + c] = h * g.data[c] + b.data[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv
            .data
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()))
            .collect();
        let out = Tensor::from_vec(xv.rows, xv.cols, data);
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let out = Tensor::from_vec(
            xv.rows,
            xv.cols,
            xv.data.iter().map(|v| v.max(0.0)).collect(),
        );
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    /// Multi-head scaled dot-product self-attention over `q`, `k`, `v`
    /// (each `T×D`). Keys with `key_valid[j] == false` get a logit of −∞,
    /// so no query attends to them. At least one key must be valid.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        key_valid: Vec<bool>,
    ) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (t, d) = qv.shape();
        assert_eq!(kv.shape(), (t, d), "attention key shape");
        assert_eq!(vv.shape(), (t, d), "attention value shape");
        assert_eq!(key_valid.len(), t, "attention mask length");
        assert!(d % heads == 0, "embed dim not divisible by heads");
        assert!(key_valid.iter().any(|&m| m), "attention needs a valid key");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * t * t];
        let mut out = Tensor::zeros(t, d);
        for h in 0..heads {
            let off = h * dh;
            for i in 0..t {
                let qi = &qv.row(i)[off..off + dh];
                let p = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
                for j in 0..t {
                    p[j] = if key_valid[j] {
                        dot(qi, &kv.row(j)[off..off + dh]) * scale
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                softmax_in_place(p);
                let orow = &mut out.data[i * d + off..i * d + off + dh];
                for j in 0..t {
                    let pj = p[j];
                    if pj == 0.0 {
                        continue;
                    }
                    for (o, vj) in orow.iter_mut().zip(&vv.row(j)[off..off + dh]) {
                        *o += pj * vj;
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                key_valid,
                probs,
            },
            rg,
        )
    }

    /// Same-padded `k×k` convolution. `x` is `in_ch × (h·w)`, `w` is
    /// `out_ch × (in_ch·k·k)`, `b` is `out_ch × 1`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        h: usize,
        width: usize,
        k: usize,
    ) -> NodeId {
        let xv = self.value(x);
        let (wv, bv) = (self.value(w), self.value(b));
        assert!(k % 2 == 1, "conv kernel must be odd");
        assert_eq!(xv.cols, h * width, "conv input geometry mismatch");
        let geom = ConvGeom {
            in_ch: xv.rows,
            h,
            w: width,
            k,
        };
        assert_eq!(wv.cols, geom.in_ch * k * k, "conv weight shape mismatch");
        assert_eq!(bv.shape(), (wv.rows, 1), "conv bias shape mismatch");
        let cols = im2col(xv, geom);
        let mut out = matmul(wv, &cols);
        for o in 0..out.rows {
            let bias = bv.data[o];
            for v in out.row_mut(o) {
                *v += bias;
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            rg,
        )
    }

    /// Non-overlapping max pooling with factors (`pool_h`, `pool_w`); trailing
    /// rows/columns that do not fill a window are dropped. Returns the node
    /// and the pooled (h, w).
    pub fn max_pool(
        &mut self,
        x: NodeId,
        h: usize,
        w: usize,
        pool_h: usize,
        pool_w: usize,
    ) -> (NodeId, usize, usize) {
        let xv = self.value(x);
        assert_eq!(xv.cols, h * w, "pool input geometry mismatch");
        let (oh, ow) = (h / pool_h, w / pool_w);
        assert!(oh > 0 && ow > 0, "pooling window larger than feature map");
        let ch = xv.rows;
        let mut out = Tensor::zeros(ch, oh * ow);
        let mut argmax = vec![0usize; ch * oh * ow];
        for c in 0..ch {
            let row = xv.row(c);
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for di in 0..pool_h {
                        for dj in 0..pool_w {
                            let idx = (i * pool_h + di) * w + j * pool_w + dj;
                            if row[idx] > best {
                                best = row[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data[c * oh * ow + i * ow + j] = best;
                    argmax[c * oh * ow + i * ow + j] = best_idx;
                }
            }
        }
        let rg = self.rg(x);
        (self.push(out, Op::MaxPool { x, argmax }, rg), oh, ow)
    }

    /// Mean over the time (w) axis: `C × (h·w)` → `1 × (C·h)`.
    pub fn time_mean(&mut self, x: NodeId, h: usize, w: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.cols, h * w, "time_mean geometry mismatch");
        let ch = xv.rows;
        let mut out = Tensor::zeros(1, ch * h);
        for c in 0..ch {
            let row = xv.row(c);
            for i in 0..h {
                out.data[c * h + i] = row[i * w..(i + 1) * w].iter().sum::<f64>() / w as f64;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::TimeMean { x, h, w }, rg)
    }

    /// Reverse sweep seeded with `d(loss)/d(node)` for each seed node.
    /// Seeds on the same node accumulate. Returns gradients for every
    /// parameter of `store`; parameters the seeds do not reach get zeros.
    pub fn backward(&self, seeds: &[(NodeId, Tensor)], store: &ParamStore) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            assert_eq!(self.value(*id).shape(), g.shape(), "seed shape mismatch");
            accumulate(&mut grads, *id, g.clone());
        }
        let mut out = Gradients::zeros_like(store);
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut out);
        }
        out
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(pid) => out.tensors[pid.0].add_assign(&g),
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, matmul_a_bt(&g, self.value(*b)));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, matmul_at_b(self.value(*a), &g));
                }
            }
            Op::AddBias(x, bias) => {
                if self.rg(*bias) {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *bias, gb);
                }
                if self.rg(*x) {
                    accumulate(grads, *x, g);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Scale(x, s) => {
                let d = g.data.iter().map(|v| v * s).collect();
                accumulate(grads, *x, Tensor::from_vec(g.rows, g.cols, d));
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, Tensor::full(xv.rows, xv.cols, g.data[0]));
            }
            Op::ConcatRows(a, b) => {
                let ar = self.value(*a).rows;
                let split = ar * g.cols;
                if self.rg(*a) {
                    accumulate(
                        grads,
                        *a,
                        Tensor::from_vec(ar, g.cols, g.data[..split].to_vec()),
                    );
                }
                if self.rg(*b) {
                    accumulate(
                        grads,
                        *b,
                        Tensor::from_vec(g.rows - ar, g.cols, g.data[split..].to_vec()),
                    );
                }
            }
            Op::GatherRows(table, indices) => {
                let tv = self.value(*table);
                let mut gt = Tensor::zeros(tv.rows, tv.cols);
                for (i, &r) in indices.iter().enumerate() {
                    for (o, v) in gt.row_mut(r).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                accumulate(grads, *table, gt);
            }
            Op::SelectRow(x, row) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                gx.row_mut(*row).copy_from_slice(&g.data);
                accumulate(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = g.shape();
                let gv = self.value(*gamma);
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut gg = Tensor::zeros(1, cols);
                    let mut gbeta = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let d = g.data[r * cols + c];
                            gg.data[c] += d * xhat[r * cols + c];
                            gbeta.data[c] += d;
                        }
                    }
                    if self.rg(*gamma) {
                        accumulate(grads, *gamma, gg);
                    }
                    if self.rg(*beta) {
                        accumulate(grads, *beta, gbeta);
                    }
                }
                if self.rg(*x) {
                    let n = cols as f64;
                    let mut gx = Tensor::zeros(rows, cols);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dxhat[c] = g.data[r * cols + c] * gv.data[c];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dot(&dxhat, xh);
                        let is = inv_std[r];
                        for c in 0..cols {
                            gx.data[r * cols + c] = is / n * (n * dxhat[c] - s1 - xh[c] * s2);
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&v, &gv)| {
                        let u = GELU_C * (v + GELU_K * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                        gv * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(xv.rows, xv.cols, d));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(xv.rows, xv.cols, d));
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s = dot(yr, gr);
                    for (o, (&yv, &gv)) in gx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - s);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                key_valid,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (t, d) = qv.shape();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Tensor::zeros(t, d);
                let mut gk = Tensor::zeros(t, d);
                let mut gvv = Tensor::zeros(t, d);
                let mut dp = vec![0.0; t];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..t {
                        let p = &probs[(h * t + i) * t..(h * t + i + 1) * t];
                        let gi = &g.row(i)[off..off + dh];
                        for j in 0..t {
                            if !key_valid[j] {
                                dp[j] = 0.0;
                                continue;
                            }
                            dp[j] = dot(gi, &vv.row(j)[off..off + dh]);
                            let pj = p[j];
                            if pj != 0.0 {
                                let gvj = &mut gvv.data[j * d + off..j * d + off + dh];
                                for (o, gx) in gvj.iter_mut().zip(gi) {
                                    *o += pj * gx;
                                }
                            }
                        }
                        let s = dot(p, &dp);
                        let qi = &qv.row(i)[off..off + dh];
                        for j in 0..t {
                            if !key_valid[j] {
                                continue;
                            }
                            let ds = p[j] * (dp[j] - s) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let kj = &kv.row(j)[off..off + dh];
                            let gqi = &mut gq.data[i * d + off..i * d + off + dh];
                            for (o, kx) in gqi.iter_mut().zip(kj) {
                                *o += ds * kx;
                            }
                            let gkj = &mut gk.data[j * d + off..j * d + off + dh];
                            for (o, qx) in gkj.iter_mut().zip(qi) {
                                *o += ds * qx;
                            }
                        }
                    }
                }
                if self.rg(*q) {
                    accumulate(grads, *q, gq);
                }
                if self.rg(*k) {
                    accumulate(grads, *k, gk);
                }
                if self.rg(*v) {
                    accumulate(grads, *v, gvv);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                if self.rg(*b) {
                    let gb = (0..g.rows).map(|o| g.row(o).iter().sum()).collect();
                    accumulate(grads, *b, Tensor::from_vec(g.rows, 1, gb));
                }
                if self.rg(*w) {
                    accumulate(grads, *w, matmul_a_bt(&g, cols));
                }
                if self.rg(*x) {
                    let gcols = matmul_at_b(self.value(*w), &g);
                    accumulate(grads, *x, col2im(&gcols, *geom));
                }
            }
            Op::MaxPool { x, argmax } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                let per = g.cols;
                for c in 0..g.rows {
                    for o in 0..per {
                        gx.data[c * xv.cols + argmax[c * per + o]] += g.data[c * per + o];
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::TimeMean { x, h, w } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                let inv = 1.0 / *w as f64;
                for c in 0..xv.rows {
                    for i in 0..*h {
                        let gvv = g.data[c * h + i] * inv;
                        for v in &mut gx.row_mut(c)[i * w..(i + 1) * w] {
                            *v = gvv;
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Numerically stable softmax; −∞ entries map to exactly 0.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f64::NEG_INFINITY {
            0.0
        } else {
            (*v - max).exp()
        };
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn im2col(x: &Tensor, g: ConvGeom) -> Tensor {
    let pad = (g.k / 2) as isize;
    let hw = g.h * g.w;
    let mut cols = Tensor::zeros(g.in_ch * g.k * g.k, hw);
    for c in 0..g.in_ch {
        let src = x.row(c);
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (c * g.k + ki) * g.k + kj;
                let dst = cols.row_mut(r);
                let di = ki as isize - pad;
                let dj = kj as isize - pad;
                for i in 0..g.h {
                    let si = i as isize + di;
                    if si < 0 || si >= g.h as isize {
                        continue;
                    }
                    let j_lo = (-dj).max(0) as usize;
                    let j_hi = (g.w as isize - dj).min(g.w as isize).max(0) as usize;
                    if j_lo >= j_hi {
                        continue;
                    }
                    let s0 = (si as usize) * g.w;
                    let d0 = i * g.w;
                    let sj_lo = (j_lo as isize + dj) as usize;
                    dst[d0 + j_lo..d0 + j_hi]
                        .copy_from_slice(&src[s0 + sj_lo..s0 + sj_lo + (j_hi - j_lo)]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Tensor, g: ConvGeom) -> Tensor {
    let pad = (g.k / 2) as isize;
    let mut x = Tensor::zeros(g.in_ch, g.h * g.w);
    for c in 0..g.in_ch {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (c * g.k + ki) * g.k + kj;
                let src = cols.row(r);
                let di = ki as isize - pad;
                let dj = kj as isize - pad;
                let dst = x.row_mut(c);
                for i in 0..g.h {
                    let si = i as isize + di;
                    if si < 0 || si >= g.h as isize {
                        continue;
                    }
                    for j in 0..g.w {
                        let sj = j as isize + dj;
                        if sj < 0 || sj >= g.w as isize {
                            continue;
                        }
                        dst[si as usize * g.w + sj as usize] += src[i * g.w + j];
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_parameter_has_unit_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_vec(1, 4, vec![1.0, -2.0, 3.5, 0.0]));
        let mut g = Graph::new();
        let pn = g.param(&store, p);
        let s = g.sum(pn);
        let grads = g.backward(&[(s, Tensor::scalar(1.0))], &store);
        assert_eq!(grads.get(p).data, vec![1.0; 4]);
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_vec(3, 2, vec![1.0, 0.5, -1.0, 2.0, 0.3, 0.3]));
        let v = g.constant(Tensor::from_vec(
            3,
            2,
            vec![1.0, 2.0, 3.0, 4.0, 100.0, 100.0],
        ));
        let out = g.attention(q, q, v, 1, vec![true, true, false]);
        for r in 0..3 {
            // convex combination of the first two value rows only
            let row = g.value(out).row(r);
            assert!(row[0] >= 1.0 && row[0] <= 3.0);
        }
    }

    #[test]
    fn single_valid_key_returns_its_value() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_vec(
            2,
            4,
            vec![0.1, 0.2, 0.3, 0.4, 5.0, 6.0, 7.0, 8.0],
        ));
        let v = g.constant(Tensor::from_vec(
            2,
            4,
            vec![1.5, -2.0, 0.25, 9.0, 3.0, 3.0, 3.0, 3.0],
        ));
        let out = g.attention(q, q, v, 2, vec![true, false]);
        assert_eq!(g.value(out).row(0), &[1.5, -2.0, 0.25, 9.0]);
        assert_eq!(g.value(out).row(1), &[1.5, -2.0, 0.25, 9.0]);
    }

    #[test]
    fn im2col_round_trip_counts_overlaps() {
        // col2im(im2col(ones)) counts how many kernel taps see each pixel.
        let geom = ConvGeom {
            in_ch: 1,
            h: 3,
            w: 3,
            k: 3,
        };
        let x = Tensor::full(1, 9, 1.0);
        let back = col2im(&im2col(&x, geom), geom);
        assert_eq!(back.data, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }
}
