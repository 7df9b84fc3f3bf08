//! Reverse-mode autodiff over a per-step tape.
//!
//! A `Graph` is built afresh for every forward pass; `backward` walks the
//! tape in reverse and accumulates gradients into each node, then
//! `write_grads` moves parameter gradients back into the `ParamStore`.
//! No tape state persists across steps.

use super::tensor::{ParamStore, Scalar, Tensor};
use super::NumericsError;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

enum Op<S: Scalar> {
    Leaf { param: Option<String> },
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine(NodeId, S, S),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Gelu(NodeId),
    SoftmaxRow(NodeId),
    LogSumExpRow(NodeId),
    ConcatRows(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    Slice { src: NodeId, r0: usize, c0: usize },
    Reshape(NodeId),
    Mean(NodeId),
    MeanRows(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: S },
    GatherRows { table: NodeId, ids: Vec<usize> },
    MaxPool2 { src: NodeId, argmax: Vec<usize> },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    op: Op<S>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, shapes: &[(usize, usize)]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|(r, c)| format!("{r}x{c}")).collect::<Vec<_>>().join(", "),
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, grad: None, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> S {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value.data[0]
    }

    /// Constant leaf; never receives a parameter gradient.
    pub fn input(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf { param: None })
    }

    /// Leaf bound to a named parameter; the value is copied from the store.
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Result<NodeId, NumericsError> {
        let t = store.get(name)?.clone();
        Ok(self.push(Tensor { grad: None, ..t }, Op::Leaf { param: Some(name.to_string()) }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            return Err(shape_err("matmul", &[(ar, ac), (br, bc)]));
        }
        let mut out = Tensor::zeros(ar, bc);
        matmul_into(&self.value(a).data, &self.value(b).data, &mut out.data, ar, ac, bc, false);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a).transposed();
        self.push(t, Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(shape_err("add", &[sa, sb]));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o = *o + *v;
        }
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `a` is n×m, `bias` is 1×m, added to every row.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(bias).shape();
        if br != 1 || bc != ac {
            return Err(shape_err("add_bias", &[(ar, ac), (br, bc)]));
        }
        let mut out = self.value(a).clone();
        for r in 0..ar {
            for c in 0..ac {
                out.data[r * ac + c] = out.data[r * ac + c] + self.value(bias).data[c];
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(shape_err("mul", &[sa, sb]));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o = *o * *v;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Elementwise `alpha * x + beta`.
    pub fn affine(&mut self, a: NodeId, alpha: S, beta: S) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data.iter_mut() {
            *o = alpha * *o + beta;
        }
        self.push(out, Op::Affine(a, alpha, beta))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data.iter_mut() {
            if *o < S::zero() {
                *o = S::zero();
            }
        }
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data.iter_mut() {
            *o = o.tanh();
        }
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data.iter_mut() {
            *o = S::one() / (S::one() + (-*o).exp());
        }
        self.push(out, Op::Sigmoid(a))
    }

    /// tanh-approximation GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let c = S::from_f64(GELU_C);
        let k = S::from_f64(GELU_A);
        let half = S::from_f64(0.5);
        let mut out = self.value(a).clone();
        for o in out.data.iter_mut() {
            let x = *o;
            let t = (c * (x + k * x * x * x)).tanh();
            *o = half * x * (S::one() + t);
        }
        self.push(out, Op::Gelu(a))
    }

    pub fn activation(&mut self, a: NodeId, kind: Activation) -> NodeId {
        match kind {
            Activation::Relu => self.relu(a),
            Activation::Gelu => self.gelu(a),
        }
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_row(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.value(a).shape();
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = self.value(a).row(i);
            let mut m = row[0];
            for v in row {
                m = m.max_val(*v);
            }
            let mut sum = S::zero();
            for j in 0..c {
                let e = (row[j] - m).exp();
                out.data[i * c + j] = e;
                sum = sum + e;
            }
            for j in 0..c {
                out.data[i * c + j] = out.data[i * c + j] / sum;
            }
        }
        self.push(out, Op::SoftmaxRow(a))
    }

    /// Row-wise log-sum-exp, n×m -> n×1.
    pub fn log_sum_exp(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.value(a).shape();
        let mut out = Tensor::zeros(r, 1);
        for i in 0..r {
            let row = self.value(a).row(i);
            let mut m = row[0];
            for v in row {
                m = m.max_val(*v);
            }
            let mut sum = S::zero();
            for j in 0..c {
                sum = sum + (row[j] - m).exp();
            }
            out.data[i] = m + sum.ln();
        }
        self.push(out, Op::LogSumExpRow(a))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != bc {
            return Err(shape_err("concat_rows", &[(ar, ac), (br, bc)]));
        }
        let mut data = Vec::with_capacity((ar + br) * ac);
        data.extend_from_slice(&self.value(a).data);
        data.extend_from_slice(&self.value(b).data);
        Ok(self.push(Tensor::from_vec(ar + br, ac, data), Op::ConcatRows(a, b)))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ar != br {
            return Err(shape_err("concat_cols", &[(ar, ac), (br, bc)]));
        }
        let mut out = Tensor::zeros(ar, ac + bc);
        for r in 0..ar {
            out.data[r * (ac + bc)..r * (ac + bc) + ac].copy_from_slice(self.value(a).row(r));
            out.data[r * (ac + bc) + ac..(r + 1) * (ac + bc)].copy_from_slice(self.value(b).row(r));
        }
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Rectangular slice, rows [r0, r1) × cols [c0, c1).
    pub fn slice(
        &mut self,
        a: NodeId,
        r0: usize,
        r1: usize,
        c0: usize,
        c1: usize,
    ) -> Result<NodeId, NumericsError> {
        let (ar, ac) = self.value(a).shape();
        if r1 > ar || c1 > ac || r0 >= r1 || c0 >= c1 {
            return Err(shape_err("slice", &[(ar, ac), (r1, c1)]));
        }
        let mut out = Tensor::zeros(r1 - r0, c1 - c0);
        for r in r0..r1 {
            out.data[(r - r0) * (c1 - c0)..(r - r0 + 1) * (c1 - c0)]
                .copy_from_slice(&self.value(a).row(r)[c0..c1]);
        }
        Ok(self.push(out, Op::Slice { src: a, r0, c0 }))
    }

    pub fn row(&mut self, a: NodeId, r: usize) -> Result<NodeId, NumericsError> {
        let (_, c) = self.value(a).shape();
        if self.value(a).rows == 0 {
            return Err(NumericsError::EmptyInput("row"));
        }
        self.slice(a, r, r + 1, 0, c)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, NumericsError> {
        let t = self.value(a);
        if t.len() != rows * cols {
            return Err(shape_err("reshape", &[t.shape(), (rows, cols)]));
        }
        let out = Tensor::from_vec(rows, cols, t.data.clone());
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Mean of all entries, -> 1×1.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(NumericsError::EmptyInput("mean"));
        }
        let mut sum = S::zero();
        for v in &t.data {
            sum = sum + *v;
        }
        let out = Tensor::from_vec(1, 1, vec![sum / S::from_f64(t.len() as f64)]);
        Ok(self.push(out, Op::Mean(a)))
    }

    /// Column-wise mean over rows, n×m -> 1×m.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let (r, c) = self.value(a).shape();
        if r == 0 {
            return Err(NumericsError::EmptyInput("mean_rows"));
        }
        let mut out = Tensor::zeros(1, c);
        for i in 0..r {
            for j in 0..c {
                out.data[j] = out.data[j] + self.value(a).at(i, j);
            }
        }
        let n = S::from_f64(r as f64);
        for v in out.data.iter_mut() {
            *v = *v / n;
        }
        Ok(self.push(out, Op::MeanRows(a)))
    }

    /// Per-row layer normalization with learned gain/offset (1×m each).
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: S,
    ) -> Result<NodeId, NumericsError> {
        let (r, c) = self.value(x).shape();
        let sg = self.value(gamma).shape();
        let sb = self.value(beta).shape();
        if sg != (1, c) || sb != (1, c) {
            return Err(shape_err("layer_norm", &[(r, c), sg, sb]));
        }
        let n = S::from_f64(c as f64);
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = self.value(x).row(i);
            let mut mu = S::zero();
            for v in row {
                mu = mu + *v;
            }
            mu = mu / n;
            let mut var = S::zero();
            for v in row {
                var = var + (*v - mu) * (*v - mu);
            }
            var = var / n;
            let inv = S::one() / (var + eps).sqrt();
            for j in 0..c {
                let xhat = (row[j] - mu) * inv;
                out.data[i * c + j] =
                    self.value(gamma).data[j] * xhat + self.value(beta).data[j];
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, eps }))
    }

    /// Embedding lookup: selects rows of `table` by index.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, NumericsError> {
        let (tr, tc) = self.value(table).shape();
        for &id in ids {
            if id >= tr {
                return Err(NumericsError::IdOutOfRange { id, size: tr });
            }
        }
        let mut out = Tensor::zeros(ids.len(), tc);
        for (i, &id) in ids.iter().enumerate() {
            out.data[i * tc..(i + 1) * tc].copy_from_slice(self.value(table).row(id));
        }
        Ok(self.push(out, Op::GatherRows { table, ids: ids.to_vec() }))
    }

    /// 2×2 max pooling with stride 2 over the (rows × cols) grid; ragged
    /// edges take the max of the cells that exist (ceil mode).
    pub fn max_pool_2x2(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let (r, c) = self.value(a).shape();
        if r == 0 || c == 0 {
            return Err(NumericsError::EmptyInput("max_pool_2x2"));
        }
        let or = r.div_ceil(2);
        let oc = c.div_ceil(2);
        let mut out = Tensor::zeros(or, oc);
        let mut argmax = vec![0usize; or * oc];
        for i in 0..or {
            for j in 0..oc {
                let mut best: Option<(S, usize)> = None;
                for di in 0..2 {
                    for dj in 0..2 {
                        let (ri, cj) = (2 * i + di, 2 * j + dj);
                        if ri < r && cj < c {
                            let v = self.value(a).at(ri, cj);
                            if best.map_or(true, |(b, _)| v > b) {
                                best = Some((v, ri * c + cj));
                            }
                        }
                    }
                }
                let (v, idx) = best.unwrap();
                out.data[i * oc + j] = v;
                argmax[i * oc + j] = idx;
            }
        }
        Ok(self.push(out, Op::MaxPool2 { src: a, argmax }))
    }

    /// Applies an inverted-dropout mask (entries 0 or 1/(1-p)) as a constant.
    pub fn dropout_mask(&mut self, a: NodeId, mask: Tensor<S>) -> Result<NodeId, NumericsError> {
        let m = self.input(mask);
        self.mul(a, m)
    }

    /// Backpropagates from a scalar (1×1) node.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), NumericsError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(shape_err("backward", &[self.nodes[loss.0].value.shape()]));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let g = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, id: NodeId, f: impl FnOnce(&mut [S])) {
        let len = self.nodes[id.0].value.len();
        let slot = self.nodes[id.0].grad.get_or_insert_with(|| vec![S::zero(); len]);
        f(slot);
    }

    fn backprop_node(&mut self, i: usize, g: &[S]) {
        // Ops are matched by moving the data we need out first to appease the
        // borrow checker; values are read through raw index access.
        enum Plan<S: Scalar> {
            None,
            One(NodeId, Vec<S>),
            Two(NodeId, Vec<S>, NodeId, Vec<S>),
            Three(NodeId, Vec<S>, NodeId, Vec<S>, NodeId, Vec<S>),
        }
        let plan: Plan<S> = match &self.nodes[i].op {
            Op::Leaf { .. } => Plan::None,
            Op::MatMul(a, b) => {
                let (ar, ac) = self.nodes[a.0].value.shape();
                let (_, bc) = self.nodes[b.0].value.shape();
                // dA = G · B^T
                let mut da = vec![S::zero(); ar * ac];
                matmul_nt(&mut da, g, &self.nodes[b.0].value.data, ar, bc, ac);
                // dB = A^T · G
                let mut db = vec![S::zero(); ac * bc];
                matmul_tn(&mut db, &self.nodes[a.0].value.data, g, ar, ac, bc);
                Plan::Two(*a, da, *b, db)
            }
            Op::Transpose(a) => {
                let (r, c) = self.nodes[i].value.shape();
                let mut da = vec![S::zero(); r * c];
                for rr in 0..r {
                    for cc in 0..c {
                        da[cc * r + rr] = g[rr * c + cc];
                    }
                }
                Plan::One(*a, da)
            }
            Op::Add(a, b) => Plan::Two(*a, g.to_vec(), *b, g.to_vec()),
            Op::AddBias(a, bias) => {
                let (r, c) = self.nodes[i].value.shape();
                let mut db = vec![S::zero(); c];
                for rr in 0..r {
                    for cc in 0..c {
                        db[cc] = db[cc] + g[rr * c + cc];
                    }
                }
                Plan::Two(*a, g.to_vec(), *bias, db)
            }
            Op::Mul(a, b) => {
                let da: Vec<S> =
                    g.iter().zip(&self.nodes[b.0].value.data).map(|(x, y)| *x * *y).collect();
                let db: Vec<S> =
                    g.iter().zip(&self.nodes[a.0].value.data).map(|(x, y)| *x * *y).collect();
                Plan::Two(*a, da, *b, db)
            }
            Op::Affine(a, alpha, _) => {
                let alpha = *alpha;
                Plan::One(*a, g.iter().map(|x| *x * alpha).collect())
            }
            Op::Relu(a) => {
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[a.0].value.data)
                    .map(|(x, v)| if *v > S::zero() { *x } else { S::zero() })
                    .collect();
                Plan::One(*a, da)
            }
            Op::Tanh(a) => {
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[i].value.data)
                    .map(|(x, y)| *x * (S::one() - *y * *y))
                    .collect();
                Plan::One(*a, da)
            }
            Op::Sigmoid(a) => {
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[i].value.data)
                    .map(|(x, y)| *x * *y * (S::one() - *y))
                    .collect();
                Plan::One(*a, da)
            }
            Op::Gelu(a) => {
                let c = S::from_f64(GELU_C);
                let k3 = S::from_f64(3.0 * GELU_A);
                let k = S::from_f64(GELU_A);
                let half = S::from_f64(0.5);
                let da: Vec<S> = g
                    .iter()
                    .zip(&self.nodes[a.0].value.data)
                    .map(|(gv, xv)| {
                        let x = *xv;
                        let u = c * (x + k * x * x * x);
                        let t = u.tanh();
                        let du = c * (S::one() + k3 * x * x);
                        let d = half * (S::one() + t) + half * x * (S::one() - t * t) * du;
                        *gv * d
                    })
                    .collect();
                Plan::One(*a, da)
            }
            Op::SoftmaxRow(a) => {
                let (r, c) = self.nodes[i].value.shape();
                let y = &self.nodes[i].value.data;
                let mut da = vec![S::zero(); r * c];
                for rr in 0..r {
                    let mut dot = S::zero();
                    for cc in 0..c {
                        dot = dot + g[rr * c + cc] * y[rr * c + cc];
                    }
                    for cc in 0..c {
                        da[rr * c + cc] = y[rr * c + cc] * (g[rr * c + cc] - dot);
                    }
                }
                Plan::One(*a, da)
            }
            Op::LogSumExpRow(a) => {
                let (r, c) = self.nodes[a.0].value.shape();
                let x = &self.nodes[a.0].value.data;
                let lse = &self.nodes[i].value.data;
                let mut da = vec![S::zero(); r * c];
                for rr in 0..r {
                    for cc in 0..c {
                        da[rr * c + cc] = g[rr] * (x[rr * c + cc] - lse[rr]).exp();
                    }
                }
                Plan::One(*a, da)
            }
            Op::ConcatRows(a, b) => {
                let na = self.nodes[a.0].value.len();
                Plan::Two(*a, g[..na].to_vec(), *b, g[na..].to_vec())
            }
            Op::ConcatCols(a, b) => {
                let (r, ac) = self.nodes[a.0].value.shape();
                let bc = self.nodes[b.0].value.cols;
                let mut da = vec![S::zero(); r * ac];
                let mut db = vec![S::zero(); r * bc];
                for rr in 0..r {
                    da[rr * ac..(rr + 1) * ac]
                        .copy_from_slice(&g[rr * (ac + bc)..rr * (ac + bc) + ac]);
                    db[rr * bc..(rr + 1) * bc]
                        .copy_from_slice(&g[rr * (ac + bc) + ac..(rr + 1) * (ac + bc)]);
                }
                Plan::Two(*a, da, *b, db)
            }
            Op::Slice { src, r0, c0 } => {
                let (sr, sc) = self.nodes[src.0].value.shape();
                let (or, oc) = self.nodes[i].value.shape();
                let (r0, c0) = (*r0, *c0);
                let mut da = vec![S::zero(); sr * sc];
                for rr in 0..or {
                    for cc in 0..oc {
                        da[(rr + r0) * sc + cc + c0] = g[rr * oc + cc];
                    }
                }
                Plan::One(*src, da)
            }
            Op::Reshape(a) => Plan::One(*a, g.to_vec()),
            Op::Mean(a) => {
                let n = S::from_f64(self.nodes[a.0].value.len() as f64);
                let gv = g[0] / n;
                Plan::One(*a, vec![gv; self.nodes[a.0].value.len()])
            }
            Op::MeanRows(a) => {
                let (r, c) = self.nodes[a.0].value.shape();
                let n = S::from_f64(r as f64);
                let mut da = vec![S::zero(); r * c];
                for rr in 0..r {
                    for cc in 0..c {
                        da[rr * c + cc] = g[cc] / n;
                    }
                }
                Plan::One(*a, da)
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (r, c) = self.nodes[x.0].value.shape();
                let n = S::from_f64(c as f64);
                let eps = *eps;
                let xd = &self.nodes[x.0].value.data;
                let gam = &self.nodes[gamma.0].value.data;
                let mut dx = vec![S::zero(); r * c];
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                for rr in 0..r {
                    let row = &xd[rr * c..(rr + 1) * c];
                    let mut mu = S::zero();
                    for v in row {
                        mu = mu + *v;
                    }
                    mu = mu / n;
                    let mut var = S::zero();
                    for v in row {
                        var = var + (*v - mu) * (*v - mu);
                    }
                    var = var / n;
                    let inv = S::one() / (var + eps).sqrt();
                    // dxhat_j = g_j * gamma_j; dx from the standard LN backward
                    let mut sum_dxhat = S::zero();
                    let mut sum_dxhat_xhat = S::zero();
                    for j in 0..c {
                        let xhat = (row[j] - mu) * inv;
                        let dxhat = g[rr * c + j] * gam[j];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                        dgamma[j] = dgamma[j] + g[rr * c + j] * xhat;
                        dbeta[j] = dbeta[j] + g[rr * c + j];
                    }
                    for j in 0..c {
                        let xhat = (row[j] - mu) * inv;
                        let dxhat = g[rr * c + j] * gam[j];
                        dx[rr * c + j] =
                            inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                    }
                }
                Plan::Three(*x, dx, *gamma, dgamma, *beta, dbeta)
            }
            Op::GatherRows { table, ids } => {
                let (tr, tc) = self.nodes[table.0].value.shape();
                let mut dt = vec![S::zero(); tr * tc];
                for (i_row, &id) in ids.iter().enumerate() {
                    for j in 0..tc {
                        dt[id * tc + j] = dt[id * tc + j] + g[i_row * tc + j];
                    }
                }
                Plan::One(*table, dt)
            }
            Op::MaxPool2 { src, argmax } => {
                let n = self.nodes[src.0].value.len();
                let mut da = vec![S::zero(); n];
                for (o, &idx) in argmax.iter().enumerate() {
                    da[idx] = da[idx] + g[o];
                }
                Plan::One(*src, da)
            }
        };
        match plan {
            Plan::None => {}
            Plan::One(a, da) => self.acc(a, |s| add_into(s, &da)),
            Plan::Two(a, da, b, db) => {
                self.acc(a, |s| add_into(s, &da));
                self.acc(b, |s| add_into(s, &db));
            }
            Plan::Three(a, da, b, db, c, dc) => {
                self.acc(a, |s| add_into(s, &da));
                self.acc(b, |s| add_into(s, &db));
                self.acc(c, |s| add_into(s, &dc));
            }
        }
    }

    /// Accumulates gradients of parameter leaves back into the store.
    /// Multiple leaves bound to the same name sum their contributions.
    pub fn write_grads(&self, store: &mut ParamStore<S>) -> Result<(), NumericsError> {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = &node.grad {
                    let t = store.get_mut(name)?;
                    match &mut t.grad {
                        Some(acc) => add_into(acc, g),
                        None => t.grad = Some(g.clone()),
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into<S: Scalar>(acc: &mut [S], v: &[S]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a = *a + *b;
    }
}

/// C += A·B (row-major, saxpy inner loop so the compiler can vectorize).
fn matmul_into<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize, _acc: bool) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * *bv;
            }
        }
    }
}

/// C += A·B^T where A is m×k (here: grad m×n times B n×k -> m×k... named by layout)
/// Concretely: out[m×k2] += g[m×n] · b[k2×n]^T.
fn matmul_nt<S: Scalar>(out: &mut [S], g: &[S], b: &[S], m: usize, n: usize, k2: usize) {
    for i in 0..m {
        for j in 0..k2 {
            let mut s = S::zero();
            let grow = &g[i * n..(i + 1) * n];
            let brow = &b[j * n..(j + 1) * n];
            for (x, y) in grow.iter().zip(brow) {
                s = s + *x * *y;
            }
            out[i * k2 + j] = out[i * k2 + j] + s;
        }
    }
}

/// out[k×n] += a[m×k]^T · g[m×n].
fn matmul_tn<S: Scalar>(out: &mut [S], a: &[S], g: &[S], m: usize, k: usize, n: usize) {
    for p in 0..m {
        for i in 0..k {
            let av = a[p * k + i];
            let grow = &g[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * *gv;
            }
        }
    }
}
