//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes that do
//! not depend on a trainable parameter are never differentiated.

use super::matrix::{dot, Matrix};

/// Index of a trainable tensor in a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Vec<f64>),
    MulConst(Var, Matrix),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    Geglu(Var),
    Relu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        group: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    param: Option<ParamId>,
    needs_grad: bool,
}

/// Gradients of the trainable leaves reached by a backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    pub entries: Vec<(ParamId, Matrix)>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A parameter leaf; `trainable = false` treats it as a constant.
    pub fn param(&mut self, id: ParamId, value: &Matrix, trainable: bool) -> Var {
        let v = self.push(value.clone(), Op::Leaf, trainable);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows(), 1, "add_row expects a row vector");
        assert_eq!(bias.cols(), self.value(a).cols(), "add_row width");
        let mut value = self.value(a).clone();
        let bias = bias.as_slice().to_vec();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::AddRow(a, b), ng)
    }

    /// Multiplies row `r` of `a` by the constant `scales[r]`.
    pub fn scale_rows(&mut self, a: Var, scales: Vec<f64>) -> Var {
        let mut value = self.value(a).clone();
        assert_eq!(scales.len(), value.rows(), "scale_rows length");
        for (r, s) in scales.iter().enumerate() {
            value.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        let ng = self.needs(a);
        self.push(value, Op::ScaleRows(a, scales), ng)
    }

    /// Elementwise product with a constant (dropout masks, fixed offsets).
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Var {
        let src = self.value(a);
        assert_eq!(src.shape(), c.shape(), "mul_const shape");
        let data = src.as_slice().iter().zip(c.as_slice()).map(|(x, m)| x * m).collect();
        let value = Matrix::from_vec(src.rows(), src.cols(), data);
        let ng = self.needs(a);
        self.push(value, Op::MulConst(a, c), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.shape();
        let g = self.value(gain).as_slice();
        let b = self.value(bias).as_slice();
        let mut normed = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = input.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let n = (row[c] - mean) * is;
                normed.set(r, c, n);
                out.set(r, c, n * g[c] + b[c]);
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            ng,
        )
    }

    /// Splits columns into halves `[a | g]` and returns `a * gelu(g)`.
    pub fn geglu(&mut self, x: Var) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.shape();
        assert!(cols % 2 == 0, "geglu needs an even width");
        let half = cols / 2;
        let mut out = Matrix::zeros(rows, half);
        for r in 0..rows {
            let row = input.row(r);
            for c in 0..half {
                out.set(r, c, row[c] * gelu(row[half + c]));
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::Geglu(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let ng = self.needs(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let ng = self.needs(x);
        self.push(value, Op::Tanh(x), ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let input = self.value(x);
        let mut value = Matrix::zeros(input.rows(), input.cols());
        for r in 0..input.rows() {
            softmax_into(input.row(r), value.row_mut(r));
        }
        let ng = self.needs(x);
        self.push(value, Op::SoftmaxRows(x), ng)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let ng = self.needs(x);
        self.push(value, Op::Transpose(x), ng)
    }

    /// Row `i` of the result is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Var {
        let src = self.value(a);
        let cols = src.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in &index {
            data.extend_from_slice(src.row(i));
        }
        let value = Matrix::from_vec(index.len(), cols, data);
        let ng = self.needs(a);
        self.push(value, Op::GatherRows(a, index), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows width");
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Multi-head scaled dot-product attention. Rows are partitioned into
    /// consecutive groups of `group` rows that attend only within their
    /// group; columns are split evenly across `heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, group: usize, heads: usize) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let (rows, width) = qm.shape();
        assert_eq!(km.shape(), (rows, width), "attention key shape");
        assert_eq!(vm.shape(), (rows, width), "attention value shape");
        assert!(group > 0 && rows % group == 0, "rows must split into groups");
        assert!(heads > 0 && width % heads == 0, "width must split into heads");
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let n_groups = rows / group;
        let mut probs = vec![0.0; n_groups * heads * group * group];
        let mut out = Matrix::zeros(rows, width);
        let mut scores = vec![0.0; group];
        for gi in 0..n_groups {
            let base = gi * group;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..group {
                    let qi = &qm.row(base + i)[cols.clone()];
                    for (j, s) in scores.iter_mut().enumerate() {
                        *s = dot(qi, &km.row(base + j)[cols.clone()]) * scale;
                    }
                    let p_off = ((gi * heads + h) * group + i) * group;
                    let p = &mut probs[p_off..p_off + group];
                    softmax_into(&scores, p);
                    let out_row = &mut out.row_mut(base + i)[cols.clone()];
                    for (j, &pj) in p.iter().enumerate() {
                        let vj = &vm.row(base + j)[cols.clone()];
                        for (o, &x) in out_row.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                group,
                heads,
                probs,
            },
            ng,
        )
    }

    /// Softmax cross-entropy of a `1 x C` logit row against class `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), 1, "cross_entropy expects one row");
        assert!(target < l.cols(), "target out of range");
        let mut probs = vec![0.0; l.cols()];
        softmax_into(l.as_slice(), &mut probs);
        let max = l.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.as_slice().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - l.as_slice()[target];
        let ng = self.needs(logits);
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            ng,
        )
    }

    /// Backpropagates from the scalar node `root` (seeded with 1).
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::default();

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let mut acc = |v: Var, delta: Matrix| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {
                    if let Some(id) = node.param {
                        out.entries.push((id, g));
                    }
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(*a, g.matmul_bt(self.value(*b)));
                    }
                    if self.needs(*b) {
                        acc(*b, self.value(*a).matmul_at(&g));
                    }
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::AddRow(a, b) => {
                    if self.needs(*b) {
                        let mut sum = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (s, x) in sum.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *s += x;
                            }
                        }
                        acc(*b, sum);
                    }
                    acc(*a, g);
                }
                Op::ScaleRows(a, scales) => {
                    let mut d = g;
                    for (r, s) in scales.iter().enumerate() {
                        d.row_mut(r).iter_mut().for_each(|x| *x *= s);
                    }
                    acc(*a, d);
                }
                Op::MulConst(a, c) => {
                    let data = g.as_slice().iter().zip(c.as_slice()).map(|(x, m)| x * m).collect();
                    acc(*a, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let (rows, cols) = g.shape();
                    let gv = self.value(*gain).as_slice();
                    let mut dgain = Matrix::zeros(1, cols);
                    let mut dbias = Matrix::zeros(1, cols);
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let nr = normed.row(r);
                        for c in 0..cols {
                            dgain.as_mut_slice()[c] += gr[c] * nr[c];
                            dbias.as_mut_slice()[c] += gr[c];
                            dxhat[c] = gr[c] * gv[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dn = dot(&dxhat, nr) / cols as f64;
                        let out_row = dx.row_mut(r);
                        for c in 0..cols {
                            out_row[c] = inv_std[r] * (dxhat[c] - mean_d - nr[c] * mean_dn);
                        }
                    }
                    acc(*gain, dgain);
                    acc(*bias, dbias);
                    acc(*x, dx);
                }
                Op::Geglu(x) => {
                    let input = self.value(*x);
                    let half = g.cols();
                    let mut dx = Matrix::zeros(input.rows(), input.cols());
                    for r in 0..g.rows() {
                        let row = input.row(r);
                        let gr = g.row(r);
                        let drow = dx.row_mut(r);
                        for c in 0..half {
                            let (a, gate) = (row[c], row[half + c]);
                            drow[c] = gr[c] * gelu(gate);
                            drow[half + c] = gr[c] * a * gelu_grad(gate);
                        }
                    }
                    acc(*x, dx);
                }
                Op::Relu(x) => {
                    let input = self.value(*x);
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(input.as_slice())
                        .map(|(d, &v)| if v > 0.0 { *d } else { 0.0 })
                        .collect();
                    acc(*x, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::Tanh(x) => {
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(node.value.as_slice())
                        .map(|(d, &t)| d * (1.0 - t * t))
                        .collect();
                    acc(*x, Matrix::from_vec(g.rows(), g.cols(), data));
                }
                Op::SoftmaxRows(x) => {
                    let p = &node.value;
                    let mut dx = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let s = dot(g.row(r), p.row(r));
                        for ((o, &d), &pv) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(p.row(r)) {
                            *o = pv * (d - s);
                        }
                    }
                    acc(*x, dx);
                }
                Op::Transpose(x) => acc(*x, g.transpose()),
                Op::GatherRows(a, index) => {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for (i, &r) in index.iter().enumerate() {
                        for (o, x) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(*a, d);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        if self.needs(p) {
                            let slice = g.as_slice()[start * cols..(start + rows) * cols].to_vec();
                            acc(p, Matrix::from_vec(rows, cols, slice));
                        }
                        start += rows;
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    group,
                    heads,
                    probs,
                } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let (rows, width) = qm.shape();
                    let (group, heads) = (*group, *heads);
                    let dh = width / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Matrix::zeros(rows, width);
                    let mut dk = Matrix::zeros(rows, width);
                    let mut dv = Matrix::zeros(rows, width);
                    let mut dp = vec![0.0; group];
                    for gi in 0..rows / group {
                        let base = gi * group;
                        for h in 0..heads {
                            let cols = h * dh..(h + 1) * dh;
                            for i in 0..group {
                                let p_off = ((gi * heads + h) * group + i) * group;
                                let p = &probs[p_off..p_off + group];
                                let go = &g.row(base + i)[cols.clone()];
                                for j in 0..group {
                                    let vj = &vm.row(base + j)[cols.clone()];
                                    dp[j] = dot(go, vj);
                                    let dvj = &mut dv.row_mut(base + j)[cols.clone()];
                                    for (o, &x) in dvj.iter_mut().zip(go) {
                                        *o += p[j] * x;
                                    }
                                }
                                let s = dot(&dp, p);
                                for j in 0..group {
                                    let ds = p[j] * (dp[j] - s) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    let kj = &km.row(base + j)[cols.clone()];
                                    let dqi = &mut dq.row_mut(base + i)[cols.clone()];
                                    for (o, &x) in dqi.iter_mut().zip(kj) {
                                        *o += ds * x;
                                    }
                                    let qi = &qm.row(base + i)[cols.clone()];
                                    let dkj = &mut dk.row_mut(base + j)[cols.clone()];
                                    for (o, &x) in dkj.iter_mut().zip(qi) {
                                        *o += ds * x;
                                    }
                                }
                            }
                        }
                    }
                    acc(*q, dq);
                    acc(*k, dk);
                    acc(*v, dv);
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let scale = g.get(0, 0);
                    let mut d = probs.clone();
                    d[*target] -= 1.0;
                    d.iter_mut().for_each(|x| *x *= scale);
                    acc(*logits, Matrix::row_vector(d));
                }
            }
        }
        out
    }
}

/// Numerically stable softmax of `x` written into `out`.
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    softmax_into(x, &mut out);
    out
}
