//! Wengert-list reverse mode. Every op appends a node; `backward` walks the
//! list once in reverse.

use crate::tensor::{self, Mask, Tensor};
use crate::{Gradients, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    MeanRows(Var),
    SumAll(Var),
    SelectRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Nll(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
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

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.params.get(*id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Tensor::zeros(0, 0), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_bt(self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Broadcasts the `1 x c` row `b` over every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add_row(self.value(b));
        self.push(v, Op::AddRow(a, b))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(tensor::sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(tensor::gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Row-wise softmax over visible entries; masked entries are exactly zero.
    pub fn softmax(&mut self, a: Var, mask: &Mask) -> Var {
        let v = tensor::masked_softmax_rows(self.value(a), mask);
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = tensor::log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (out, xhat, inv_std) =
            tensor::layer_norm_rows(self.value(x), self.value(gamma), self.value(beta));
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Gathers rows by index; indices may repeat.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select_rows(idx);
        self.push(v, Op::SelectRows(a, idx.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&vals);
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&vals);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// `-Σ_i logp[i, targets[i]]` as a scalar.
    pub fn nll(&mut self, logp: Var, targets: &[usize]) -> Var {
        let lp = self.value(logp);
        assert_eq!(lp.rows(), targets.len(), "nll target count");
        let v: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -lp.get(i, t))
            .sum();
        self.push(Tensor::scalar(v), Op::Nll(logp, targets.to_vec()))
    }

    /// Squared Euclidean norm of all entries.
    pub fn sq_norm(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        self.sum(sq)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::new(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_bt(self.value(*b));
                    let gb = self.value(*a).matmul_at(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let ga = g.matmul(self.value(*b));
                    let gb = g.matmul_at(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, column_sums(&g));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.map(|x| x * c)),
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| x * tensor::gelu_grad(y));
                    acc(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |x, y| x * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let mut ga = Tensor::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let pr = p.row(r);
                        let gr = g.row(r);
                        let inner = tensor::dot(pr, gr);
                        for (o, (pv, gv)) in ga.row_mut(r).iter_mut().zip(pr.iter().zip(gr)) {
                            *o = pv * (gv - inner);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let lp = &node.value;
                    let mut ga = Tensor::zeros(lp.rows(), lp.cols());
                    for r in 0..lp.rows() {
                        let gr = g.row(r);
                        let gsum: f64 = gr.iter().sum();
                        for (o, (l, gv)) in ga.row_mut(r).iter_mut().zip(lp.row(r).iter().zip(gr)) {
                            *o = gv - l.exp() * gsum;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gam = self.value(*gamma);
                    let c = xhat.cols();
                    let n = c as f64;
                    let mut gx = Tensor::zeros(xhat.rows(), c);
                    let mut ggamma = Tensor::zeros(1, c);
                    let gbeta = column_sums(&g);
                    for r in 0..xhat.rows() {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..c {
                            let dh = gr[j] * gam.get(0, j);
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                            ggamma.data_mut()[j] += gr[j] * hr[j];
                        }
                        let is = inv_std[r];
                        let out = gx.row_mut(r);
                        for j in 0..c {
                            let dh = gr[j] * gam.get(0, j);
                            out[j] = is / n * (n * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    let scale = 1.0 / rows as f64;
                    for r in 0..rows {
                        for (o, gv) in ga.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o = gv * scale;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let (rows, cols) = self.shape(*a);
                    acc(&mut grads, *a, Tensor::filled(rows, cols, g.item()));
                }
                Op::SelectRows(a, idx) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, gv) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += gv;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let r = self.shape(*p).0;
                        acc(&mut grads, *p, g.slice_rows(start, start + r));
                        start += r;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let c = self.shape(*p).1;
                        acc(&mut grads, *p, g.slice_cols(start, start + c));
                        start += c;
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Nll(a, targets) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    let s = g.item();
                    for (r, &t) in targets.iter().enumerate() {
                        ga.set(r, t, -s);
                    }
                    acc(&mut grads, *a, ga);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}
