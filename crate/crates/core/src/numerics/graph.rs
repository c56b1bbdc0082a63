//! Tape-based reverse-mode differentiation over a closed set of tensor
//! primitives: matmul, elementwise arithmetic and nonlinearities, row
//! softmax, reductions, the Gaussian log-density and 1-D convolution.
//!
//! Shape misuse is a programming error and panics with the offending op.
//! Everything built from these primitives is differentiable, so the only
//! construction-time failures are non-scalar objectives and invalid
//! densities, which surface as [`Error`]s.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::rc::Rc;

use super::kernels::{mm_nn, mm_nt, mm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    SubCol(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sin(Var),
    Exp(Var),
    Square(Var),
    Powf(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, Rc<[usize]>),
    Sum(Var),
    MeanCols(Var),
    Reshape(Var),
    GaussianLogpdf { x: Var, mean: Var, variance: f64 },
    Conv1d { x: Var, w: Var },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation tape. Leaves may borrow parameter tensors for
/// the lifetime `'a`, so binding a model's weights costs no copies.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Result of [`Graph::backward`]: one optional gradient per node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`, zeros if `v` did not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(g) => Tensor::from_parts(shape, g),
            None => Tensor::zeros(&shape),
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        None => *slot = Some(contrib),
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Differentiable input owned by the graph.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Borrowed leaf; `requires_grad` selects whether backward reaches it.
    pub fn leaf_ref(&mut self, t: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(t), op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Returns a checked error if `v` holds a non-finite value.
    pub fn check_finite(&self, v: Var, context: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = dims2(self.value(a));
        let (k2, n) = dims2(self.value(b));
        assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
        let out = mm_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = dims2(self.value(a));
        let (n, k2) = dims2(self.value(b));
        assert_eq!(k, k2, "matmul_nt: inner dims {k} vs {k2}");
        let out = mm_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNT(a, b), rg)
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "{name}: lengths {} vs {}", ta.len(), tb.len());
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(shape, data), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&mut self, a: Var, r: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tr) = (self.value(a), self.value(r));
        let n = ta.cols();
        assert_eq!(tr.len(), n, "{name}: row vector len {} vs cols {n}", tr.len());
        let rv = tr.data();
        let data = ta.data().iter().enumerate().map(|(i, x)| f(*x, rv[i % n])).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(r);
        self.push(Tensor::from_parts(shape, data), op, rg)
    }

    /// `a[m,n] + r[n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        self.row_broadcast(a, r, "add_row", |x, y| x + y, Op::AddRow(a, r))
    }

    /// `a[m,n] * r[n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        self.row_broadcast(a, r, "mul_row", |x, y| x * y, Op::MulRow(a, r))
    }

    fn col_broadcast(&mut self, a: Var, c: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tc) = (self.value(a), self.value(c));
        let (m, n) = dims2(ta);
        assert_eq!(tc.len(), m, "{name}: column vector len {} vs rows {m}", tc.len());
        let cv = tc.data();
        let data = ta.data().iter().enumerate().map(|(i, x)| f(*x, cv[i / n])).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(c);
        self.push(Tensor::from_parts(shape, data), op, rg)
    }

    /// `a[m,n] - c[m]` broadcast over columns.
    pub fn sub_col(&mut self, a: Var, c: Var) -> Var {
        self.col_broadcast(a, c, "sub_col", |x, y| x - y, Op::SubCol(a, c))
    }

    /// `a[m,n] * c[m]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        self.col_broadcast(a, c, "mul_col", |x, y| x * y, Op::MulCol(a, c))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, |x| x.powf(p), Op::Powf(a, p))
    }

    /// Row-wise softmax. `mask`, when given, has one flag per entry; masked
    /// entries get probability exactly zero. Every row needs one open entry.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Var {
        let ta = self.value(a);
        let (m, n) = dims2(ta);
        if let Some(mk) = mask {
            assert_eq!(mk.len(), m * n, "softmax: mask size");
        }
        let x = ta.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let open = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if open(j) {
                    mx = mx.max(x[i * n + j]);
                }
            }
            assert!(mx > f64::NEG_INFINITY, "softmax: row {i} fully masked");
            let mut total = 0.0;
            for j in 0..n {
                if open(j) {
                    let e = (x[i * n + j] - mx).exp();
                    out[i * n + j] = e;
                    total += e;
                }
            }
            for j in 0..n {
                out[i * n + j] /= total;
            }
        }
        let shape = ta.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = dims2(ta);
        let x = ta.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        let shape = ta.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::LogSoftmax(a), rg)
    }

    /// Selects `a[i, idx[i]]` for each row `i`, giving a length-`m` vector.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Var {
        let ta = self.value(a);
        let (m, n) = dims2(ta);
        assert_eq!(idx.len(), m, "pick: {} indices for {m} rows", idx.len());
        let data = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < n, "pick: index {j} out of {n}");
                ta.data()[i * n + j]
            })
            .collect();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![m], data), Op::Pick(a, idx.into()), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean over the trailing dimension: `[m,n] -> [m]`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = dims2(ta);
        let data = (0..m).map(|i| ta.data()[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![m], data), Op::MeanCols(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshape(shape).expect("reshape: element count");
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg)
    }

    /// `Σᵢ [ −½ log(2π·variance) − (xᵢ − meanᵢ)² / (2·variance) ]`.
    pub fn gaussian_logpdf(&mut self, x: Var, mean: Var, variance: f64) -> Result<Var> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Domain(format!("variance must be positive, got {variance}")));
        }
        let (tx, tm) = (self.value(x), self.value(mean));
        if tx.len() != tm.len() {
            return Err(Error::shape(format!("gaussian_logpdf: {:?} vs {:?}", tx.shape(), tm.shape())));
        }
        let v = logpdf_normal_slices(tx.data(), tm.data(), variance);
        let rg = self.rg(x) || self.rg(mean);
        Ok(self.push(Tensor::scalar(v), Op::GaussianLogpdf { x, mean, variance }, rg))
    }

    /// Same-padded 1-D convolution. `x` is `[length, c_in]`, `w` is
    /// `[k, c_in, c_out]` with odd `k`; output is `[length, c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (len, cin) = dims2(tx);
        let ws = tw.shape();
        assert_eq!(ws.len(), 3, "conv1d: weight must be [k, c_in, c_out]");
        let (k, cin2, cout) = (ws[0], ws[1], ws[2]);
        assert_eq!(cin, cin2, "conv1d: channels {cin} vs {cin2}");
        assert!(k % 2 == 1, "conv1d: kernel size must be odd");
        let pad = k / 2;
        let (xd, wd) = (tx.data(), tw.data());
        let mut out = vec![0.0; len * cout];
        for l in 0..len {
            let orow = &mut out[l * cout..(l + 1) * cout];
            for r in 0..k {
                let src = l + r;
                if src < pad || src - pad >= len {
                    continue;
                }
                let src = src - pad;
                for c in 0..cin {
                    let xv = xd[src * cin + c];
                    let wrow = &wd[(r * cin + c) * cout..(r * cin + c + 1) * cout];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w);
        self.push(Tensor::from_parts(vec![len, cout], out), Op::Conv1d { x, w }, rg)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::NotDifferentiable(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        let n = out.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
        let out = &self.nodes[i].value;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], contrib);
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(val(*a));
                let n = val(*b).cols();
                if self.rg(*a) {
                    send(*a, mm_nt(g, val(*b).data(), m, n, k));
                }
                if self.rg(*b) {
                    send(*b, mm_tn(val(*a).data(), g, m, k, n));
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = dims2(val(*a));
                let n = val(*b).rows();
                if self.rg(*a) {
                    send(*a, mm_nn(g, val(*b).data(), m, n, k));
                }
                if self.rg(*b) {
                    send(*b, mm_tn(g, val(*a).data(), m, n, k));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a).data(), val(*b).data());
                send(*a, g.iter().zip(xb).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(xa).map(|(g, x)| g * x).collect());
            }
            Op::AddRow(a, r) => {
                send(*a, g.to_vec());
                if self.rg(*r) {
                    let n = val(*r).len();
                    let mut acc = vec![0.0; n];
                    for (idx, gv) in g.iter().enumerate() {
                        acc[idx % n] += gv;
                    }
                    send(*r, acc);
                }
            }
            Op::MulRow(a, r) => {
                let n = val(*r).len();
                let (xa, xr) = (val(*a).data(), val(*r).data());
                if self.rg(*a) {
                    send(*a, g.iter().enumerate().map(|(idx, gv)| gv * xr[idx % n]).collect());
                }
                if self.rg(*r) {
                    let mut acc = vec![0.0; n];
                    for (idx, gv) in g.iter().enumerate() {
                        acc[idx % n] += gv * xa[idx];
                    }
                    send(*r, acc);
                }
            }
            Op::SubCol(a, c) => {
                send(*a, g.to_vec());
                if self.rg(*c) {
                    let n = val(*a).cols();
                    let m = val(*c).len();
                    let mut acc = vec![0.0; m];
                    for (idx, gv) in g.iter().enumerate() {
                        acc[idx / n] -= gv;
                    }
                    send(*c, acc);
                }
            }
            Op::MulCol(a, c) => {
                let n = val(*a).cols();
                let (xa, xc) = (val(*a).data(), val(*c).data());
                if self.rg(*a) {
                    send(*a, g.iter().enumerate().map(|(idx, gv)| gv * xc[idx / n]).collect());
                }
                if self.rg(*c) {
                    let mut acc = vec![0.0; xc.len()];
                    for (idx, gv) in g.iter().enumerate() {
                        acc[idx / n] += gv * xa[idx];
                    }
                    send(*c, acc);
                }
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(a) => send(*a, g.to_vec()),
            Op::Relu(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Tanh(a) => {
                let y = out.data();
                send(*a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
            }
            Op::Sin(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| g * x.cos()).collect());
            }
            Op::Exp(a) => {
                let y = out.data();
                send(*a, g.iter().zip(y).map(|(g, y)| g * y).collect());
            }
            Op::Square(a) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect());
            }
            Op::Powf(a, p) => {
                let x = val(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| g * p * x.powf(p - 1.0)).collect());
            }
            Op::Softmax(a) => {
                let y = out.data();
                let (m, n) = dims2(out);
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(*a, dx);
            }
            Op::LogSoftmax(a) => {
                let y = out.data();
                let (m, n) = dims2(out);
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let gs: f64 = gr.iter().sum();
                    for j in 0..n {
                        dx[r * n + j] = gr[j] - y[r * n + j].exp() * gs;
                    }
                }
                send(*a, dx);
            }
            Op::Pick(a, idx) => {
                let n = val(*a).cols();
                let mut dx = vec![0.0; val(*a).len()];
                for (r, &j) in idx.iter().enumerate() {
                    dx[r * n + j] += g[r];
                }
                send(*a, dx);
            }
            Op::Sum(a) => send(*a, vec![g[0]; val(*a).len()]),
            Op::MeanCols(a) => {
                let n = val(*a).cols();
                send(*a, (0..val(*a).len()).map(|idx| g[idx / n] / n as f64).collect());
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::GaussianLogpdf { x, mean, variance } => {
                let (xv, mv) = (val(*x).data(), val(*mean).data());
                let resid: Vec<f64> = xv.iter().zip(mv).map(|(a, b)| (a - b) / variance * g[0]).collect();
                if self.rg(*mean) {
                    send(*mean, resid.clone());
                }
                if self.rg(*x) {
                    send(*x, resid.into_iter().map(|v| -v).collect());
                }
            }
            Op::Conv1d { x, w } => {
                let (tx, tw) = (val(*x), val(*w));
                let (len, cin) = dims2(tx);
                let (k, cout) = (tw.shape()[0], tw.shape()[2]);
                let pad = k / 2;
                let (xd, wd) = (tx.data(), tw.data());
                let mut dx = self.rg(*x).then(|| vec![0.0; xd.len()]);
                let mut dw = self.rg(*w).then(|| vec![0.0; wd.len()]);
                for l in 0..len {
                    let grow = &g[l * cout..(l + 1) * cout];
                    for r in 0..k {
                        let src = l + r;
                        if src < pad || src - pad >= len {
                            continue;
                        }
                        let src = src - pad;
                        for c in 0..cin {
                            let base = (r * cin + c) * cout;
                            let wrow = &wd[base..base + cout];
                            if let Some(dx) = dx.as_mut() {
                                dx[src * cin + c] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if let Some(dw) = dw.as_mut() {
                                let xv = xd[src * cin + c];
                                for (o, gv) in dw[base..base + cout].iter_mut().zip(grow) {
                                    *o += xv * gv;
                                }
                            }
                        }
                    }
                }
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                if let Some(dw) = dw {
                    send(*w, dw);
                }
            }
        }
    }
}

pub(crate) fn logpdf_normal_slices(x: &[f64], mean: &[f64], variance: f64) -> f64 {
    let norm = -0.5 * (2.0 * PI * variance).ln();
    x.iter().zip(mean).map(|(a, b)| norm - (a - b) * (a - b) / (2.0 * variance)).sum()
}

/// `Σᵢ [ −½ log(2π·variance) − (xᵢ − meanᵢ)² / (2·variance) ]`.
pub fn logpdf_normal(x: &Tensor, mean: &Tensor, variance: f64) -> Result<f64> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Domain(format!("variance must be positive, got {variance}")));
    }
    if x.shape() != mean.shape() {
        return Err(Error::shape(format!("logpdf_normal: {:?} vs {:?}", x.shape(), mean.shape())));
    }
    Ok(logpdf_normal_slices(x.data(), mean.data(), variance))
}
