//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends a
//! node holding its value and the parent handles needed by its adjoint rule,
//! so node `i` only ever refers to nodes `< i` and a single reverse sweep
//! visits every node once.
//!
//! Parameters are borrowed rather than copied: [`Tape::param`] records a
//! leaf pointing at the caller's tensor, and binding the same tensor twice
//! returns the same leaf so gradients from every use accumulate into it.
//!
//! ```
//! use mgmae::tape::Tape;
//! use mgmae::tensor::Tensor;
//!
//! let x = Tensor::vector(vec![3.0]);
//! let mut tape = Tape::new();
//! let v = tape.param(&x);
//! let sq = tape.mul(v, v).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(v).unwrap().data(), &[6.0]);
//! ```

use std::borrow::Cow;
use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    MatVec(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Mask(Var, Vec<f64>),
    LogSoftmax(Var),
    Softmax(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Row(Var, usize),
    GatherRows(Var, Vec<usize>),
    Select(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    bound: HashMap<*const Tensor, Var>,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a tracked leaf, or `None` if the loss
    /// does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax_values(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.tracked(v)
    }

    /// Records a gradient-tracked leaf that borrows `t`. Binding the same
    /// tensor again returns the existing leaf.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        let key = t as *const Tensor;
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            tracked: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.bound.insert(key, v);
        v
    }

    /// Leaf for a parameter tensor if it was bound on this tape.
    pub fn bound(&self, t: &Tensor) -> Option<Var> {
        self.bound.get(&(t as *const Tensor)).copied()
    }

    /// Gradient-tracked leaf that owns its value.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(a, b),
            tracked,
        ))
    }

    /// Matrix `[m × n]` times vector `[n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.ndim() != 2 || tx.ndim() != 1 || tw.cols() != tx.len() {
            return Err(shape_err("matvec", tw, tx));
        }
        let n = tw.cols();
        let xd = tx.data();
        let out: Vec<f64> = tw
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        let m = out.len();
        let tracked = self.tracked(w) || self.tracked(x);
        Ok(self.push(Tensor::from_parts(vec![m], out), Op::MatVec(w, x), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let d = ta.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::from_parts(vec![n, m], out),
            Op::Transpose(a),
            tracked,
        ))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let out: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = ta.shape().to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::from_parts(shape, out), op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|&x| f(x)).collect();
        let shape = ta.shape().to_vec();
        let tracked = self.tracked(a);
        self.push(Tensor::from_parts(shape, out), op, tracked)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self
            .value(a)
            .data()
            .iter()
            .find(|&&x| x <= 0.0 || x.is_nan())
        {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// Multiplies by a fixed elementwise mask; the mask is a constant.
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if mask.len() != ta.len() {
            return Err(Error::Shape {
                op: "mask",
                lhs: ta.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out: Vec<f64> = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = ta.shape().to_vec();
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mask(a, mask), tracked))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1 / (1 - p)`. With `rng = None` (evaluation) or `p = 0`
    /// the input handle is returned unchanged.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout rate {p} outside [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(a) };
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mask(a, mask)
    }

    /// Log-softmax of a 1-D tensor, using max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() != 1 {
            return Err(Error::Shape {
                op: "log_softmax",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let out = log_softmax_values(ta.data());
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::from_parts(vec![out.len()], out),
            Op::LogSoftmax(a),
            tracked,
        ))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() != 1 {
            return Err(Error::Shape {
                op: "softmax",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let m = ta.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = ta.data().iter().map(|v| (v - m).exp()).collect();
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= z);
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::from_parts(vec![out.len()], out),
            Op::Softmax(a),
            tracked,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    /// Concatenates 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.ndim() != 1 {
                return Err(shape_err("concat", self.value(parts[0]), t));
            }
            out.extend_from_slice(t.data());
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Tensor::from_parts(vec![out.len()], out),
            Op::Concat(parts.to_vec()),
            tracked,
        ))
    }

    /// Elements `start..start + len` of a 1-D tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() != 1 || len == 0 || start + len > ta.len() {
            return Err(Error::Shape {
                op: "slice",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let out = ta.data()[start..start + len].to_vec();
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::from_parts(vec![len], out),
            Op::Slice(a, start),
            tracked,
        ))
    }

    /// Stacks equal-length 1-D tensors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::contract("stack of zero rows"));
        }
        let first = self.value(rows[0]);
        if first.ndim() != 1 {
            return Err(shape_err("stack", first, first));
        }
        let n = first.len();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let t = self.value(r);
            if t.shape() != [n] {
                return Err(shape_err("stack", self.value(rows[0]), t));
            }
            out.extend_from_slice(t.data());
        }
        let tracked = rows.iter().any(|&r| self.tracked(r));
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), n], out),
            Op::Stack(rows.to_vec()),
            tracked,
        ))
    }

    /// Row `i` of a matrix as a 1-D tensor.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() != 2 || i >= ta.rows() {
            return Err(Error::Shape {
                op: "row",
                lhs: ta.shape().to_vec(),
                rhs: vec![i],
            });
        }
        let out = ta.row(i).to_vec();
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::from_parts(vec![out.len()], out),
            Op::Row(a, i),
            tracked,
        ))
    }

    /// Gathers rows `ids` of a `[V × D]` table into a `[T × D]` matrix.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.ndim() != 2 {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: tt.shape().to_vec(),
                rhs: vec![],
            });
        }
        if ids.is_empty() {
            return Err(Error::contract("gather_rows with no ids"));
        }
        let (v, d) = (tt.rows(), tt.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Vocabulary { id, size: v });
            }
            out.extend_from_slice(tt.row(id));
        }
        let tracked = self.tracked(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::GatherRows(table, ids.to_vec()),
            tracked,
        ))
    }

    /// Picks element `idx[n]` from row `n` of an `[N × V]` matrix.
    pub fn select(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if ta.ndim() != 2 || ta.rows() != idx.len() {
            return Err(Error::Shape {
                op: "select",
                lhs: ta.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut out = Vec::with_capacity(idx.len());
        for (n, &j) in idx.iter().enumerate() {
            if j >= ta.cols() {
                return Err(Error::contract(format!(
                    "select index {j} out of range for {} columns",
                    ta.cols()
                )));
            }
            out.push(ta.at(n, j));
        }
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::from_parts(vec![idx.len()], out),
            Op::Select(a, idx.to_vec()),
            tracked,
        ))
    }

    /// Inner product of two equal-shape tensors, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every node are summed
    /// over all of its uses.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.tracked(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc<F: FnOnce(&mut [f64])>(&self, grads: &mut [Option<Tensor>], v: Var, f: F) {
        if !self.tracked(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let t = slot.get_or_insert_with(|| Tensor::zeros(self.value(v).shape()));
        f(t.data_mut());
    }

    fn propagate(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G Bᵀ
                self.acc(grads, *a, |da| {
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            let grow = &gd[i * n..(i + 1) * n];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                // dB = Aᵀ G
                self.acc(grads, *b, |db| {
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                });
            }
            Op::MatVec(w, x) => {
                let (tw, tx) = (self.value(*w), self.value(*x));
                let n = tw.cols();
                self.acc(grads, *w, |dw| {
                    for (row, gv) in dw.chunks_exact_mut(n).zip(gd) {
                        for (d, xv) in row.iter_mut().zip(tx.data()) {
                            *d += gv * xv;
                        }
                    }
                });
                self.acc(grads, *x, |dx| {
                    for (row, gv) in tw.data().chunks_exact(n).zip(gd) {
                        for (d, wv) in dx.iter_mut().zip(row) {
                            *d += gv * wv;
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let ta = self.value(*a);
                let (m, n) = (ta.rows(), ta.cols());
                self.acc(grads, *a, |da| {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += gd[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_into(d, gd));
                self.acc(grads, *b, |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_into(d, gd));
                self.acc(grads, *b, |d| {
                    d.iter_mut().zip(gd).for_each(|(x, g)| *x -= g)
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |d| {
                    for ((x, g), bv) in d.iter_mut().zip(gd).zip(tb.data()) {
                        *x += g * bv;
                    }
                });
                self.acc(grads, *b, |d| {
                    for ((x, g), av) in d.iter_mut().zip(gd).zip(ta.data()) {
                        *x += g * av;
                    }
                });
            }
            Op::Scale(a, s) => {
                self.acc(grads, *a, |d| {
                    d.iter_mut().zip(gd).for_each(|(x, g)| *x += s * g)
                });
            }
            Op::Tanh(a) => self.acc(grads, *a, |d| {
                for ((x, g), yv) in d.iter_mut().zip(gd).zip(y) {
                    *x += g * (1.0 - yv * yv);
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |d| {
                for ((x, g), yv) in d.iter_mut().zip(gd).zip(y) {
                    *x += g * yv * (1.0 - yv);
                }
            }),
            Op::Exp(a) => self.acc(grads, *a, |d| {
                for ((x, g), yv) in d.iter_mut().zip(gd).zip(y) {
                    *x += g * yv;
                }
            }),
            Op::Log(a) => {
                let ta = self.value(*a);
                self.acc(grads, *a, |d| {
                    for ((x, g), xv) in d.iter_mut().zip(gd).zip(ta.data()) {
                        *x += g / xv;
                    }
                })
            }
            Op::Mask(a, mask) => self.acc(grads, *a, |d| {
                for ((x, g), m) in d.iter_mut().zip(gd).zip(mask) {
                    *x += g * m;
                }
            }),
            Op::LogSoftmax(a) => {
                let gsum: f64 = gd.iter().sum();
                self.acc(grads, *a, |d| {
                    for ((x, g), yv) in d.iter_mut().zip(gd).zip(y) {
                        *x += g - yv.exp() * gsum;
                    }
                })
            }
            Op::Softmax(a) => {
                let gy: f64 = gd.iter().zip(y).map(|(g, yv)| g * yv).sum();
                self.acc(grads, *a, |d| {
                    for ((x, g), yv) in d.iter_mut().zip(gd).zip(y) {
                        *x += yv * (g - gy);
                    }
                })
            }
            Op::Sum(a) => {
                let gv = gd[0];
                self.acc(grads, *a, |d| d.iter_mut().for_each(|x| *x += gv));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.acc(grads, *p, |d| add_into(d, &gd[off..off + n]));
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let n = gd.len();
                self.acc(grads, *a, |d| add_into(&mut d[*start..start + n], gd));
            }
            Op::Stack(rows) => {
                let n = g.cols();
                for (i, r) in rows.iter().enumerate() {
                    self.acc(grads, *r, |d| add_into(d, &gd[i * n..(i + 1) * n]));
                }
            }
            Op::Row(a, i) => {
                let n = gd.len();
                self.acc(grads, *a, |d| add_into(&mut d[i * n..(i + 1) * n], gd));
            }
            Op::GatherRows(table, ids) => {
                let n = g.cols();
                self.acc(grads, *table, |d| {
                    for (t, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * n..(id + 1) * n], &gd[t * n..(t + 1) * n]);
                    }
                });
            }
            Op::Select(a, idx) => {
                let cols = self.value(*a).cols();
                self.acc(grads, *a, |d| {
                    for (r, (&j, gv)) in idx.iter().zip(gd).enumerate() {
                        d[r * cols + j] += gv;
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
