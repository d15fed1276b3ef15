//! Reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node to the [`Tape`]; a node stores its value
//! and the ids of its parents, so node order is a topological order by
//! construction. [`Tape::backward`] seeds the scalar root with 1 and sweeps
//! the nodes in reverse, accumulating gradients into each parent.
//!
//! ```
//! use cat_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let root = tape.sum(sq);
//! let grads = tape.backward(root).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    Gelu(Var),
    Log(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Softmax { x: Var, outer: usize, axis_len: usize, inner: usize },
    MaskedSoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    CrossEntropy { logits: Var, targets: Tensor, probs: Vec<f64> },
    Sum(Var),
    SumRows(Var),
    MeanRows(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, index: Rc<[usize]> },
    FaultyIdentity(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of operations. Parents always precede children.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::dim(op, s, &[0, 0])),
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Row-wise softmax of `logits[row]`, honouring an optional keep-mask.
/// Masked entries get exactly zero weight.
fn softmax_slice(x: &[f64], keep: Option<&[bool]>, out: &mut [f64]) {
    let kept = |i: usize| keep.is_none_or(|m| m[i]);
    let max = x
        .iter()
        .enumerate()
        .filter(|(i, _)| kept(*i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (i, (o, &v)) in out.iter_mut().zip(x).enumerate() {
        *o = if kept(i) { (v - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = shape2(av, "matmul")?;
        let (k2, n) = shape2(bv, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(av.data(), bv.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(name, av.shape(), bv.shape()));
        }
        let value = av.zip_map(bv, f)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[m×n] + row[n]`, broadcasting the row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let (m, n) = shape2(xv, "add_row")?;
        if rv.len() != n {
            return Err(Error::dim("add_row", xv.shape(), rv.shape()));
        }
        let mut out = xv.data().to_vec();
        for r in out.chunks_mut(n) {
            for (o, &b) in r.iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddRow(x, row), &[x, row]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        self.push(value, Op::Gelu(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        self.push(value, Op::Log(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::sqrt);
        self.push(value, Op::Sqrt(x), &[x])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero wherever clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(x, lo, hi), &[x])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", shape, &[axis]));
        }
        let axis_len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let data = xv.data();
        let mut out = vec![0.0; data.len()];
        let mut buf = vec![0.0; axis_len];
        let mut res = vec![0.0; axis_len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                for a in 0..axis_len {
                    buf[a] = data[base + a * inner];
                }
                softmax_slice(&buf, None, &mut res);
                for a in 0..axis_len {
                    out[base + a * inner] = res[a];
                }
            }
        }
        let value = Tensor::from_parts(shape.to_vec(), out);
        Ok(self.push(
            value,
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            },
            &[x],
        ))
    }

    /// Softmax over each row of a 2-D tensor where `keep[i*n + j] == false`
    /// forces weight exactly zero. Every row must keep at least one entry.
    pub fn masked_softmax_rows(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = shape2(xv, "masked_softmax_rows")?;
        if let Some(k) = keep {
            if k.len() != m * n {
                return Err(Error::dim("masked_softmax_rows", xv.shape(), &[k.len()]));
            }
            if k.chunks(n).any(|r| !r.iter().any(|&b| b)) {
                return Err(Error::invalid("attention mask has a fully masked row"));
            }
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_slice(
                &xv.data()[i * n..(i + 1) * n],
                keep.map(|k| &k[i * n..(i + 1) * n]),
                &mut out[i * n..(i + 1) * n],
            );
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MaskedSoftmaxRows(x), &[x]))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::invalid("layer_norm eps must be positive"));
        }
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.len() != n || bv.len() != n {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv.data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Mean over rows of `−Σ_c target·log softmax(logits)`.
    ///
    /// Targets may be soft (mixup) but each row must sum to 1 within 1e-6.
    pub fn cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let lv = self.value(logits);
        let (m, c) = shape2(lv, "cross_entropy")?;
        if targets.shape() != lv.shape() {
            return Err(Error::dim("cross_entropy", lv.shape(), targets.shape()));
        }
        for (i, row) in targets.data().chunks(c).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|&t| t < 0.0) {
                return Err(Error::invalid(format!(
                    "target row {i} is not a distribution (sums to {s})"
                )));
            }
        }
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        for i in 0..m {
            let row = &lv.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                let logp = row[j] - lse;
                probs[i * c + j] = logp.exp();
                let t = targets.data()[i * c + j];
                if t != 0.0 {
                    loss -= t * logp;
                }
            }
        }
        let value = Tensor::scalar(loss / m as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.clone(),
                probs,
            },
            &[logits],
        ))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Sum of all entries accumulated in ascending order, so the result does
    /// not depend on the order the entries are laid out in.
    pub fn sum_sorted(&mut self, x: Var) -> Var {
        let mut vals = self.value(x).data().to_vec();
        vals.sort_by(f64::total_cmp);
        let s = vals.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `[m×n] → [m]`: sum across each row.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, _) = shape2(xv, "sum_rows")?;
        let (_, n) = xv.dims2();
        let out: Vec<f64> = xv.data().chunks(n).map(|r| r.iter().sum()).collect();
        Ok(self.push(Tensor::from_parts(vec![m], out), Op::SumRows(x), &[x]))
    }

    /// `[m×n] → [1×n]`: mean over the row axis.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = shape2(xv, "mean_rows")?;
        let mut out = vec![0.0; n];
        for r in xv.data().chunks(n) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        Ok(self.push(Tensor::from_parts(vec![1, n], out), Op::MeanRows(x), &[x]))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = shape2(xv, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::dim("slice_cols", xv.shape(), &[start, len]));
        }
        let mut out = Vec::with_capacity(m * len);
        for r in xv.data().chunks(n) {
            out.extend_from_slice(&r[start..start + len]);
        }
        Ok(self.push(Tensor::from_parts(vec![m, len], out), Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let (m, _) = shape2(self.value(*first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = shape2(self.value(p), "concat_cols")?;
            if pm != m {
                return Err(Error::dim("concat_cols", self.value(*first).shape(), self.value(p).shape()));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks 2-D tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let (_, n) = shape2(self.value(*first), "concat_rows")?;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let pv = self.value(p);
            let (pm, pn) = shape2(pv, "concat_rows")?;
            if pn != n {
                return Err(Error::dim("concat_rows", self.value(*first).shape(), pv.shape()));
            }
            out.extend_from_slice(pv.data());
            m += pm;
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Row `i` of the output is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = shape2(xv, "gather_rows")?;
        if index.iter().any(|&i| i >= m) {
            return Err(Error::invalid(format!("gather index out of range for {m} rows")));
        }
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index {
            out.extend_from_slice(&xv.data()[i * n..(i + 1) * n]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![index.len(), n], out),
            Op::GatherRows {
                x,
                index: index.into(),
            },
            &[x],
        ))
    }

    /// Identity whose backward pass doubles the gradient. Exists only so the
    /// gradient checker can be shown to catch a wrong derivative.
    #[doc(hidden)]
    pub fn faulty_identity(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::FaultyIdentity(x), &[x])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
                .collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !wants(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = av.dims2();
                let (_, n) = bv.dims2();
                acc(*a, &mut |s| kernels::matmul_nt(g, bv.data(), s, m, n, k));
                acc(*b, &mut |s| kernels::matmul_tn(av.data(), g, s, k, m, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(o, d)| *o -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |s| {
                    for ((o, d), y) in s.iter_mut().zip(g).zip(bv) {
                        *o += d * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((o, d), x) in s.iter_mut().zip(g).zip(av) {
                        *o += d * x;
                    }
                });
            }
            Op::AddRow(x, row) => {
                let n = nodes[row.0].value.len();
                acc(*x, &mut |s| add_into(s, g));
                acc(*row, &mut |s| {
                    for r in g.chunks(n) {
                        add_into(s, r);
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(o, d)| *o += c * d)),
            Op::Transpose(x) => {
                let (m, n) = nodes[x.0].value.dims2();
                acc(*x, &mut |s| {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(x) | Op::FaultyIdentity(x) => {
                let factor = if matches!(node.op, Op::FaultyIdentity(_)) { 2.0 } else { 1.0 };
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(o, d)| *o += factor * d));
            }
            Op::Gelu(x) => {
                let xv = nodes[x.0].value.data();
                acc(*x, &mut |s| {
                    for ((o, d), &v) in s.iter_mut().zip(g).zip(xv) {
                        *o += d * gelu_grad(v);
                    }
                });
            }
            Op::Log(x) => {
                let xv = nodes[x.0].value.data();
                acc(*x, &mut |s| {
                    for ((o, d), &v) in s.iter_mut().zip(g).zip(xv) {
                        *o += d / v;
                    }
                });
            }
            Op::Sqrt(x) => {
                let y = node.value.data();
                acc(*x, &mut |s| {
                    for ((o, d), &r) in s.iter_mut().zip(g).zip(y) {
                        if r > 0.0 {
                            *o += d / (2.0 * r);
                        }
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xv = nodes[x.0].value.data();
                acc(*x, &mut |s| {
                    for ((o, d), &v) in s.iter_mut().zip(g).zip(xv) {
                        if v > *lo && v < *hi {
                            *o += d;
                        }
                    }
                });
            }
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            } => {
                let y = node.value.data();
                let (outer, axis_len, inner) = (*outer, *axis_len, *inner);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * axis_len * inner + i;
                            let dot: f64 = (0..axis_len)
                                .map(|a| y[base + a * inner] * g[base + a * inner])
                                .sum();
                            for a in 0..axis_len {
                                let idx = base + a * inner;
                                s[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmaxRows(x) => {
                let y = node.value.data();
                let (_, n) = node.value.dims2();
                acc(*x, &mut |s| {
                    for ((srow, yrow), grow) in s.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = nodes[gain.0].value.len();
                let gv = nodes[gain.0].value.data();
                acc(*x, &mut |s| {
                    for (i, r) in rstd.iter().enumerate() {
                        let rows = i * n..(i + 1) * n;
                        let (gr, hr) = (&g[rows.clone()], &xhat[rows.clone()]);
                        let dh: Vec<f64> = gr.iter().zip(gv).map(|(d, w)| d * w).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dhh = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for (j, o) in s[rows].iter_mut().enumerate() {
                            *o += r * (dh[j] - mean_dh - hr[j] * mean_dhh);
                        }
                    }
                });
                acc(*gain, &mut |s| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            s[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |s| {
                    for gr in g.chunks(n) {
                        add_into(s, gr);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (m, c) = targets.dims2();
                let scale = g[0] / m as f64;
                acc(*logits, &mut |s| {
                    for i in 0..m {
                        let t = &targets.data()[i * c..(i + 1) * c];
                        let mass: f64 = t.iter().sum();
                        for j in 0..c {
                            s[i * c + j] += scale * (probs[i * c + j] * mass - t[j]);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|o| *o += g[0])),
            Op::SumRows(x) => {
                let (_, n) = nodes[x.0].value.dims2();
                acc(*x, &mut |s| {
                    for (srow, d) in s.chunks_mut(n).zip(g) {
                        srow.iter_mut().for_each(|o| *o += d);
                    }
                });
            }
            Op::MeanRows(x) => {
                let (m, n) = nodes[x.0].value.dims2();
                acc(*x, &mut |s| {
                    for srow in s.chunks_mut(n) {
                        for (o, d) in srow.iter_mut().zip(g) {
                            *o += d / m as f64;
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let (_, n) = nodes[x.0].value.dims2();
                let (_, w) = node.value.dims2();
                acc(*x, &mut |s| {
                    for (srow, grow) in s.chunks_mut(n).zip(g.chunks(w)) {
                        add_into(&mut srow[*start..*start + w], grow);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, n) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = nodes[p.0].value.dims2();
                    acc(p, &mut |s| {
                        for i in 0..m {
                            add_into(&mut s[i * w..(i + 1) * w], &g[i * n + offset..i * n + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    acc(p, &mut |s| add_into(s, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::GatherRows { x, index } => {
                let (_, n) = nodes[x.0].value.dims2();
                acc(*x, &mut |s| {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut s[i * n..(i + 1) * n], &g[r * n..(r + 1) * n]);
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
