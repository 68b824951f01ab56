//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and `backward` is a single reverse sweep.

use super::tensor::{gemm_strided, Tensor};
use crate::error::{Error, Result};

/// Lower bound applied to probabilities inside the cross-entropy log.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Mean(Var),
    Sum(Var),
    PopulationStd(Var),
    CrossEntropy(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    Clamp(Var, f64, f64),
    Reshape(Var),
    Concat(Var, Var),
    SliceRows(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Build it forward with the op methods, then call
/// [`Graph::backward`] on a scalar node.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

fn matrix_dims(op: &str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{op}: expected rank-2, got {s:?}"))),
    }
}

/// Row-wise softmax over the last axis, stabilized by max subtraction.
pub fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

/// Population standard deviation (divide by the slice length).
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Trainable leaf: receives a gradient from `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: gradients stop here.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn unary(&mut self, name: &str, a: Var, data: Vec<f64>, shape: Vec<usize>, op: Op) -> Result<Var> {
        check_finite(name, &data)?;
        let rg = self.grad_of(a);
        Ok(self.push(Tensor::from_parts(shape, data), op, rg))
    }

    fn binary(
        &mut self,
        name: &str,
        a: Var,
        b: Var,
        data: Vec<f64>,
        shape: Vec<usize>,
        op: Op,
    ) -> Result<Var> {
        check_finite(name, &data)?;
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(Tensor::from_parts(shape, data), op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.value(a))?;
        let (k2, n) = matrix_dims("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul: {m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_strided(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            0.0,
            &mut out,
        );
        self.binary("matmul", a, b, out, vec![m, n], Op::MatMul(a, b))
    }

    fn zip_with(&mut self, name: &str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.binary(name, a, b, data, shape, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`d` vector to every row of an `n×d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = matrix_dims("add_row", self.value(a))?;
        if self.value(row).len() != d {
            return Err(Error::Shape(format!(
                "add_row: row of {} for {n}x{d}",
                self.value(row).len()
            )));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(d) {
            for (x, &b) in chunk.iter_mut().zip(r) {
                *x += b;
            }
        }
        self.binary("add_row", a, row, data, vec![n, d], Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * s).collect();
        let shape = t.shape().to_vec();
        self.unary("scale", a, data, shape, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x + s).collect();
        let shape = t.shape().to_vec();
        self.unary("add_scalar", a, data, shape, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.unary("relu", a, data, shape, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| sigmoid(x)).collect();
        let shape = t.shape().to_vec();
        self.unary("sigmoid", a, data, shape, Op::Sigmoid(a))
    }

    /// Softmax over the last axis of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() > 2 || t.last_dim() < 2 {
            return Err(Error::Shape(format!(
                "softmax: need rank ≤ 2 with last extent ≥ 2, got {:?}",
                t.shape()
            )));
        }
        let data = softmax_rows(t.data(), t.last_dim());
        let shape = t.shape().to_vec();
        self.unary("softmax", a, data, shape, Op::Softmax(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.unary("mean", a, vec![m], vec![1], Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.unary("sum", a, vec![s], vec![1], Op::Sum(a))
    }

    /// Population std of each last-axis slice. Rank-1 input yields a
    /// length-1 tensor; an `n×C` matrix yields a length-`n` vector.
    pub fn population_std(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() > 2 || t.last_dim() < 2 {
            return Err(Error::Shape(format!(
                "population_std: need rank ≤ 2 with last extent ≥ 2, got {:?}",
                t.shape()
            )));
        }
        let c = t.last_dim();
        let data: Vec<f64> = t.data().chunks(c).map(population_std).collect();
        let n = data.len();
        self.unary("population_std", a, data, vec![n], Op::PopulationStd(a))
    }

    /// Mean over rows of `-ln(max(p[row, label], 1e-12))`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        let c = t.last_dim();
        if t.rank() > 2 || t.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "cross_entropy: {} labels for probs {:?}",
                labels.len(),
                t.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -t.row(r)[l].max(LOG_EPS).ln())
            .sum();
        let loss = total / labels.len() as f64;
        self.unary(
            "cross_entropy",
            probs,
            vec![loss],
            vec![1],
            Op::CrossEntropy(probs, labels.to_vec()),
        )
    }

    /// Picks `a[row, index[row]]` for every row.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let c = t.last_dim();
        if t.rows() != index.len() || index.iter().any(|&i| i >= c) {
            return Err(Error::Shape(format!(
                "gather: {} indices for {:?}",
                index.len(),
                t.shape()
            )));
        }
        let data: Vec<f64> = index.iter().enumerate().map(|(r, &i)| t.row(r)[i]).collect();
        let n = data.len();
        self.unary("gather", a, data, vec![n], Op::Gather(a, index.to_vec()))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x.clamp(lo, hi)).collect();
        let shape = t.shape().to_vec();
        self.unary("clamp", a, data, shape, Op::Clamp(a, lo, hi))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        let rg = self.grad_of(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Joins two matrices with equal row counts along columns.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, p) = matrix_dims("concat", self.value(a))?;
        let (n2, q) = matrix_dims("concat", self.value(b))?;
        if n != n2 {
            return Err(Error::Shape(format!("concat: {n} rows vs {n2} rows")));
        }
        let mut data = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            data.extend_from_slice(self.value(a).row(r));
            data.extend_from_slice(self.value(b).row(r));
        }
        self.binary("concat", a, b, data, vec![n, p + q], Op::Concat(a, b))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = matrix_dims("slice_rows", self.value(a))?;
        if len == 0 || start + len > n {
            return Err(Error::Shape(format!(
                "slice_rows: [{start}, {}) of {n} rows",
                start + len
            )));
        }
        let data = self.value(a).data()[start * d..(start + len) * d].to_vec();
        self.unary("slice_rows", a, data, vec![len, d], Op::SliceRows(a, start))
    }

    /// Reverse sweep from a scalar `root`. Every trainable leaf gets a
    /// gradient; leaves the root does not depend on get zeros.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::Shape(format!(
                "backward: root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let is_param = matches!(node.op, Op::Leaf) && node.requires_grad;
            if !is_param {
                out.push(None);
                continue;
            }
            let data = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
            check_finite("backward", &data)?;
            out.push(Some(Tensor::from_parts(node.value.shape().to_vec(), data)));
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let accumulate = |grads: &mut [Option<Vec<f64>>], var: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[var.0].requires_grad {
                return;
            }
            let slot = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.len()]);
            f(slot);
        };
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                // dA = dY · Bᵀ
                accumulate(grads, *a, &|g| {
                    gemm_strided(m, n, k, 1.0, dy, (n, 1), bv.data(), (1, n), 1.0, g)
                });
                // dB = Aᵀ · dY
                accumulate(grads, *b, &|g| {
                    gemm_strided(k, m, n, 1.0, av.data(), (1, k), dy, (n, 1), 1.0, g)
                });
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, &|g| add_into(g, dy));
                accumulate(grads, *b, &|g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, &|g| add_into(g, dy));
                accumulate(grads, *b, &|g| {
                    for (x, d) in g.iter_mut().zip(dy) {
                        *x -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                accumulate(grads, *a, &|g| {
                    for ((x, d), o) in g.iter_mut().zip(dy).zip(bv) {
                        *x += d * o;
                    }
                });
                accumulate(grads, *b, &|g| {
                    for ((x, d), o) in g.iter_mut().zip(dy).zip(av) {
                        *x += d * o;
                    }
                });
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, &|g| add_into(g, dy));
                let d = self.value(*row).len();
                accumulate(grads, *row, &|g| {
                    for chunk in dy.chunks(d) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::Scale(a, s) => accumulate(grads, *a, &|g| {
                for (x, d) in g.iter_mut().zip(dy) {
                    *x += s * d;
                }
            }),
            Op::AddScalar(a) | Op::Reshape(a) => accumulate(grads, *a, &|g| add_into(g, dy)),
            Op::Relu(a) => {
                let xv = self.value(*a).data();
                accumulate(grads, *a, &|g| {
                    for ((x, d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        if v > 0.0 {
                            *x += d;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => accumulate(grads, *a, &|g| {
                for ((x, d), &s) in g.iter_mut().zip(dy).zip(y) {
                    *x += d * s * (1.0 - s);
                }
            }),
            Op::Softmax(a) => {
                let c = node.value.last_dim();
                accumulate(grads, *a, &|g| {
                    for ((gr, dr), yr) in g.chunks_mut(c).zip(dy.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = dr.iter().zip(yr).map(|(d, s)| d * s).sum();
                        for ((x, d), s) in gr.iter_mut().zip(dr).zip(yr) {
                            *x += s * (d - dot);
                        }
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                accumulate(grads, *a, &|g| {
                    for x in g.iter_mut() {
                        *x += dy[0] / n;
                    }
                });
            }
            Op::Sum(a) => accumulate(grads, *a, &|g| {
                for x in g.iter_mut() {
                    *x += dy[0];
                }
            }),
            Op::PopulationStd(a) => {
                let xv = self.value(*a);
                let c = xv.last_dim();
                accumulate(grads, *a, &|g| {
                    for (r, (gr, xr)) in g.chunks_mut(c).zip(xv.data().chunks(c)).enumerate() {
                        let s = y[r];
                        if s == 0.0 {
                            continue;
                        }
                        let mean = xr.iter().sum::<f64>() / c as f64;
                        for (x, v) in gr.iter_mut().zip(xr) {
                            *x += dy[r] * (v - mean) / (c as f64 * s);
                        }
                    }
                });
            }
            Op::CrossEntropy(p, labels) => {
                let pv = self.value(*p);
                let c = pv.last_dim();
                let n = labels.len() as f64;
                accumulate(grads, *p, &|g| {
                    for (r, &l) in labels.iter().enumerate() {
                        let q = pv.row(r)[l];
                        if q > LOG_EPS {
                            g[r * c + l] -= dy[0] / (n * q);
                        }
                    }
                });
            }
            Op::Gather(a, index) => {
                let c = self.value(*a).last_dim();
                accumulate(grads, *a, &|g| {
                    for (r, &i) in index.iter().enumerate() {
                        g[r * c + i] += dy[r];
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let xv = self.value(*a).data();
                accumulate(grads, *a, &|g| {
                    for ((x, d), v) in g.iter_mut().zip(dy).zip(xv) {
                        if v >= lo && v <= hi {
                            *x += d;
                        }
                    }
                });
            }
            Op::Concat(a, b) => {
                let p = self.value(*a).shape()[1];
                let q = self.value(*b).shape()[1];
                accumulate(grads, *a, &|g| {
                    for (gr, dr) in g.chunks_mut(p).zip(dy.chunks(p + q)) {
                        add_into(gr, &dr[..p]);
                    }
                });
                accumulate(grads, *b, &|g| {
                    for (gr, dr) in g.chunks_mut(q).zip(dy.chunks(p + q)) {
                        add_into(gr, &dr[p..]);
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let d = node.value.last_dim();
                accumulate(grads, *a, &|g| {
                    add_into(&mut g[start * d..start * d + dy.len()], dy);
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (x, s) in dst.iter_mut().zip(src) {
        *x += s;
    }
}
