//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its primal value and the parents
//! needed for the backward rule. Nodes are created in topological order, so
//! the backward pass is a single reverse sweep.

use super::tensor::{matmul_raw, transpose_raw, Tensor};
use crate::error::{Error, Result};

/// Probability clamp used by [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-7;
const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Tensor),
    /// Elementwise map with the derivative cached at forward time.
    Pointwise(Var, Vec<f64>),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    Transpose(Var),
    Scan(Var, Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Tensor, Vec<f64>),
    Bce(Var, Tensor, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// Single-threaded recording of primal operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// Sum `g` (shape `out`) down to shape `(r, c)` along broadcast axes.
fn reduce_to(g: &[f64], out: (usize, usize), r: usize, c: usize) -> Vec<f64> {
    if out == (r, c) {
        return g.to_vec();
    }
    let mut red = vec![0.0; r * c];
    for i in 0..out.0 {
        let ri = if r == 1 { 0 } else { i };
        for j in 0..out.1 {
            let cj = if c == 1 { 0 } else { j };
            red[ri * c + cj] += g[i * out.1 + j];
        }
    }
    red
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            left: self.shape_of(a),
            right: self.shape_of(b),
        }
    }

    /// Leaf node (parameter or input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Constant input; identical to a leaf whose gradient is ignored.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims(self.value(a));
        let (k2, m) = dims(self.value(b));
        if k != k2 {
            return Err(self.dim_err("matmul", a, b));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        Ok(self.push(Tensor::matrix(n, m, out), Op::MatMul(a, b)))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ar, ac) = dims(self.value(a));
        let (br, bc) = dims(self.value(b));
        let (r, c) = match (broadcast_dim(ar, br), broadcast_dim(ac, bc)) {
            (Some(r), Some(c)) => (r, c),
            _ => return Err(self.dim_err(name, a, b)),
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let ai = if ar == 1 { 0 } else { i };
            let bi = if br == 1 { 0 } else { i };
            for j in 0..c {
                let aj = if ac == 1 { 0 } else { j };
                let bj = if bc == 1 { 0 } else { j };
                out.push(f(av[ai * ac + aj], bv[bi * bc + bj]));
            }
        }
        let shape = if (ar, ac) == (r, c) {
            self.shape_of(a)
        } else if (br, bc) == (r, c) {
            self.shape_of(b)
        } else {
            vec![r, c]
        };
        Tensor::new(shape, out)
    }

    /// Elementwise sum; size-1 axes broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    /// `a + c` for a constant of the same shape.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(Error::Dimension {
                op: "add_const",
                left: self.shape_of(a),
                right: c.shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(c.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape_of(a), data)?;
        Ok(self.push(t, Op::AddConst(a)))
    }

    /// `a * c` elementwise for a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(Error::Dimension {
                op: "mul_const",
                left: self.shape_of(a),
                right: c.shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(c.data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape_of(a), data)?;
        Ok(self.push(t, Op::MulConst(a, c.clone())))
    }

    /// Elementwise map `f` with derivative `df`.
    pub fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let deriv = x.data().iter().map(|&v| df(v)).collect();
        let t = x.map(f);
        self.push(t, Op::Pointwise(a, deriv))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, |x| {
            let s = sigmoid(x);
            s * (1.0 - s)
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, |x| {
            let t = x.tanh();
            1.0 - t * t
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, gelu_grad)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, |x| 2.0 * x)
    }

    /// Clamp into `[lo, hi]`; zero gradient outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(
            a,
            move |x| x.clamp(lo, hi),
            move |x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = dims(x);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c.max(1)).take(r) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let t = Tensor::new(self.shape_of(a), out).expect("softmax shape");
        self.push(t, Op::Softmax(a))
    }

    /// Layer normalization over the last axis, without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = dims(x);
        let mut out = x.data().to_vec();
        let mut inv_std = Vec::with_capacity(r);
        for row in out.chunks_mut(c.max(1)).take(r) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::new(self.shape_of(a), out).expect("layer_norm shape");
        self.push(t, Op::LayerNorm(a, inv_std))
    }

    /// Concatenate along the last axis; all parts must share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = dims(self.value(parts[0])).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = dims(self.value(p));
            if r != rows {
                return Err(self.dim_err("concat_cols", parts[0], p));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        Ok(self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec())))
    }

    /// Concatenate along the first axis; all parts must share the column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = dims(self.value(parts[0])).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = dims(self.value(p));
            if c != cols {
                return Err(self.dim_err("concat_rows", parts[0], p));
            }
            out.extend_from_slice(self.value(p).data());
            rows += r;
        }
        Ok(self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if start + len > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: self.shape_of(a),
                right: vec![start, len],
            });
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&x.row_slice(i)[start..start + len]);
        }
        Ok(self.push(Tensor::matrix(r, len, out), Op::SliceCols(a, start)))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let r = dims(self.value(a)).0;
        if start + len > r {
            return Err(Error::Dimension {
                op: "slice_rows",
                left: self.shape_of(a),
                right: vec![start, len],
            });
        }
        self.select_rows(a, &(start..start + len).collect::<Vec<_>>())
    }

    /// Gather rows by index (indices may repeat).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Dimension {
                op: "select_rows",
                left: self.shape_of(a),
                right: vec![bad],
            });
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(x.row_slice(i));
        }
        Ok(self.push(
            Tensor::matrix(idx.len(), c, out),
            Op::SelectRows(a, idx.to_vec()),
        ))
    }

    /// Gather elements by flat row-major index into a column.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let n = self.value(a).len();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Dimension {
                op: "gather",
                left: self.shape_of(a),
                right: vec![bad],
            });
        }
        let x = self.value(a).data();
        let out = idx.iter().map(|&i| x[i]).collect();
        Ok(self.push(Tensor::column(out), Op::Gather(a, idx.to_vec())))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = dims(self.value(a));
        let out = transpose_raw(self.value(a).data(), r, c);
        self.push(Tensor::matrix(c, r, out), Op::Transpose(a))
    }

    /// Diagonal linear recurrence along the first (time) axis:
    /// `h[t] = a[t] * h[t-1] + b[t]` with `h[-1] = 0`.
    pub fn scan(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.dim_err("scan", a, b));
        }
        let (n, c) = dims(self.value(a));
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut h = vec![0.0; n * c];
        for t in 0..n {
            for j in 0..c {
                let prev = if t == 0 { 0.0 } else { h[(t - 1) * c + j] };
                h[t * c + j] = av[t * c + j] * prev + bv[t * c + j];
            }
        }
        Ok(self.push(Tensor::matrix(n, c, h), Op::Scan(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.sum() / x.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Mean squared error over rows with nonzero `row_weight`, averaged over
    /// included elements.
    pub fn mse(&mut self, pred: Var, target: &Tensor, row_mask: Option<&[bool]>) -> Result<Var> {
        let weights = self.row_weights("mse", pred, target, row_mask)?;
        let p = self.value(pred);
        let c = p.cols();
        let denom: f64 = weights.iter().sum::<f64>() * c as f64;
        let mut s = 0.0;
        for (i, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for j in 0..c {
                let d = p.get(i, j) - target.get(i, j);
                s += d * d;
            }
        }
        let v = if denom > 0.0 { s / denom } else { 0.0 };
        Ok(self.push(Tensor::scalar(v), Op::Mse(pred, target.clone(), weights)))
    }

    /// Mean binary cross-entropy of probabilities `prob` against `{0,1}`
    /// targets; probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, prob: Var, target: &Tensor, row_mask: Option<&[bool]>) -> Result<Var> {
        let weights = self.row_weights("bce", prob, target, row_mask)?;
        let p = self.value(prob);
        let c = p.cols();
        let denom: f64 = weights.iter().sum::<f64>() * c as f64;
        let mut s = 0.0;
        for (i, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for j in 0..c {
                s += bce_term(p.get(i, j), target.get(i, j));
            }
        }
        let v = if denom > 0.0 { s / denom } else { 0.0 };
        Ok(self.push(Tensor::scalar(v), Op::Bce(prob, target.clone(), weights)))
    }

    fn row_weights(
        &self,
        op: &'static str,
        pred: Var,
        target: &Tensor,
        row_mask: Option<&[bool]>,
    ) -> Result<Vec<f64>> {
        let p = self.value(pred);
        if dims(p) != dims(target) {
            return Err(Error::Dimension {
                op,
                left: p.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let rows = p.rows();
        match row_mask {
            Some(m) if m.len() != rows => Err(Error::Dimension {
                op,
                left: p.shape().to_vec(),
                right: vec![m.len()],
            }),
            Some(m) => Ok(m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()),
            None => Ok(vec![1.0; rows]),
        }
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape_of(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.shape_of(loss), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (n, k) = dims(av);
                let m = bv.cols();
                let bt = transpose_raw(bv.data(), k, m);
                let ga = matmul_raw(gd, &bt, n, m, k);
                let at = transpose_raw(av.data(), n, k);
                let gb = matmul_raw(&at, gd, k, n, m);
                accumulate(grads, *a, av.shape(), ga);
                accumulate(grads, *b, bv.shape(), gb);
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let out = dims(&node.value);
                let av = self.value(*a);
                let bv = self.value(*b);
                let (ar, ac) = dims(av);
                let (br, bc) = dims(bv);
                let (ga, gb): (Vec<f64>, Vec<f64>) = match &node.op {
                    Op::Add(..) => (gd.to_vec(), gd.to_vec()),
                    Op::Sub(..) => (gd.to_vec(), gd.iter().map(|v| -v).collect()),
                    _ => {
                        let mut ga = vec![0.0; gd.len()];
                        let mut gb = vec![0.0; gd.len()];
                        for i in 0..out.0 {
                            let ai = if ar == 1 { 0 } else { i };
                            let bi = if br == 1 { 0 } else { i };
                            for j in 0..out.1 {
                                let aj = if ac == 1 { 0 } else { j };
                                let bj = if bc == 1 { 0 } else { j };
                                let o = i * out.1 + j;
                                ga[o] = gd[o] * bv.data()[bi * bc + bj];
                                gb[o] = gd[o] * av.data()[ai * ac + aj];
                            }
                        }
                        (ga, gb)
                    }
                };
                accumulate(grads, *a, av.shape(), reduce_to(&ga, out, ar, ac));
                accumulate(grads, *b, bv.shape(), reduce_to(&gb, out, br, bc));
            }
            Op::Scale(a, s) => {
                let ga = gd.iter().map(|v| v * s).collect();
                accumulate(grads, *a, self.value(*a).shape(), ga);
            }
            Op::AddConst(a) => {
                accumulate(grads, *a, self.value(*a).shape(), gd.to_vec());
            }
            Op::MulConst(a, c) => {
                let ga = gd.iter().zip(c.data()).map(|(g, c)| g * c).collect();
                accumulate(grads, *a, self.value(*a).shape(), ga);
            }
            Op::Pointwise(a, deriv) => {
                let ga = gd.iter().zip(deriv).map(|(g, d)| g * d).collect();
                accumulate(grads, *a, self.value(*a).shape(), ga);
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let (r, c) = dims(&node.value);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let dot: f64 = gd[row.clone()].iter().zip(&y[row.clone()]).map(|(g, y)| g * y).sum();
                    for o in row {
                        ga[o] = y[o] * (gd[o] - dot);
                    }
                }
                accumulate(grads, *a, self.value(*a).shape(), ga);
            }
            Op::LayerNorm(a, inv_std) => {
                let y = node.value.data();
                let (r, c) = dims(&node.value);
                let cf = c as f64;
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let mg: f64 = gd[row.clone()].iter().sum::<f64>() / cf;
                    let mgy: f64 = gd[row.clone()].iter().zip(&y[row.clone()]).map(|(g, y)| g * y).sum::<f64>() / cf;
                    for o in row {
                        ga[o] = inv_std[i] * (gd[o] - mg - y[o] * mgy);
                    }
                }
                accumulate(grads, *a, self.value(*a).shape(), ga);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    let mut gp = Vec::with_capacity(rows * pc);
                    for i in 0..rows {
                        gp.extend_from_slice(&gd[i * total + offset..i * total + offset + pc]);
                    }
                    accumulate(grads, p, self.value(p).shape(), gp);
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    accumulate(grads, p, self.value(p).shape(), gd[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (r, c) = dims(av);
                let len = node.value.cols();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                accumulate(grads, *a, av.shape(), ga);
            }
            Op::SelectRows(a, idx) => {
                let av = self.value(*a);
                let (r, c) = dims(av);
                let mut ga = vec![0.0; r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        ga[i * c + j] += gd[k * c + j];
                    }
                }
                accumulate(grads, *a, av.shape(), ga);
            }
            Op::Gather(a, idx) => {
                let av = self.value(*a);
                let mut ga = vec![0.0; av.len()];
                for (k, &i) in idx.iter().enumerate() {
                    ga[i] += gd[k];
                }
                accumulate(grads, *a, av.shape(), ga);
            }
            Op::Transpose(a) => {
                let (r, c) = dims(&node.value);
                let ga = transpose_raw(gd, r, c);
                accumulate(grads, *a, self.value(*a).shape(), ga);
            }
            Op::Scan(a, b) => {
                let av = self.value(*a).data();
                let h = node.value.data();
                let (n, c) = dims(&node.value);
                let mut ga = vec![0.0; n * c];
                let mut gb = vec![0.0; n * c];
                for j in 0..c {
                    let mut carry = 0.0;
                    for t in (0..n).rev() {
                        let o = t * c + j;
                        let total = gd[o] + carry;
                        gb[o] = total;
                        ga[o] = if t == 0 { 0.0 } else { total * h[o - c] };
                        carry = total * av[o];
                    }
                }
                accumulate(grads, *a, self.value(*a).shape(), ga);
                accumulate(grads, *b, self.value(*b).shape(), gb);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, av.shape(), vec![gd[0]; av.len()]);
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let v = gd[0] / av.len().max(1) as f64;
                accumulate(grads, *a, av.shape(), vec![v; av.len()]);
            }
            Op::Mse(p, target, weights) => {
                let pv = self.value(*p);
                let c = pv.cols();
                let denom: f64 = weights.iter().sum::<f64>() * c as f64;
                let mut gp = vec![0.0; pv.len()];
                if denom > 0.0 {
                    for (i, w) in weights.iter().enumerate() {
                        for j in 0..c {
                            let o = i * c + j;
                            gp[o] = gd[0] * w * 2.0 * (pv.data()[o] - target.data()[o]) / denom;
                        }
                    }
                }
                accumulate(grads, *p, pv.shape(), gp);
            }
            Op::Bce(p, target, weights) => {
                let pv = self.value(*p);
                let c = pv.cols();
                let denom: f64 = weights.iter().sum::<f64>() * c as f64;
                let mut gp = vec![0.0; pv.len()];
                if denom > 0.0 {
                    for (i, w) in weights.iter().enumerate() {
                        for j in 0..c {
                            let o = i * c + j;
                            let x = pv.data()[o];
                            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&x) {
                                continue;
                            }
                            let y = target.data()[o];
                            gp[o] = gd[0] * w * (-(y / x) + (1.0 - y) / (1.0 - x)) / denom;
                        }
                    }
                }
                accumulate(grads, *p, pv.shape(), gp);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape"));
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Per-element binary cross-entropy with the probability clamp applied.
pub fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}
