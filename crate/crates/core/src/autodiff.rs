//! Tape-based reverse-mode automatic differentiation over small dense
//! matrices.
//!
//! A [`Graph`] records every operation as it is evaluated. Node ids are
//! handed out in creation order, so the tape is topologically sorted by
//! construction and [`Graph::backward`] is a single reverse sweep.
//!
//! Tensors are treated as matrices whose row length is the last dimension.
//! Only the operations the few-shot heads need are provided; there is no
//! general broadcasting.
//!
//! ```
//! use fewshot_core::autodiff::Graph;
//! use fewshot_core::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.param(&Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.wrt(x), vec![6.0]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Graph`].
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
    /// `[a, b, rest] -> [b, a, rest]`
    SwapAxes {
        x: Var,
        a: usize,
        b: usize,
        rest: usize,
    },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Recip(Var),
    Relu(Var),
    Sigmoid(Var),
    LnClamped(Var, f64),
    SoftmaxRows(Var),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    NormalizeRows(Var),
    SquashRows(Var),
    PairwiseSqDist(Var, Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    tracked: bool,
}

impl Node {
    fn rows_cols(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("non-empty shape");
        (self.value.len() / cols, cols)
    }
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, tracked: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).tracked)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// A leaf whose gradient is computed by [`Graph::backward`].
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// A leaf that tracks gradients only when `t.requires_grad()` is set.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        if t.requires_grad() {
            self.param(t)
        } else {
            self.constant(t)
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph node shape")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = tensor::mm(self.value(a), self.value(b), m, k, n);
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), tracked))
    }

    /// Swaps the two leading axes: `[a, b, ...] -> [b, a, ...]`.
    pub fn swap_axes(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("swap_axes", &shape, &[0, 0]));
        }
        let (a, b) = (shape[0], shape[1]);
        let rest: usize = shape[2..].iter().product();
        let out = swap_blocks(self.value(x), a, b, rest);
        let mut new_shape = shape.clone();
        new_shape.swap(0, 1);
        let tracked = self.tracked(&[x]);
        Ok(self.push(new_shape, out, Op::SwapAxes { x, a, b, rest }, tracked))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.matrix_dims(x, "transpose")?;
        self.swap_axes(x)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = self.value(x).to_vec();
        let tracked = self.tracked(&[x]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), tracked))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(&[a, b]);
        self.push(shape, out, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x]);
        self.push(shape, out, op, tracked)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::Scale(x, c), |v| c * v)
    }

    /// Adds a length-`n` vector to every row of an `[.., n]` tensor.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, cols) = self.node(x).rows_cols();
        if self.value(row).len() != cols {
            return Err(Error::shape("add_row", self.shape(x), self.shape(row)));
        }
        let r = self.value(row);
        let out = self
            .value(x)
            .chunks(cols)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x, row]);
        Ok(self.push(shape, out, Op::AddRow(x, row), tracked))
    }

    /// Multiplies row `i` of an `[.., n]` tensor by `s[i]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (rows, cols) = self.node(x).rows_cols();
        if self.value(s).len() != rows {
            return Err(Error::shape("scale_rows", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s);
        let out = self
            .value(x)
            .chunks(cols)
            .zip(sv)
            .flat_map(|(row, &k)| row.iter().map(move |v| v * k))
            .collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x, s]);
        Ok(self.push(shape, out, Op::ScaleRows(x, s), tracked))
    }

    /// Elementwise `1 / x`.
    pub fn recip(&mut self, x: Var) -> Result<Var> {
        if self.value(x).contains(&0.0) {
            return Err(Error::Numeric("reciprocal of zero".into()));
        }
        Ok(self.map(x, Op::Recip(x), |v| 1.0 / v))
    }

    /// `max(0, x)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), |v| 1.0 / (1.0 + (-v).exp()))
    }

    /// `ln(max(x, eps))`.
    pub fn ln_clamped(&mut self, x: Var, eps: f64) -> Var {
        self.map(x, Op::LnClamped(x, eps), |v| v.max(eps).ln())
    }

    /// Softmax over each row (the last dimension).
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (_, cols) = self.node(x).rows_cols();
        let mut out = self.value(x).to_vec();
        out.chunks_mut(cols).for_each(tensor::softmax_in_place);
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x]);
        self.push(shape, out, Op::SoftmaxRows(x), tracked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let tracked = self.tracked(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Selects rows (repetition allowed) into a new `[idx.len(), cols]`
    /// matrix.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.node(x).rows_cols();
        if idx.is_empty() {
            return Err(Error::Argument("gather_rows with no indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Argument(format!(
                "row index {bad} out of range for {rows} rows"
            )));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(
            vec![idx.len(), cols],
            out,
            Op::GatherRows(x, idx.to_vec()),
            tracked,
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.matrix_dims(a, "concat_cols")?;
        let (rb, cb) = self.matrix_dims(b, "concat_cols")?;
        if ra != rb {
            return Err(Error::shape("concat_cols", self.shape(a), self.shape(b)));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(vec![ra, ca + cb], out, Op::ConcatCols(a, b), tracked))
    }

    /// Stacks matrices with equal row length vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Argument("concat_rows of nothing".into()))?;
        let (_, cols) = self.node(first).rows_cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.node(p).rows_cols();
            if c != cols {
                return Err(Error::shape(
                    "concat_rows",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let tracked = self.tracked(parts);
        Ok(self.push(
            vec![rows, cols],
            out,
            Op::ConcatRows(parts.to_vec()),
            tracked,
        ))
    }

    /// Scales each row to unit Euclidean norm. Zero rows are rejected.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.node(x).rows_cols();
        let mut out = self.value(x).to_vec();
        for (i, row) in out.chunks_mut(cols).enumerate() {
            let n = tensor::norm(row);
            if !(n > 0.0) {
                return Err(Error::Degenerate(format!(
                    "row {i} has zero norm and has no cosine similarity"
                )));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x]);
        Ok(self.push(shape, out, Op::NormalizeRows(x), tracked))
    }

    /// Capsule squash per row: `(‖x‖² / (1 + ‖x‖²)) · x / ‖x‖`, with
    /// `squash(0) = 0`.
    pub fn squash_rows(&mut self, x: Var) -> Var {
        let (_, cols) = self.node(x).rows_cols();
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(cols) {
            let n = tensor::norm(row);
            let f = n / (1.0 + n * n);
            row.iter_mut().for_each(|v| *v *= f);
        }
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x]);
        self.push(shape, out, Op::SquashRows(x), tracked)
    }

    /// `out[i, j] = ‖a_i − b_j‖²` for `a: [n, d]`, `b: [m, d]`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.matrix_dims(a, "pairwise_sq_dist")?;
        let (m, d2) = self.matrix_dims(b, "pairwise_sq_dist")?;
        if d != d2 {
            return Err(Error::shape(
                "pairwise_sq_dist",
                self.shape(a),
                self.shape(b),
            ));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ai = &va[i * d..(i + 1) * d];
            for j in 0..m {
                let bj = &vb[j * d..(j + 1) * d];
                out[i * m + j] = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
            }
        }
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(vec![n, m], out, Op::PairwiseSqDist(a, b), tracked))
    }

    /// Propagates gradients from a scalar `loss` back to every tracked leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.node(loss).tracked {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let lens = self.nodes.iter().map(|n| n.value.len()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, lens })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut send = |v: Var, delta: Vec<f64>| {
            if !self.node(v).tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&delta).for_each(|(b, d)| *b += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                send(*a, tensor::mm_nt(g, self.value(*b), m, n, k));
                send(*b, tensor::mm_tn(self.value(*a), g, m, k, n));
            }
            Op::SwapAxes { x, a, b, rest } => send(*x, swap_blocks(g, *b, *a, *rest)),
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Scale(x, c) => send(*x, g.iter().map(|v| c * v).collect()),
            Op::AddRow(x, row) => {
                let cols = self.value(*row).len();
                let mut dr = vec![0.0; cols];
                for chunk in g.chunks(cols) {
                    dr.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                }
                send(*x, g.to_vec());
                send(*row, dr);
            }
            Op::ScaleRows(x, sv) => {
                let cols = node.rows_cols().1;
                let (xv, k) = (self.value(*x), self.value(*sv));
                let mut dx = Vec::with_capacity(g.len());
                let mut ds = Vec::with_capacity(k.len());
                for ((gr, xr), &ki) in g.chunks(cols).zip(xv.chunks(cols)).zip(k) {
                    dx.extend(gr.iter().map(|v| v * ki));
                    ds.push(tensor::dot(gr, xr));
                }
                send(*x, dx);
                send(*sv, ds);
            }
            Op::Recip(x) => send(
                *x,
                g.iter().zip(&node.value).map(|(g, y)| -g * y * y).collect(),
            ),
            Op::Relu(x) => send(
                *x,
                g.iter()
                    .zip(self.value(*x))
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::Sigmoid(x) => send(
                *x,
                g.iter()
                    .zip(&node.value)
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect(),
            ),
            Op::LnClamped(x, eps) => send(
                *x,
                g.iter()
                    .zip(self.value(*x))
                    .map(|(g, &v)| if v > *eps { g / v } else { 0.0 })
                    .collect(),
            ),
            Op::SoftmaxRows(x) => {
                let (_, cols) = node.rows_cols();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(cols).zip(node.value.chunks(cols)) {
                    let s = tensor::dot(gr, yr);
                    dx.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - s)));
                }
                send(*x, dx);
            }
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).len()]),
            Op::GatherRows(x, idx) => {
                let (rows, cols) = self.node(*x).rows_cols();
                let mut dx = vec![0.0; rows * cols];
                for (k, &i) in idx.iter().enumerate() {
                    let dst = &mut dx[i * cols..(i + 1) * cols];
                    dst.iter_mut()
                        .zip(&g[k * cols..(k + 1) * cols])
                        .for_each(|(d, v)| *d += v);
                }
                send(*x, dx);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a)[1];
                let cb = self.shape(*b)[1];
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut db = Vec::with_capacity(self.value(*b).len());
                for row in g.chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                send(*a, da);
                send(*b, db);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    send(*p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::NormalizeRows(x) => {
                let (_, cols) = node.rows_cols();
                let xv = self.value(*x);
                let mut dx = Vec::with_capacity(g.len());
                for ((gr, yr), xr) in g
                    .chunks(cols)
                    .zip(node.value.chunks(cols))
                    .zip(xv.chunks(cols))
                {
                    let n = tensor::norm(xr);
                    let yg = tensor::dot(yr, gr);
                    dx.extend(gr.iter().zip(yr).map(|(g, y)| (g - y * yg) / n));
                }
                send(*x, dx);
            }
            Op::SquashRows(x) => {
                let (_, cols) = node.rows_cols();
                let xv = self.value(*x);
                let mut dx = Vec::with_capacity(g.len());
                for (gr, xr) in g.chunks(cols).zip(xv.chunks(cols)) {
                    let n = tensor::norm(xr);
                    if n == 0.0 {
                        dx.extend(std::iter::repeat_n(0.0, cols));
                        continue;
                    }
                    let n2 = n * n;
                    let f = n / (1.0 + n2);
                    let df_over_n = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2)) / n;
                    let xg = tensor::dot(xr, gr);
                    dx.extend(gr.iter().zip(xr).map(|(g, x)| f * g + df_over_n * x * xg));
                }
                send(*x, dx);
            }
            Op::PairwiseSqDist(a, b) => {
                let (n, d) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[0];
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut da = vec![0.0; n * d];
                let mut db = vec![0.0; m * d];
                for i in 0..n {
                    for j in 0..m {
                        let gij = 2.0 * g[i * m + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for t in 0..d {
                            let diff = gij * (va[i * d + t] - vb[j * d + t]);
                            da[i * d + t] += diff;
                            db[j * d + t] -= diff;
                        }
                    }
                }
                send(*a, da);
                send(*b, db);
            }
        }
    }
}

fn swap_blocks(src: &[f64], a: usize, b: usize, rest: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..a {
        for j in 0..b {
            let s = (i * b + j) * rest;
            let d = (j * a + i) * rest;
            out[d..d + rest].copy_from_slice(&src[s..s + rest]);
        }
    }
    out
}

/// Gradients produced by one [`Graph::backward`] sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the loss through tracked nodes.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v`, zero-filled when unreachable.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }

    /// Adds the gradient of `v` into the tensor's grad buffer.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) {
        t.add_grad(&self.wrt(v));
    }
}
