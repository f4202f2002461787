//! Dense 2-D `f64` arrays and a reverse-mode tape over them.
//!
//! Values live on a [`Tape`]; operations append nodes and return [`Var`]
//! handles. [`Tape::backward`] walks the nodes once in reverse order.
//! Broadcasting is limited to equal shapes and `1x1` scalars; row
//! broadcasting is done with a `matmul` against a ones column.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(x: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!("{} values cannot fill a {rows}x{cols} tensor", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Self { rows: 1, cols: v.len(), data: v.to_vec() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a `1x1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::dim(format!("item() on a {}x{} tensor", self.rows, self.cols)));
        }
        Ok(self.data[0])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "matmul of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm_acc(&mut out.data, &self.data, &other.data, self.rows, self.cols, other.cols);
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c += a (m x k) * b (k x n)`, all row-major.
fn gemm_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c += a^T * b` with `a` of shape `k x m`, `b` of shape `k x n`.
fn gemm_tn_acc(c: &mut [f64], a: &[f64], b: &[f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += api * bj;
            }
        }
    }
}

/// `c += a * b^T` with `a` of shape `m x k`, `b` of shape `n x k`.
fn gemm_nt_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// Handle to a node on a [`Tape`].
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
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    Exp(Var),
    Rsqrt(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    /// Input and `(offset, dim)` of each field.
    FieldNorm(Var, Vec<(usize, usize)>),
    ScatterSum(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape when `v` did not influence the output.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Tensor::zeros(r, c)
        })
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite value produced by {}", op_name(&op))));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    fn broadcast_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb || sa == (1, 1) || sb == (1, 1) {
            Ok(())
        } else {
            Err(Error::dim(format!("{what} of {}x{} and {}x{}", sa.0, sa.1, sb.0, sb.1)))
        }
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() == y.shape() {
            x.zip(y, f)
        } else if y.shape() == (1, 1) {
            let s = y.data[0];
            x.map(|v| f(v, s))
        } else {
            let s = x.data[0];
            y.map(|v| f(s, v))
        }
    }

    /// Elementwise sum; one side may be `1x1`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_shape(a, b, "add")?;
        let v = self.binary(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product; one side may be `1x1`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_shape(a, b, "mul")?;
        let v = self.binary(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(elu);
        self.push(v, Op::Elu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    /// `1 / sqrt(x)`; input must be positive.
    pub fn rsqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data.iter().any(|&x| x <= 0.0) {
            return Err(Error::Numeric("rsqrt of a non-positive value".into()));
        }
        let v = self.value(a).map(|x| 1.0 / x.sqrt());
        self.push(v, Op::Rsqrt(a), &[a])
    }

    /// Sum of all entries as a `1x1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat of nothing"));
        };
        let rows = self.value(first).rows;
        if parts.iter().any(|&p| self.value(p).rows != rows) {
            return Err(Error::dim("concat_cols needs equal row counts"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + t.cols].copy_from_slice(t.row(r));
            }
            off += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.cols {
            return Err(Error::Index(format!("column slice {start}..{end} of {} columns", t.cols)));
        }
        let v = Tensor::from_fn(t.rows, end - start, |r, c| t.get(r, start + c));
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    /// Same row-major data under a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if rows * cols != t.len() {
            return Err(Error::dim(format!("cannot reshape {}x{} to {rows}x{cols}", t.rows, t.cols)));
        }
        let v = Tensor { rows, cols, data: t.data.clone() };
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Euclidean norm of each field `(offset, dim)` of each row.
    pub fn field_norm(&mut self, a: Var, fields: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(a);
        if fields.iter().any(|&(o, d)| o + d > t.cols) {
            return Err(Error::Index("field extends past the last column".into()));
        }
        let v = Tensor::from_fn(t.rows, fields.len(), |r, f| {
            let (o, d) = fields[f];
            t.row(r)[o..o + d].iter().map(|x| x * x).sum::<f64>().sqrt()
        });
        self.push(v, Op::FieldNorm(a, fields.to_vec()), &[a])
    }

    /// Row `i` of the result is the sum of the rows of `messages` whose
    /// target is `i`. Rows are accumulated in input order.
    pub fn scatter_sum(&mut self, messages: Var, targets: &[usize], n_nodes: usize) -> Result<Var> {
        let m = self.value(messages);
        if targets.len() != m.rows {
            return Err(Error::dim(format!("{} targets for {} messages", targets.len(), m.rows)));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n_nodes) {
            return Err(Error::Index(format!("target {bad} out of range for {n_nodes} nodes")));
        }
        let d = m.cols;
        let mut out = Tensor::zeros(n_nodes, d);
        for (e, &t) in targets.iter().enumerate() {
            for c in 0..d {
                out.data[t * d + c] += m.data[e * d + c];
            }
        }
        self.push(out, Op::ScatterSum(messages, targets.to_vec()), &[messages])
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.rows) {
            return Err(Error::Index(format!("row {bad} out of range for {} rows", t.rows)));
        }
        let mut data = Vec::with_capacity(index.len() * t.cols);
        for &i in index {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor { rows: index.len(), cols: t.cols, data };
        self.push(v, Op::GatherRows(a, index.to_vec()), &[a])
    }

    /// Column `k` of the result is column `index[k]` of `a`.
    pub fn gather_cols(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.cols) {
            return Err(Error::Index(format!("column {bad} out of range for {} columns", t.cols)));
        }
        let v = Tensor::from_fn(t.rows, index.len(), |r, k| t.data[r * t.cols + index[k]]);
        self.push(v, Op::GatherCols(a, index.to_vec()), &[a])
    }

    /// Reverse sweep from a `1x1` output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).shape() != (1, 1) {
            return Err(Error::dim("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::scalar(1.0));
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Gradient of a broadcasting binary op with respect to one operand.
    fn reduce_to(&self, v: Var, g: Tensor) -> Tensor {
        if self.value(v).shape() == (1, 1) && g.shape() != (1, 1) {
            Tensor::scalar(g.data.iter().sum())
        } else {
            g
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let mut ga = Tensor::zeros(x.rows, x.cols);
                    gemm_nt_acc(&mut ga.data, &g.data, &y.data, g.rows, g.cols, y.rows);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(y.rows, y.cols);
                    gemm_tn_acc(&mut gb.data, &x.data, &g.data, x.rows, x.cols, g.cols);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        let r = self.reduce_to(v, g.clone());
                        self.accumulate(grads, v, r);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if !self.requires_grad(v) {
                        continue;
                    }
                    let o = self.value(other);
                    let full = if o.shape() == g.shape() {
                        g.zip(o, |x, y| x * y)
                    } else {
                        let s = o.data[0];
                        g.map(|x| x * s)
                    };
                    let r = self.reduce_to(v, full);
                    self.accumulate(grads, v, r);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::Elu(a) => {
                let x = self.value(*a);
                let d = g.zip(x, |gi, xi| if xi > 0.0 { gi } else { gi * xi.exp() });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip(&node.value, |gi, s| gi * s * (1.0 - s));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = g.zip(&node.value, |gi, e| gi * e);
                self.accumulate(grads, *a, d);
            }
            Op::Rsqrt(a) => {
                // d/dx x^{-1/2} = -1/2 y^3.
                let d = g.zip(&node.value, |gi, y| -0.5 * gi * y * y * y);
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, g.data[0]));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols;
                    if self.requires_grad(p) {
                        let gp = Tensor::from_fn(g.rows, cols, |r, c| g.get(r, off + c));
                        self.accumulate(grads, p, gp);
                    }
                    off += cols;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for i in 0..g.rows {
                    ga.data[i * c + start..i * c + start + g.cols].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor { rows: r, cols: c, data: g.data.clone() });
            }
            Op::FieldNorm(a, fields) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    for (f, &(o, d)) in fields.iter().enumerate() {
                        let n = node.value.get(r, f);
                        if n == 0.0 {
                            continue;
                        }
                        let s = g.get(r, f) / n;
                        for c in o..o + d {
                            ga.data[r * x.cols + c] += s * x.get(r, c);
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ScatterSum(m, targets) => {
                let d = g.cols;
                let mut gm = Tensor::zeros(targets.len(), d);
                for (e, &t) in targets.iter().enumerate() {
                    gm.data[e * d..(e + 1) * d].copy_from_slice(g.row(t));
                }
                self.accumulate(grads, *m, gm);
            }
            Op::GatherRows(a, index) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (k, &i) in index.iter().enumerate() {
                    for j in 0..c {
                        ga.data[i * c + j] += g.data[k * c + j];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::GatherCols(a, index) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                let n = index.len();
                for i in 0..r {
                    for (k, &j) in index.iter().enumerate() {
                        ga.data[i * c + j] += g.data[i * n + k];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Elu(_) => "elu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Exp(_) => "exp",
        Op::Rsqrt(_) => "rsqrt",
        Op::Sum(_) => "sum",
        Op::ConcatCols(_) => "concat_cols",
        Op::SliceCols(..) => "slice_cols",
        Op::Reshape(_) => "reshape",
        Op::FieldNorm(..) => "field_norm",
        Op::ScatterSum(..) => "scatter_sum",
        Op::GatherRows(..) => "gather_rows",
        Op::GatherCols(..) => "gather_cols",
    }
}

/// Largest relative disagreement between the reverse-mode gradient of `f`
/// at `theta` and central finite differences with step `eps`.
///
/// `f` receives a fresh tape and the `1 x n` parameter row and must return a
/// `1x1` output. Per coordinate the error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(f: F, theta: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::config(format!("finite-difference step {eps:e} outside [1e-7, 1e-3]")));
    }
    let eval = |t: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::row_vector(t));
        let out = f(&mut tape, p)?;
        let v = tape.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::Numeric("objective is not finite".into()));
        }
        Ok(v)
    };
    let mut tape = Tape::new();
    let p = tape.param(Tensor::row_vector(theta));
    let out = f(&mut tape, p)?;
    if !tape.value(out).item()?.is_finite() {
        return Err(Error::Numeric("objective is not finite".into()));
    }
    let analytic = tape.backward(out)?.get_or_zeros(&tape, p);
    let mut worst = 0.0f64;
    let mut t = theta.to_vec();
    for i in 0..theta.len() {
        t[i] = theta[i] + eps;
        let fp = eval(&t)?;
        t[i] = theta[i] - eps;
        let fm = eval(&t)?;
        t[i] = theta[i];
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic.data[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    Ok(worst)
}
