//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! Every value on the tape is a 2-D matrix. Batched sequences are laid out
//! as `(B·T) × D` with sample-major rows; layers slice and gather rows to
//! move between per-step and per-sequence views.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    MaskedSoftmax(Var),
    MaskBlend(Var, Var, Vec<bool>),
    LayerNorm(Var, Vec<f64>),
    BatchNorm(Var, Vec<bool>, Vec<f64>),
    Mean(Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    needs_grad: bool,
}

/// Statistics from a masked batch normalization: per-column mean and
/// biased variance over the valid rows, plus the number of valid rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.push(value, rows, cols, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.push(value, rows, cols, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, m, n, Op::MatMul(a, b), g))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul_bt {m}x{k} by ({n}x{k2})ᵀ")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bv[j * k..(j + 1) * k];
                out[i * n + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
            }
        }
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, m, n, Op::MatMulBt(a, b), g))
    }

    fn zip_op(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.check_same(a, b, what)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (r, c) = self.shape(a);
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, r, c, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn row_op(&mut self, x: Var, row: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(row) != (1, c) {
            return Err(Error::Shape(format!("{what}: {r}x{c} with row {:?}", self.shape(row))));
        }
        let rv = self.value(row).to_vec();
        let out: Vec<f64> = self
            .value(x)
            .chunks_exact(c)
            .flat_map(|xr| xr.iter().zip(&rv).map(|(&a, &b)| f(a, b)).collect::<Vec<_>>())
            .collect();
        let g = self.grad_of(&[x, row]);
        Ok(self.push(out, r, c, op, g))
    }

    /// `x + row`, broadcasting a `1×C` row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op(x, row, "add_row", |a, b| a + b, Op::AddRow(x, row))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op(x, row, "mul_row", |a, b| a * b, Op::MulRow(x, row))
    }

    /// `x · s` for a `1×1` variable `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::Shape(format!("mul_scalar by {:?}", self.shape(s))));
        }
        let k = self.scalar(s);
        let out = self.value(x).iter().map(|v| v * k).collect();
        let (r, c) = self.shape(x);
        let g = self.grad_of(&[x, s]);
        Ok(self.push(out, r, c, Op::MulScalar(x, s), g))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * k).collect();
        let (r, c) = self.shape(x);
        let g = self.grad_of(&[x]);
        self.push(out, r, c, Op::Scale(x, k), g)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let (r, c) = self.shape(x);
        let g = self.grad_of(&[x]);
        self.push(out, r, c, op, g)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, gelu, Op::Gelu(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > c || len == 0 {
            return Err(Error::Shape(format!("slice_cols {start}+{len} of {c}")));
        }
        let out = self
            .value(x)
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].to_vec())
            .collect();
        let g = self.grad_of(&[x]);
        Ok(self.push(out, r, len, Op::SliceCols(x, start), g))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start + len > r || len == 0 {
            return Err(Error::Shape(format!("slice_rows {start}+{len} of {r}")));
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        let g = self.grad_of(&[x]);
        Ok(self.push(out, len, c, Op::SliceRows(x, start), g))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::Shape("concat_cols with differing row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        let g = self.grad_of(parts);
        Ok(self.push(out, rows, cols, Op::ConcatCols(parts.to_vec()), g))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        if parts.iter().any(|&p| self.shape(p).1 != cols) {
            return Err(Error::Shape("concat_rows with differing column counts".into()));
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let g = self.grad_of(parts);
        Ok(self.push(out, rows, cols, Op::ConcatRows(parts.to_vec()), g))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!("gather row {bad} of {r}")));
        }
        let xv = self.value(x);
        let out = idx.iter().flat_map(|&i| xv[i * c..(i + 1) * c].to_vec()).collect();
        let g = self.grad_of(&[x]);
        Ok(self.push(out, idx.len(), c, Op::GatherRows(x, idx.to_vec()), g))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r * c != rows * cols {
            return Err(Error::Shape(format!("reshape {r}x{c} to {rows}x{cols}")));
        }
        let out = self.value(x).to_vec();
        let g = self.grad_of(&[x]);
        Ok(self.push(out, rows, cols, Op::Reshape(x), g))
    }

    /// Row-wise softmax restricted to `mask`. The mask is either one flag per
    /// column (shared by all rows) or one flag per element. Masked entries
    /// are exactly zero; every row needs at least one valid entry.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.shape(x);
        let at = |i: usize, j: usize| if mask.len() == c { mask[j] } else { mask[i * c + j] };
        if mask.len() != c && mask.len() != r * c {
            return Err(Error::Shape(format!("softmax mask of {} for {r}x{c}", mask.len())));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let max = (0..c)
                .filter(|&j| at(i, j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Validation(format!("softmax row {i} has no valid entries")));
            }
            let mut sum = 0.0;
            for j in 0..c {
                if at(i, j) {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    sum += e;
                }
            }
            for v in &mut out[i * c..(i + 1) * c] {
                *v /= sum;
            }
        }
        let g = self.grad_of(&[x]);
        Ok(self.push(out, r, c, Op::MaskedSoftmax(x), g))
    }

    /// Per row: `a` where `row_mask` is set, `b` elsewhere.
    pub fn mask_blend(&mut self, a: Var, b: Var, row_mask: &[bool]) -> Result<Var> {
        self.check_same(a, b, "mask_blend")?;
        let (r, c) = self.shape(a);
        if row_mask.len() != r {
            return Err(Error::Shape(format!("blend mask of {} for {r} rows", row_mask.len())));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let out = (0..r)
            .flat_map(|i| {
                let src = if row_mask[i] { av } else { bv };
                src[i * c..(i + 1) * c].to_vec()
            })
            .collect();
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, r, c, Op::MaskBlend(a, b, row_mask.to_vec()), g))
    }

    /// Normalize each row to zero mean, unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let (r, c) = self.shape(x);
        let xv = self.value(x);
        let mut out = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[i] = s;
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * s;
            }
        }
        let g = self.grad_of(&[x]);
        self.push(out, r, c, Op::LayerNorm(x, rstd), g)
    }

    /// Normalize each column over the rows flagged valid (biased variance).
    /// Invalid rows come out as zeros and receive no gradient.
    pub fn batch_norm(&mut self, x: Var, valid: &[bool], eps: f64) -> Result<(Var, BatchStats)> {
        let (r, c) = self.shape(x);
        if valid.len() != r {
            return Err(Error::Shape(format!("batchnorm mask of {} for {r} rows", valid.len())));
        }
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(Error::Validation("batch normalization over zero valid rows".into()));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for i in (0..r).filter(|&i| valid[i]) {
            for j in 0..c {
                mean[j] += xv[i * c + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for i in (0..r).filter(|&i| valid[i]) {
            for j in 0..c {
                var[j] += (xv[i * c + j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; r * c];
        for i in (0..r).filter(|&i| valid[i]) {
            for j in 0..c {
                out[i * c + j] = (xv[i * c + j] - mean[j]) * rstd[j];
            }
        }
        let g = self.grad_of(&[x]);
        let v = self.push(out, r, c, Op::BatchNorm(x, valid.to_vec(), rstd), g);
        Ok((v, BatchStats { mean, var, count }))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().sum::<f64>() / self.value(x).len() as f64;
        let g = self.grad_of(&[x]);
        self.push(vec![v], 1, 1, Op::Mean(x), g)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().sum::<f64>();
        let g = self.grad_of(&[x]);
        self.push(vec![v], 1, 1, Op::Sum(x), g)
    }

    /// Reverse sweep from a scalar `loss`. Returns the gradient of every node
    /// that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        let n = &self.nodes[v.0];
        if !n.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.rows * n.cols]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if let Some(ga) = self.acc(grads, *a) {
                    // dA = dC · Bᵀ
                    let bv = self.value(*b);
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    // dB = Aᵀ · dC
                    let av = self.value(*a);
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += a_ip * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if let Some(ga) = self.acc(grads, *a) {
                    let bv = self.value(*b);
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                ga[i * k + p] += gij * bv[j * k + p];
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let av = self.value(*a);
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                gb[j * k + p] += gij * av[i * k + p];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += sign * y);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += sign * y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).to_vec(), self.value(*b).to_vec());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddRow(x, row) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                if let Some(gr) = self.acc(grads, *row) {
                    for i in 0..rows {
                        for j in 0..cols {
                            gr[j] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::MulRow(x, row) => {
                let rv = self.value(*row).to_vec();
                let xv = self.value(*x).to_vec();
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..rows {
                        for j in 0..cols {
                            gx[i * cols + j] += g[i * cols + j] * rv[j];
                        }
                    }
                }
                if let Some(gr) = self.acc(grads, *row) {
                    for i in 0..rows {
                        for j in 0..cols {
                            gr[j] += g[i * cols + j] * xv[i * cols + j];
                        }
                    }
                }
            }
            Op::MulScalar(x, s) => {
                let k = self.scalar(*s);
                let xv = self.value(*x).to_vec();
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * k);
                }
                if let Some(gs) = self.acc(grads, *s) {
                    gs[0] += g.iter().zip(&xv).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Op::Scale(x, k) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * k);
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).to_vec();
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * gelu_grad(xv[i]);
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let xc = self.shape(*x).1;
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..rows {
                        for j in 0..cols {
                            gx[i * xc + start + j] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::SliceRows(x, start) => {
                if let Some(gx) = self.acc(grads, *x) {
                    let off = start * cols;
                    for (i, v) in g.iter().enumerate() {
                        gx[off + i] += v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    if let Some(gp) = self.acc(grads, p) {
                        for i in 0..rows {
                            for j in 0..pc {
                                gp[i * pc + j] += g[i * cols + off + j];
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.acc(grads, p) {
                        for i in 0..len {
                            gp[i] += g[off + i];
                        }
                    }
                    off += len;
                }
            }
            Op::GatherRows(x, idx) => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, &src) in idx.iter().enumerate() {
                        for j in 0..cols {
                            gx[src * cols + j] += g[r * cols + j];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::MaskedSoftmax(x) => {
                let y = &node.value;
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            gx[i * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::MaskBlend(a, b, mask) => {
                for (v, take) in [(*a, true), (*b, false)] {
                    if let Some(gv) = self.acc(grads, v) {
                        for i in (0..rows).filter(|&i| mask[i] == take) {
                            for j in 0..cols {
                                gv[i * cols + j] += g[i * cols + j];
                            }
                        }
                    }
                }
            }
            Op::LayerNorm(x, rstd) => {
                let y = &node.value;
                if let Some(gx) = self.acc(grads, *x) {
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let mg = gr.iter().sum::<f64>() / cols as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for j in 0..cols {
                            gx[i * cols + j] += rstd[i] * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                }
            }
            Op::BatchNorm(x, valid, rstd) => {
                let y = &node.value;
                let count = valid.iter().filter(|&&v| v).count() as f64;
                if let Some(gx) = self.acc(grads, *x) {
                    for j in 0..cols {
                        let mut mg = 0.0;
                        let mut mgy = 0.0;
                        for i in (0..rows).filter(|&i| valid[i]) {
                            mg += g[i * cols + j];
                            mgy += g[i * cols + j] * y[i * cols + j];
                        }
                        mg /= count;
                        mgy /= count;
                        for i in (0..rows).filter(|&i| valid[i]) {
                            gx[i * cols + j] += rstd[j] * (g[i * cols + j] - mg - y[i * cols + j] * mgy);
                        }
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    let n = gx.len() as f64;
                    gx.iter_mut().for_each(|a| *a += g[0] / n);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += a_ip * brow[j];
            }
        }
    }
    out
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `v`; zeros if nothing downstream of `v` reached the loss.
    pub fn get(&self, v: Var, graph: &Graph) -> Vec<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; graph.value(v).len()])
    }
}
