//! Wengert tape: records 2-D tensor operations during the forward pass and
//! replays them in reverse to accumulate gradients.
//!
//! All tape values are `[rows x cols]` matrices (scalars are `[1 x 1]`).
//! Parents always precede children, so a single reverse sweep visits every
//! node exactly once. A tape is single-threaded by construction; run one
//! tape per batch shard and reduce gradients outside.

use super::Tensor;
use crate::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// [m x k] @ [k x n]
    MatMul { a: Var, b: Var },
    /// [m x n] + row vector [1 x n] broadcast over rows
    AddBias { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Exp { x: Var },
    Ln { x: Var },
    Sqrt { x: Var },
    Neg { x: Var },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    /// Horizontal concatenation of equal-row tensors.
    ConcatCols { parts: Vec<Var> },
    /// Column slice [start, start+len).
    SliceCols { x: Var, start: usize, len: usize },
    /// [m x n] -> [m x 1]
    RowSum { x: Var },
    /// [m x n] -> [1 x 1]
    SumAll { x: Var },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires_grad: bool,
}

/// Reverse-mode AD tape.
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, if any flowed to it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a parameter leaf, zeros if none flowed.
    pub fn get_or_zeros(&self, v: Var, numel: usize) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; numel],
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, data, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Register a tensor as a leaf; 1-D tensors become row vectors.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.rows(), t.cols(), t.data().to_vec(), t.requires_grad())
    }

    /// Leaf from raw data with `requires_grad = false`.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(data.len(), rows * cols, "constant data/shape mismatch");
        self.push(Op::Leaf, rows, cols, data, false)
    }

    /// Leaf from raw data with `requires_grad = true`.
    pub fn variable(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(data.len(), rows * cols, "variable data/shape mismatch");
        self.push(Op::Leaf, rows, cols, data, true)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(Op::Leaf, rows, cols, vec![0.0; rows * cols], false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Scalar value of a [1 x 1] node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    // ---- recorded operations -------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul { a, b }, m, n, out, rg)
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (m, n) = self.shape(x);
        let (br, bn) = self.shape(bias);
        assert_eq!((br, bn), (1, n), "bias must be [1 x {n}], got [{br} x {bn}]");
        let mut out = self.value(x).to_vec();
        let b = self.value(bias);
        for r in 0..m {
            for c in 0..n {
                out[r * n + c] += b[c];
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(Op::AddBias { x, bias }, m, n, out, rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, n), "elementwise shape mismatch");
        let out: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(op, m, n, out, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div { a, b })
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (m, n) = self.shape(x);
        let out: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        self.push(op, m, n, out, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp { x })
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln { x })
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt { x })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg { x })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddConst { x })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            assert_eq!(pm, m, "concat_cols row mismatch");
            let src = self.value(p);
            for r in 0..m {
                out[r * total + off..r * total + off + pn]
                    .copy_from_slice(&src[r * pn..(r + 1) * pn]);
            }
            off += pn;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatCols { parts: parts.to_vec() }, m, total, out, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(x);
        assert!(start + len <= n, "slice_cols out of range");
        let src = self.value(x);
        let mut out = vec![0.0; m * len];
        for r in 0..m {
            out[r * len..(r + 1) * len].copy_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(x);
        self.push(Op::SliceCols { x, start, len }, m, len, out, rg)
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let src = self.value(x);
        let out: Vec<f64> = (0..m).map(|r| src[r * n..(r + 1) * n].iter().sum()).collect();
        let rg = self.rg(x);
        self.push(Op::RowSum { x }, m, 1, out, rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(Op::SumAll { x }, 1, 1, vec![s], rg)
    }

    /// Sum of several scalars (chain of adds).
    pub fn add_scalars(&mut self, terms: &[Var]) -> Var {
        assert!(!terms.is_empty());
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar loss. Errors if `loss` is not `[1 x 1]`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            let (m, n) = self.shape(loss);
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got [{m} x {n}]"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(d_out) = grads[i].take() else { continue };
            self.backward_op(i, &d_out, &mut grads);
            grads[i] = Some(d_out);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => grads[v.0] = Some(delta.to_vec()),
        }
    }

    fn backward_op(&self, i: usize, d_out: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if self.rg(*a) {
                    // dA = dC @ B^T
                    let mut da = vec![0.0; m * k];
                    matmul_nt_into(d_out, self.value(*b), m, n, k, &mut da);
                    self.accumulate(grads, *a, &da);
                }
                if self.rg(*b) {
                    // dB = A^T @ dC
                    let mut db = vec![0.0; k * n];
                    matmul_tn_into(self.value(*a), d_out, m, k, n, &mut db);
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::AddBias { x, bias } => {
                let (m, n) = (node.rows, node.cols);
                self.accumulate(grads, *x, d_out);
                if self.rg(*bias) {
                    let mut db = vec![0.0; n];
                    for r in 0..m {
                        for c in 0..n {
                            db[c] += d_out[r * n + c];
                        }
                    }
                    self.accumulate(grads, *bias, &db);
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, d_out);
                self.accumulate(grads, *b, d_out);
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, d_out);
                if self.rg(*b) {
                    let neg: Vec<f64> = d_out.iter().map(|d| -d).collect();
                    self.accumulate(grads, *b, &neg);
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    let da: Vec<f64> =
                        d_out.iter().zip(self.value(*b)).map(|(d, y)| d * y).collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.rg(*b) {
                    let db: Vec<f64> =
                        d_out.iter().zip(self.value(*a)).map(|(d, x)| d * x).collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Div { a, b } => {
                let bv = self.value(*b);
                if self.rg(*a) {
                    let da: Vec<f64> = d_out.iter().zip(bv).map(|(d, y)| d / y).collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.rg(*b) {
                    let av = self.value(*a);
                    let db: Vec<f64> = d_out
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(d, (x, y))| -d * x / (y * y))
                        .collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Tanh { x } => {
                let dx: Vec<f64> =
                    d_out.iter().zip(&node.data).map(|(d, y)| d * (1.0 - y * y)).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Sigmoid { x } => {
                let dx: Vec<f64> =
                    d_out.iter().zip(&node.data).map(|(d, y)| d * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Exp { x } => {
                let dx: Vec<f64> = d_out.iter().zip(&node.data).map(|(d, y)| d * y).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Ln { x } => {
                let dx: Vec<f64> =
                    d_out.iter().zip(self.value(*x)).map(|(d, v)| d / v).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Sqrt { x } => {
                let dx: Vec<f64> =
                    d_out.iter().zip(&node.data).map(|(d, y)| d / (2.0 * y)).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Neg { x } => {
                let dx: Vec<f64> = d_out.iter().map(|d| -d).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Scale { x, c } => {
                let dx: Vec<f64> = d_out.iter().map(|d| d * c).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::AddConst { x } => {
                self.accumulate(grads, *x, d_out);
            }
            Op::ConcatCols { parts } => {
                let (m, total) = (node.rows, node.cols);
                let mut off = 0;
                for &p in parts {
                    let pn = self.shape(p).1;
                    if self.rg(p) {
                        let mut dp = vec![0.0; m * pn];
                        for r in 0..m {
                            dp[r * pn..(r + 1) * pn]
                                .copy_from_slice(&d_out[r * total + off..r * total + off + pn]);
                        }
                        self.accumulate(grads, p, &dp);
                    }
                    off += pn;
                }
            }
            Op::SliceCols { x, start, len } => {
                let (m, n) = self.shape(*x);
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + len]
                        .copy_from_slice(&d_out[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::RowSum { x } => {
                let (m, n) = self.shape(*x);
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    dx[r * n..(r + 1) * n].fill(d_out[r]);
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::SumAll { x } => {
                let (m, n) = self.shape(*x);
                let dx = vec![d_out[0]; m * n];
                self.accumulate(grads, *x, &dx);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// out += A[m x k] @ B[k x n]
pub(crate) fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
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

/// out += A[m x n] @ B^T where B is [k x n] (row-row dot products).
fn matmul_nt_into(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// out += A^T @ B where A is [m x k], B is [m x n].
fn matmul_tn_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (oj, bj) in orow.iter_mut().zip(brow) {
                *oj += aip * bj;
            }
        }
    }
}
