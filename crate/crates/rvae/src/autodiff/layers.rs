//! Dense and LSTM layers on top of the tape.
//!
//! Sequences are lists of `[batch x dim]` frames; recurrent layers walk the
//! list in either direction and always return outputs aligned to the input
//! frame order. LSTM gate blocks are laid out as (input, forget, cell,
//! output) along the 4H axis; checkpoints record this as `gate_order =
//! "ifco"`.

use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Processing direction for a recurrent layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Dense (affine) layer parameters: `y = x @ w + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    /// `[d_in x d_out]`
    pub w: Tensor,
    /// `[d_out]`
    pub b: Tensor,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn init(d_in: usize, d_out: usize, rng: &mut crate::rng::Rng) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        Dense {
            w: Tensor::rand_uniform(&[d_in, d_out], -bound, bound, rng),
            b: Tensor::zeros(&[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> DenseVars {
        let mut w = self.w.clone();
        let mut b = self.b.clone();
        w.set_requires_grad(trainable);
        b.set_requires_grad(trainable);
        DenseVars { w: tape.leaf(&w), b: tape.leaf(&b) }
    }
}

/// Tape-side handles for a registered [`Dense`].
#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

impl DenseVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let xw = tape.matmul(x, self.w);
        tape.add_bias(xw, self.b)
    }
}

/// LSTM parameters. Input and recurrent weights are `[d_in x 4H]` and
/// `[H x 4H]`; gates stacked (i, f, g, o).
#[derive(Clone, Debug)]
pub struct Lstm {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
    pub hidden: usize,
}

impl Lstm {
    /// Uniform ±1/sqrt(H) weights, forget-gate bias 1.
    pub fn init(d_in: usize, hidden: usize, rng: &mut crate::rng::Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let wx = Tensor::rand_uniform(&[d_in, 4 * hidden], -bound, bound, rng);
        let wh = Tensor::rand_uniform(&[hidden, 4 * hidden], -bound, bound, rng);
        let mut b = Tensor::zeros(&[4 * hidden]);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        Lstm { wx, wh, b, hidden }
    }

    pub fn d_in(&self) -> usize {
        self.wx.shape()[0]
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> LstmVars {
        let mut wx = self.wx.clone();
        let mut wh = self.wh.clone();
        let mut b = self.b.clone();
        wx.set_requires_grad(trainable);
        wh.set_requires_grad(trainable);
        b.set_requires_grad(trainable);
        LstmVars {
            wx: tape.leaf(&wx),
            wh: tape.leaf(&wh),
            b: tape.leaf(&b),
            hidden: self.hidden,
        }
    }
}

/// Tape-side handles for a registered [`Lstm`].
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmVars {
    /// One LSTM step: `(h, c) -> (h', c')` for input frame `x [B x d_in]`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hsz = self.hidden;
        let xg = tape.matmul(x, self.wx);
        let hg = tape.matmul(h, self.wh);
        let sum = tape.add(xg, hg);
        let gates = tape.add_bias(sum, self.b);
        let i_lin = tape.slice_cols(gates, 0, hsz);
        let f_lin = tape.slice_cols(gates, hsz, hsz);
        let g_lin = tape.slice_cols(gates, 2 * hsz, hsz);
        let o_lin = tape.slice_cols(gates, 3 * hsz, hsz);
        let i = tape.sigmoid(i_lin);
        let f = tape.sigmoid(f_lin);
        let g = tape.tanh(g_lin);
        let o = tape.sigmoid(o_lin);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_new = tape.add(fc, ig);
        let c_act = tape.tanh(c_new);
        let h_new = tape.mul(o, c_act);
        (h_new, c_new)
    }

    /// Run over a frame sequence with zero-initialized state. Backward
    /// direction consumes frames last-to-first; outputs are re-aligned to
    /// the input order either way.
    pub fn run(&self, tape: &mut Tape, frames: &[Var], dir: Direction) -> Vec<Var> {
        if frames.is_empty() {
            return Vec::new();
        }
        let batch = tape.shape(frames[0]).0;
        let mut h = tape.zeros(batch, self.hidden);
        let mut c = tape.zeros(batch, self.hidden);
        let mut out = Vec::with_capacity(frames.len());
        let order: Vec<usize> = match dir {
            Direction::Forward => (0..frames.len()).collect(),
            Direction::Backward => (0..frames.len()).rev().collect(),
        };
        for &n in &order {
            let (h_new, c_new) = self.step(tape, frames[n], h, c);
            h = h_new;
            c = c_new;
            out.push(h);
        }
        if dir == Direction::Backward {
            out.reverse();
        }
        out
    }
}

/// Affine map `input @ weights + bias` as a standalone evaluation.
pub fn forward_dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, d_in) = (input.rows(), input.cols());
    if weights.shape().len() != 2 || weights.shape()[0] != d_in {
        return Err(Error::Dimension(format!(
            "dense weights {:?} do not accept input [{b} x {d_in}]",
            weights.shape()
        )));
    }
    let d_out = weights.shape()[1];
    if bias.numel() != d_out {
        return Err(Error::Dimension(format!(
            "dense bias length {} != output dim {d_out}",
            bias.numel()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(input);
    let w = tape.leaf(weights);
    let bb = tape.leaf(bias);
    let xw = tape.matmul(x, w);
    let y = tape.add_bias(xw, bb);
    Tensor::from_vec(&[b, d_out], tape.value(y).to_vec())
}

/// Full-sequence LSTM evaluation on a `[N x B x D]` tensor, zero initial
/// state, output `[N x B x H]`.
pub fn forward_lstm(sequence: &Tensor, params: &Lstm, dir: Direction) -> Result<Tensor> {
    let shape = sequence.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "forward_lstm expects [N x B x D], got {:?}",
            shape
        )));
    }
    if !sequence.is_finite() {
        return Err(Error::Numeric("forward_lstm: non-finite input".into()));
    }
    let (n, b, d) = (shape[0], shape[1], shape[2]);
    if d != params.d_in() {
        return Err(Error::Dimension(format!(
            "forward_lstm input dim {d} != layer input dim {}",
            params.d_in()
        )));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let frames: Vec<Var> = (0..n)
        .map(|t| tape.constant(b, d, sequence.data()[t * b * d..(t + 1) * b * d].to_vec()))
        .collect();
    let out = vars.run(&mut tape, &frames, dir);
    let h = params.hidden;
    let mut data = Vec::with_capacity(n * b * h);
    for v in out {
        data.extend_from_slice(tape.value(v));
    }
    Tensor::from_vec(&[n, b, h], data)
}
