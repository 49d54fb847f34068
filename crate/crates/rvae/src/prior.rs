//! Generative speech priors: decoders mapping latent sequences to
//! per-frame speech variances.
//!
//! Three variants share one skeleton — dense input (tanh), an optional
//! recurrent body, and a dense log-variance head whose output is
//! exponentiated and floored:
//!
//! - `ffnn`: frame n sees z_n only (variance columns are a per-frame map);
//! - `rnn`: a causal LSTM makes frame n depend on z_0..=z_n;
//! - `brnn`: forward and backward LSTMs concatenated, then a combining
//!   dense layer, so every frame may depend on the whole sequence.

use crate::autodiff::{Dense, DenseVars, Direction, Lstm, LstmVars, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::signal::ComplexSpectrogram;
use crate::{Error, Result, Variant, VARIANCE_FLOOR};

/// N x L latent sequence (row per frame).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence {
    data: Vec<f64>,
    frames: usize,
    latent_dim: usize,
}

impl LatentSequence {
    pub fn zeros(frames: usize, latent_dim: usize) -> Self {
        LatentSequence { data: vec![0.0; frames * latent_dim], frames, latent_dim }
    }

    pub fn from_vec(frames: usize, latent_dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * latent_dim {
            return Err(Error::Dimension(format!(
                "latent data length {} != {frames} x {latent_dim}",
                data.len()
            )));
        }
        Ok(LatentSequence { data, frames, latent_dim })
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn frame(&self, n: usize) -> &[f64] {
        &self.data[n * self.latent_dim..(n + 1) * self.latent_dim]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.latent_dim..(n + 1) * self.latent_dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Strictly positive F x N variance surface (row-major, F rows).
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceField {
    data: Vec<f64>,
    bins: usize,
    frames: usize,
}

impl VarianceField {
    pub fn from_vec(bins: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != bins * frames {
            return Err(Error::Dimension(format!(
                "variance data length {} != {bins} x {frames}",
                data.len()
            )));
        }
        if data.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(Error::Contract("variance entries must be positive and finite".into()));
        }
        Ok(VarianceField { data, bins, frames })
    }

    /// Column-per-frame construction (each column has F entries).
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let frames = columns.len();
        if frames == 0 {
            return Err(Error::Dimension("variance field needs at least one frame".into()));
        }
        let bins = columns[0].len();
        let mut data = vec![0.0; bins * frames];
        for (n, col) in columns.iter().enumerate() {
            if col.len() != bins {
                return Err(Error::Dimension("ragged variance columns".into()));
            }
            for f in 0..bins {
                data[f * frames + n] = col[f];
            }
        }
        Self::from_vec(bins, frames, data)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn value(&self, f: usize, n: usize) -> f64 {
        self.data[f * self.frames + n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, n: usize) -> Vec<f64> {
        (0..self.bins).map(|f| self.value(f, n)).collect()
    }
}

/// Decoder parameter set for one variant.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub variant: Variant,
    pub latent_dim: usize,
    pub bins: usize,
    pub hidden: usize,
    /// L -> H, tanh.
    pub input: Dense,
    /// Causal body (rnn, brnn).
    pub fwd: Option<Lstm>,
    /// Anti-causal body (brnn).
    pub bwd: Option<Lstm>,
    /// 2H -> H after direction concat (brnn), tanh.
    pub combine: Option<Dense>,
    /// H -> F log-variance head.
    pub head: Dense,
}

impl DecoderParams {
    pub fn init(variant: Variant, latent_dim: usize, bins: usize, hidden: usize, rng: &mut Rng) -> Self {
        let input = Dense::init(latent_dim, hidden, rng);
        let (fwd, bwd, combine) = match variant {
            Variant::Ffnn => (None, None, None),
            Variant::Rnn => (Some(Lstm::init(hidden, hidden, rng)), None, None),
            Variant::Brnn => (
                Some(Lstm::init(hidden, hidden, rng)),
                Some(Lstm::init(hidden, hidden, rng)),
                Some(Dense::init(2 * hidden, hidden, rng)),
            ),
        };
        let head = Dense::init(hidden, bins, rng);
        DecoderParams { variant, latent_dim, bins, hidden, input, fwd, bwd, combine, head }
    }

    /// Zero-valued parameters with the right shapes (checkpoint loading).
    pub fn zeros(variant: Variant, latent_dim: usize, bins: usize, hidden: usize) -> Self {
        let dense = |i: usize, o: usize| Dense { w: Tensor::zeros(&[i, o]), b: Tensor::zeros(&[o]) };
        let lstm = |i: usize| Lstm {
            wx: Tensor::zeros(&[i, 4 * hidden]),
            wh: Tensor::zeros(&[hidden, 4 * hidden]),
            b: Tensor::zeros(&[4 * hidden]),
            hidden,
        };
        let (fwd, bwd, combine) = match variant {
            Variant::Ffnn => (None, None, None),
            Variant::Rnn => (Some(lstm(hidden)), None, None),
            Variant::Brnn => (Some(lstm(hidden)), Some(lstm(hidden)), Some(dense(2 * hidden, hidden))),
        };
        DecoderParams {
            variant,
            latent_dim,
            bins,
            hidden,
            input: dense(latent_dim, hidden),
            fwd,
            bwd,
            combine,
            head: dense(hidden, bins),
        }
    }

    /// Canonical (name, tensor) enumeration used by checkpoints and Adam.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("dec.input.w".into(), &self.input.w),
            ("dec.input.b".into(), &self.input.b),
        ];
        if let Some(l) = &self.fwd {
            out.push(("dec.fwd.wx".into(), &l.wx));
            out.push(("dec.fwd.wh".into(), &l.wh));
            out.push(("dec.fwd.b".into(), &l.b));
        }
        if let Some(l) = &self.bwd {
            out.push(("dec.bwd.wx".into(), &l.wx));
            out.push(("dec.bwd.wh".into(), &l.wh));
            out.push(("dec.bwd.b".into(), &l.b));
        }
        if let Some(d) = &self.combine {
            out.push(("dec.combine.w".into(), &d.w));
            out.push(("dec.combine.b".into(), &d.b));
        }
        out.push(("dec.head.w".into(), &self.head.w));
        out.push(("dec.head.b".into(), &self.head.b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("dec.input.w".into(), &mut self.input.w),
            ("dec.input.b".into(), &mut self.input.b),
        ];
        if let Some(l) = &mut self.fwd {
            out.push(("dec.fwd.wx".into(), &mut l.wx));
            out.push(("dec.fwd.wh".into(), &mut l.wh));
            out.push(("dec.fwd.b".into(), &mut l.b));
        }
        if let Some(l) = &mut self.bwd {
            out.push(("dec.bwd.wx".into(), &mut l.wx));
            out.push(("dec.bwd.wh".into(), &mut l.wh));
            out.push(("dec.bwd.b".into(), &mut l.b));
        }
        if let Some(d) = &mut self.combine {
            out.push(("dec.combine.w".into(), &mut d.w));
            out.push(("dec.combine.b".into(), &mut d.b));
        }
        out.push(("dec.head.w".into(), &mut self.head.w));
        out.push(("dec.head.b".into(), &mut self.head.b));
        out
    }

    pub(crate) fn register(&self, tape: &mut Tape, trainable: bool) -> DecoderVars {
        DecoderVars {
            variant: self.variant,
            input: self.input.register(tape, trainable),
            fwd: self.fwd.as_ref().map(|l| l.register(tape, trainable)),
            bwd: self.bwd.as_ref().map(|l| l.register(tape, trainable)),
            combine: self.combine.as_ref().map(|d| d.register(tape, trainable)),
            head: self.head.register(tape, trainable),
        }
    }
}

/// Tape-side decoder.
pub(crate) struct DecoderVars {
    variant: Variant,
    input: DenseVars,
    fwd: Option<LstmVars>,
    bwd: Option<LstmVars>,
    combine: Option<DenseVars>,
    head: DenseVars,
}

impl DecoderVars {
    /// Leaf handles in the exact order of `DecoderParams::named_tensors`.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out = vec![self.input.w, self.input.b];
        if let Some(l) = &self.fwd {
            out.extend([l.wx, l.wh, l.b]);
        }
        if let Some(l) = &self.bwd {
            out.extend([l.wx, l.wh, l.b]);
        }
        if let Some(d) = &self.combine {
            out.extend([d.w, d.b]);
        }
        out.extend([self.head.w, self.head.b]);
        out
    }

    /// Map latent frames `[B x L]` to variance frames `[B x F]`,
    /// `v = exp(head) + floor`.
    pub fn forward(&self, tape: &mut Tape, z_frames: &[Var]) -> Vec<Var> {
        let embedded: Vec<Var> = z_frames
            .iter()
            .map(|&z| {
                let a = self.input.apply(tape, z);
                tape.tanh(a)
            })
            .collect();
        let body: Vec<Var> = match self.variant {
            Variant::Ffnn => embedded,
            Variant::Rnn => self.fwd.as_ref().unwrap().run(tape, &embedded, Direction::Forward),
            Variant::Brnn => {
                let f = self.fwd.as_ref().unwrap().run(tape, &embedded, Direction::Forward);
                let b = self.bwd.as_ref().unwrap().run(tape, &embedded, Direction::Backward);
                let comb = self.combine.as_ref().unwrap();
                f.iter()
                    .zip(&b)
                    .map(|(&hf, &hb)| {
                        let cat = tape.concat_cols(&[hf, hb]);
                        let lin = comb.apply(tape, cat);
                        tape.tanh(lin)
                    })
                    .collect()
            }
        };
        body.iter()
            .map(|&h| {
                let logv = self.head.apply(tape, h);
                let ev = tape.exp(logv);
                tape.add_const(ev, VARIANCE_FLOOR)
            })
            .collect()
    }
}

/// Decode a latent sequence into an F x N variance field.
pub fn decode(params: &DecoderParams, z: &LatentSequence) -> Result<VarianceField> {
    if z.latent_dim() != params.latent_dim {
        return Err(Error::Config(format!(
            "latent dim {} does not match decoder ({})",
            z.latent_dim(),
            params.latent_dim
        )));
    }
    if !z.is_finite() {
        return Err(Error::Numeric("decode: non-finite latent input".into()));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let frames: Vec<Var> =
        (0..z.num_frames()).map(|n| tape.constant(1, z.latent_dim(), z.frame(n).to_vec())).collect();
    let v = vars.forward(&mut tape, &frames);
    let columns: Vec<Vec<f64>> = v.into_iter().map(|var| tape.value(var).to_vec()).collect();
    VarianceField::from_columns(&columns)
}

/// Draw z with i.i.d. standard-normal entries.
pub fn sample_prior(frames: usize, latent_dim: usize, rng: &mut Rng) -> LatentSequence {
    use rand::Rng as _;
    use rand_distr::StandardNormal;
    let data = (0..frames * latent_dim).map(|_| rng.sample(StandardNormal)).collect();
    LatentSequence { data, frames, latent_dim }
}

/// Complex-Gaussian log-likelihood of a spectrogram under a variance field:
/// sum over (f, n) of `-ln(pi) - ln v - |s|^2 / v`.
pub fn log_likelihood(spec: &ComplexSpectrogram, v: &VarianceField) -> Result<f64> {
    if spec.bins() != v.bins() || spec.num_frames() != v.num_frames() {
        return Err(Error::Dimension(format!(
            "spectrogram {}x{} vs variance {}x{}",
            spec.bins(),
            spec.num_frames(),
            v.bins(),
            v.num_frames()
        )));
    }
    let ln_pi = std::f64::consts::PI.ln();
    let mut total = 0.0;
    for n in 0..spec.num_frames() {
        for f in 0..spec.bins() {
            let var = v.value(f, n);
            if !var.is_finite() || var <= 0.0 {
                return Err(Error::Contract(format!("nonpositive variance at ({f}, {n})")));
            }
            total += -ln_pi - var.ln() - spec.bin(f, n).norm_sqr() / var;
        }
    }
    Ok(total)
}
