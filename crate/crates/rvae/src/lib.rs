//! Deep generative speech priors for single-channel speech enhancement.
//!
//! The library trains a variational autoencoder over clean speech
//! spectrograms (feed-forward, recurrent or bidirectional-recurrent
//! variants) and enhances noisy mixtures at test time by combining the
//! learned prior with an NMF noise model inside a variational EM loop.
//!
//! Modules follow the processing pipeline:
//!
//! - [`autodiff`]: reverse-mode AD engine (dense, LSTM, Adam) backing all
//!   network code.
//! - [`signal`]: STFT analysis/synthesis with a sine window and WAV I/O.
//! - [`prior`]: generative decoders mapping latent sequences to speech
//!   variances.
//! - [`encoder`]: structured inference networks and recursive posterior
//!   sampling.
//! - [`training`]: variational free energy maximization, checkpointing and
//!   the synthetic corpus generator.
//! - [`enhancer`]: VEM / PEEM enhancement with multiplicative NMF updates
//!   and Wiener-like reconstruction.
//! - [`eval`]: SNR-controlled mixing, SI-SDR scoring and bootstrap
//!   summaries.
//! - [`diagnostics`]: finite-difference gradient suites shared by the
//!   `gradcheck` command and the acceptance tests.

pub mod autodiff;
pub mod diagnostics;
pub mod encoder;
pub mod enhancer;
pub mod error;
pub mod eval;
pub mod prior;
pub mod rng;
pub mod signal;
pub mod training;

pub use error::{Error, Result};

/// Variance floor applied to every decoder/encoder variance output.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Itakura-Saito divergence `d_IS(a, b) = a/b - ln(a/b) - 1`.
pub fn is_divergence(a: f64, b: f64) -> f64 {
    let r = a / b;
    r - r.ln() - 1.0
}

/// Strict positivity floor for NMF noise/gain parameters.
pub const NMF_FLOOR: f64 = 1e-12;

/// Model variant: which graphical structure the generative model (and its
/// paired inference model) realizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Per-frame feed-forward model: frame n depends on z_n only.
    Ffnn,
    /// Causal recurrent model: frame n depends on z_{0..=n}.
    Rnn,
    /// Bidirectional recurrent model: frame n depends on the whole z.
    Brnn,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ffnn => "ffnn",
            Variant::Rnn => "rnn",
            Variant::Brnn => "brnn",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ffnn" => Ok(Variant::Ffnn),
            "rnn" => Ok(Variant::Rnn),
            "brnn" => Ok(Variant::Brnn),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected ffnn|rnn|brnn)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
