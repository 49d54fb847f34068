//! Signal front-end: STFT analysis/synthesis and WAV I/O.
//!
//! Canonical geometry is a 64 ms sine window with 75% overlap at 16 kHz
//! (window 1024 samples, hop 256, F = 513 positive-frequency bins).

mod fft;
mod stft;
mod wav;

pub use fft::Fft;
pub use stft::{istft, sine_window, stft, stft_with, ComplexSpectrogram};
pub use wav::{read_wav, write_wav, WavFormat};

use crate::{Error, Result};

/// Canonical sample rate for the toolkit.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with 64-bit samples nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("waveform contains non-finite samples".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}
