//! STFT analysis/synthesis with a sine window at 75% overlap.
//!
//! Frames are left-aligned: frame n covers samples `[n*hop, n*hop + window)`
//! with zero padding past the signal tail. The same sine window is used for
//! analysis and synthesis, so the squared-window overlap-add sums to the
//! COLA constant 2 on the interior and synthesis divides by the actual
//! window-energy envelope.

use super::{Fft, Waveform};
use crate::{Error, Result};
use num_complex::Complex64;

/// F x N complex STFT frames. Frame data is stored contiguously per frame.
#[derive(Clone, Debug)]
pub struct ComplexSpectrogram {
    data: Vec<Complex64>,
    bins: usize,
    frames: usize,
    window_size: usize,
    hop: usize,
    sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn new(
        bins: usize,
        frames: usize,
        window_size: usize,
        hop: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if bins != window_size / 2 + 1 {
            return Err(Error::Config(format!(
                "bins {bins} != window_size/2+1 = {}",
                window_size / 2 + 1
            )));
        }
        if hop != window_size / 4 {
            return Err(Error::Config(format!(
                "hop {hop} != window_size/4 = {} (75% overlap required)",
                window_size / 4
            )));
        }
        Ok(ComplexSpectrogram {
            data: vec![Complex64::new(0.0, 0.0); bins * frames],
            bins,
            frames,
            window_size,
            hop,
            sample_rate,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn bin(&self, f: usize, n: usize) -> Complex64 {
        self.data[n * self.bins + f]
    }

    pub fn bin_mut(&mut self, f: usize, n: usize) -> &mut Complex64 {
        &mut self.data[n * self.bins + f]
    }

    /// Frame `n` as a contiguous slice of F bins.
    pub fn frame(&self, n: usize) -> &[Complex64] {
        &self.data[n * self.bins..(n + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [Complex64] {
        &mut self.data[n * self.bins..(n + 1) * self.bins]
    }

    /// |value|^2 per frame: N vectors of length F.
    pub fn power_frames(&self) -> Vec<Vec<f64>> {
        (0..self.frames)
            .map(|n| self.frame(n).iter().map(|c| c.norm_sqr()).collect())
            .collect()
    }

    /// |value|^2 as a row-major F x N matrix.
    pub fn power_matrix(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.bins * self.frames];
        for n in 0..self.frames {
            for f in 0..self.bins {
                out[f * self.frames + n] = self.bin(f, n).norm_sqr();
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Geometry (bins, window, hop, rate) of two spectrograms matches.
    pub fn same_geometry(&self, other: &Self) -> bool {
        self.bins == other.bins
            && self.window_size == other.window_size
            && self.hop == other.hop
            && self.sample_rate == other.sample_rate
    }
}

/// Sine analysis/synthesis window `w[k] = sin(pi (k + 0.5) / size)`.
pub fn sine_window(size: usize) -> Result<Vec<f64>> {
    if size == 0 || !size.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "sine window size {size} must be positive and divisible by 4 for 75% overlap"
        )));
    }
    Ok((0..size)
        .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / size as f64).sin())
        .collect())
}

/// Number of left-aligned frames covering `len` samples.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len <= window {
        1
    } else {
        (len - window).div_ceil(hop) + 1
    }
}

/// STFT with the canonical 64 ms window for the waveform's sample rate.
pub fn stft(wave: &Waveform) -> Result<ComplexSpectrogram> {
    let window = (wave.sample_rate as f64 * 0.064).round() as usize;
    stft_with(wave, window)
}

/// STFT with an explicit window size (power of two, divisible by 4);
/// hop is window/4.
pub fn stft_with(wave: &Waveform, window_size: usize) -> Result<ComplexSpectrogram> {
    if wave.is_empty() {
        return Err(Error::Contract("stft: empty input".into()));
    }
    if wave.len() < window_size {
        return Err(Error::Contract(format!(
            "stft: signal length {} is shorter than the window {window_size}",
            wave.len()
        )));
    }
    let window = sine_window(window_size)?;
    let fft = Fft::new(window_size)?;
    let hop = window_size / 4;
    let n_frames = frame_count(wave.len(), window_size, hop);
    let bins = window_size / 2 + 1;
    let mut spec =
        ComplexSpectrogram::new(bins, n_frames, window_size, hop, wave.sample_rate)?;
    let mut buf = vec![0.0; window_size];
    for n in 0..n_frames {
        let start = n * hop;
        for (k, b) in buf.iter_mut().enumerate() {
            let idx = start + k;
            *b = if idx < wave.len() { wave.samples[idx] * window[k] } else { 0.0 };
        }
        spec.frame_mut(n).copy_from_slice(&fft.forward_real(&buf));
    }
    Ok(spec)
}

/// Window-energy normalizer floor (5% of the COLA constant). Edge samples
/// covered by a fraction of one window are tapered instead of divided by a
/// vanishing normalizer, which would blow up single-frame inconsistencies
/// of modified spectrograms into large spikes.
const WSUM_FLOOR: f64 = 0.1;

/// Weighted overlap-add inverse STFT, trimmed to `length` samples.
///
/// Exact on the COLA interior; the outermost ~(window/10) samples fade
/// toward zero (see [`WSUM_FLOOR`]).
pub fn istft(spec: &ComplexSpectrogram, length: usize) -> Result<Waveform> {
    let window = sine_window(spec.window_size())?;
    let fft = Fft::new(spec.window_size())?;
    let hop = spec.hop();
    let total = (spec.num_frames() - 1) * hop + spec.window_size();
    if length > total {
        return Err(Error::Config(format!(
            "istft: requested length {length} exceeds frame coverage {total}"
        )));
    }
    let mut acc = vec![0.0; total];
    let mut wsum = vec![0.0; total];
    for n in 0..spec.num_frames() {
        let frame = fft.inverse_real(spec.frame(n));
        let start = n * hop;
        for k in 0..spec.window_size() {
            acc[start + k] += frame[k] * window[k];
            wsum[start + k] += window[k] * window[k];
        }
    }
    let mut samples = Vec::with_capacity(length);
    for t in 0..length {
        samples.push(acc[t] / wsum[t].max(WSUM_FLOOR));
    }
    Waveform::new(samples, spec.sample_rate())
}
