//! Iterative radix-2 FFT with precomputed twiddles and bit-reversal table.

use crate::{Error, Result};
use num_complex::Complex64;

/// FFT plan for a fixed power-of-two size.
pub struct Fft {
    n: usize,
    rev: Vec<u32>,
    /// Twiddles e^{-2πi k / n} for k in 0..n/2.
    twiddle: Vec<Complex64>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Config(format!("FFT size {n} is not a power of two")));
        }
        let bits = n.trailing_zeros();
        let rev = (0..n as u32).map(|i| i.reverse_bits() >> (32 - bits)).collect();
        let twiddle = (0..n / 2)
            .map(|k| {
                let angle = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        Ok(Fft { n, rev, twiddle })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// In-place forward DFT (no normalization).
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "fft buffer length mismatch");
        for i in 0..self.n {
            let j = self.rev[i] as usize;
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < self.n {
            let stride = self.n / (2 * half);
            for start in (0..self.n).step_by(2 * half) {
                for k in 0..half {
                    let w = self.twiddle[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }

    /// In-place inverse DFT including the 1/n factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
    }

    /// Real-input forward transform: returns the n/2 + 1 nonnegative bins.
    pub fn forward_real(&self, input: &[f64]) -> Vec<Complex64> {
        assert_eq!(input.len(), self.n);
        let mut buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf);
        buf.truncate(self.n / 2 + 1);
        buf
    }

    /// Inverse of [`Fft::forward_real`]: rebuilds the Hermitian spectrum and
    /// returns the real time signal.
    pub fn inverse_real(&self, bins: &[Complex64]) -> Vec<f64> {
        assert_eq!(bins.len(), self.n / 2 + 1, "expected n/2+1 bins");
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        buf[..bins.len()].copy_from_slice(bins);
        for k in 1..self.n / 2 {
            buf[self.n - k] = bins[k].conj();
        }
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }
}
