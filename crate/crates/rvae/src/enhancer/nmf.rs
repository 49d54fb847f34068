//! NMF noise model and multiplicative M-step updates.
//!
//! The noise variance is `V_b = W_b H_b` (rank K) and the mixture variance
//! is `v_x,fn = g_n v_s,fn + v_b,fn`. The M-step minimizes
//! `C(phi) = sum_r sum_{f,n} d_IS(|x_fn|^2, v_x,fn(z_r))` with one
//! multiplicative sweep per call: H, then W, then g, each with the 1/2
//! exponent, recomputing V_x between sub-updates.

use crate::prior::VarianceField;
use crate::rng::Rng;
use crate::{Error, Result, NMF_FLOOR};

/// NMF noise + gain parameters `phi = {g, W_b, H_b}`.
#[derive(Clone, Debug)]
pub struct NoiseMixtureParams {
    /// `[F x K]` row-major.
    w: Vec<f64>,
    /// `[K x N]` row-major.
    h: Vec<f64>,
    /// Per-frame gains, length N.
    g: Vec<f64>,
    bins: usize,
    rank: usize,
    frames: usize,
}

impl NoiseMixtureParams {
    /// W, H uniform in `[0, 1)` (floored), g all ones.
    pub fn random_init(bins: usize, rank: usize, frames: usize, rng: &mut Rng) -> Self {
        use rand::Rng as _;
        let w = (0..bins * rank).map(|_| rng.random_range(0.0f64..1.0).max(NMF_FLOOR)).collect();
        let h = (0..rank * frames).map(|_| rng.random_range(0.0f64..1.0).max(NMF_FLOOR)).collect();
        NoiseMixtureParams { w, h, g: vec![1.0; frames], bins, rank, frames }
    }

    pub fn from_parts(
        bins: usize,
        rank: usize,
        frames: usize,
        w: Vec<f64>,
        h: Vec<f64>,
        g: Vec<f64>,
    ) -> Result<Self> {
        if w.len() != bins * rank || h.len() != rank * frames || g.len() != frames {
            return Err(Error::Dimension("NMF parameter sizes do not match".into()));
        }
        if w.iter().chain(&h).chain(&g).any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Contract("NMF parameters must be nonnegative and finite".into()));
        }
        let floor = |v: Vec<f64>| v.into_iter().map(|x| x.max(NMF_FLOOR)).collect();
        Ok(NoiseMixtureParams { w: floor(w), h: floor(h), g: floor(g), bins, rank, frames })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn gains(&self) -> &[f64] {
        &self.g
    }

    /// Noise variance `W_b H_b` as a row-major F x N matrix.
    pub fn noise_variance(&self) -> Vec<f64> {
        let (f_, k_, n_) = (self.bins, self.rank, self.frames);
        let mut out = vec![0.0; f_ * n_];
        for f in 0..f_ {
            for k in 0..k_ {
                let wfk = self.w[f * k_ + k];
                let hrow = &self.h[k * n_..(k + 1) * n_];
                let orow = &mut out[f * n_..(f + 1) * n_];
                for (o, hv) in orow.iter_mut().zip(hrow) {
                    *o += wfk * hv;
                }
            }
        }
        for o in &mut out {
            *o = o.max(NMF_FLOOR);
        }
        out
    }

    pub fn noise_variance_field(&self) -> Result<VarianceField> {
        VarianceField::from_vec(self.bins, self.frames, self.noise_variance())
    }
}

/// Mixture variance `v_x = g_n v_s + (W_b H_b)` elementwise.
pub fn mixture_variance(v_s: &VarianceField, phi: &NoiseMixtureParams) -> Result<VarianceField> {
    if v_s.bins() != phi.bins || v_s.num_frames() != phi.frames {
        return Err(Error::Dimension(format!(
            "variance {}x{} vs NMF {}x{}",
            v_s.bins(),
            v_s.num_frames(),
            phi.bins,
            phi.frames
        )));
    }
    let v_b = phi.noise_variance();
    let n = phi.frames;
    let mut out = vec![0.0; phi.bins * n];
    for f in 0..phi.bins {
        for t in 0..n {
            out[f * n + t] = phi.g[t] * v_s.value(f, t) + v_b[f * n + t];
        }
    }
    VarianceField::from_vec(phi.bins, n, out)
}

fn mixture_matrix(phi: &NoiseMixtureParams, v_s: &[f64]) -> Vec<f64> {
    let n = phi.frames;
    let mut out = phi.noise_variance();
    for f in 0..phi.bins {
        for t in 0..n {
            out[f * n + t] += phi.g[t] * v_s[f * n + t];
        }
    }
    out
}

/// `C(phi)`: summed IS divergence between the mixture power and the modeled
/// mixture variance, over all Monte Carlo samples.
pub fn mstep_cost(
    phi: &NoiseMixtureParams,
    x_power: &[f64],
    v_s_samples: &[VarianceField],
) -> f64 {
    let mut total = 0.0;
    for v_s in v_s_samples {
        let v_x = mixture_matrix(phi, v_s.data());
        for (a, v) in x_power.iter().zip(&v_x) {
            total += crate::is_divergence(*a, *v);
        }
    }
    total
}

/// One multiplicative sweep (H, then W, then g) in place.
pub fn mstep_update(
    phi: &mut NoiseMixtureParams,
    x_power: &[f64],
    v_s_samples: &[VarianceField],
) -> Result<()> {
    let (f_, k_, n_) = (phi.bins, phi.rank, phi.frames);
    if x_power.len() != f_ * n_ {
        return Err(Error::Dimension("x_power size does not match NMF geometry".into()));
    }
    if v_s_samples.is_empty() {
        return Err(Error::Contract("M-step needs at least one variance sample".into()));
    }
    for v_s in v_s_samples {
        if v_s.bins() != f_ || v_s.num_frames() != n_ {
            return Err(Error::Dimension("variance sample geometry mismatch".into()));
        }
    }

    // accumulated across samples: X2 .* Vx^-2 and Vx^-1 (F x N)
    let accum = |phi: &NoiseMixtureParams| {
        let mut num = vec![0.0; f_ * n_];
        let mut den = vec![0.0; f_ * n_];
        for v_s in v_s_samples {
            let v_x = mixture_matrix(phi, v_s.data());
            for i in 0..f_ * n_ {
                let inv = 1.0 / v_x[i];
                num[i] += x_power[i] * inv * inv;
                den[i] += inv;
            }
        }
        (num, den)
    };

    // H update
    {
        let (num_m, den_m) = accum(phi);
        let mut h_new = phi.h.clone();
        for k in 0..k_ {
            for t in 0..n_ {
                let mut num = 0.0;
                let mut den = 0.0;
                for f in 0..f_ {
                    let wfk = phi.w[f * k_ + k];
                    num += wfk * num_m[f * n_ + t];
                    den += wfk * den_m[f * n_ + t];
                }
                h_new[k * n_ + t] = (phi.h[k * n_ + t] * (num / den).sqrt()).max(NMF_FLOOR);
            }
        }
        phi.h = h_new;
    }

    // W update (V_x recomputed)
    {
        let (num_m, den_m) = accum(phi);
        let mut w_new = phi.w.clone();
        for f in 0..f_ {
            for k in 0..k_ {
                let mut num = 0.0;
                let mut den = 0.0;
                for t in 0..n_ {
                    let hkt = phi.h[k * n_ + t];
                    num += num_m[f * n_ + t] * hkt;
                    den += den_m[f * n_ + t] * hkt;
                }
                w_new[f * k_ + k] = (phi.w[f * k_ + k] * (num / den).sqrt()).max(NMF_FLOOR);
            }
        }
        phi.w = w_new;
    }

    // g update (V_x recomputed, per-sample V_s weighting)
    {
        let mut num = vec![0.0; n_];
        let mut den = vec![0.0; n_];
        for v_s in v_s_samples {
            let v_x = mixture_matrix(phi, v_s.data());
            for f in 0..f_ {
                for t in 0..n_ {
                    let i = f * n_ + t;
                    let inv = 1.0 / v_x[i];
                    num[t] += x_power[i] * v_s.data()[i] * inv * inv;
                    den[t] += v_s.data()[i] * inv;
                }
            }
        }
        for t in 0..n_ {
            phi.g[t] = (phi.g[t] * (num[t] / den[t]).sqrt()).max(NMF_FLOOR);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;

    fn random_field(bins: usize, frames: usize, seed: u64, lo: f64, hi: f64) -> VarianceField {
        let mut rng = stream(seed, "nmf-field");
        let data = (0..bins * frames).map(|_| rng.random_range(lo..hi)).collect();
        VarianceField::from_vec(bins, frames, data).unwrap()
    }

    #[test]
    fn mixture_variance_limiting_cases() {
        let mut rng = stream(1, "nmf");
        let mut phi = NoiseMixtureParams::random_init(4, 2, 3, &mut rng);

        // noise floored to ~0, unit gains: v_x ~ v_s
        for v in &mut phi.w {
            *v = crate::NMF_FLOOR;
        }
        for v in &mut phi.h {
            *v = crate::NMF_FLOOR;
        }
        let v_s = random_field(4, 3, 2, 0.5, 2.0);
        let v_x = mixture_variance(&v_s, &phi).unwrap();
        for f in 0..4 {
            for n in 0..3 {
                assert!((v_x.value(f, n) - v_s.value(f, n)).abs() < 1e-9);
            }
        }

        // v_s floored to ~0: v_x ~ W H
        let mut rng = stream(3, "nmf");
        let phi = NoiseMixtureParams::random_init(4, 2, 3, &mut rng);
        let tiny = VarianceField::from_vec(4, 3, vec![1e-12; 12]).unwrap();
        let v_x = mixture_variance(&tiny, &phi).unwrap();
        let v_b = phi.noise_variance();
        for f in 0..4 {
            for n in 0..3 {
                assert!((v_x.value(f, n) - v_b[f * 3 + n]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mixture_variance_matches_scalar_oracle() {
        let mut rng = stream(5, "nmf");
        let phi = NoiseMixtureParams::random_init(5, 3, 4, &mut rng);
        let v_s = random_field(5, 4, 6, 0.1, 1.5);
        let v_x = mixture_variance(&v_s, &phi).unwrap();
        for f in 0..5 {
            for n in 0..4 {
                let mut vb = 0.0;
                for k in 0..3 {
                    vb += phi.w[f * 3 + k] * phi.h[k * 4 + n];
                }
                let want = phi.g[n] * v_s.value(f, n) + vb;
                assert!((v_x.value(f, n) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mstep_fixed_point_when_model_matches_power() {
        // if v_x = |x|^2 exactly, every update bracket is 1
        let mut rng = stream(7, "nmf");
        let phi0 = NoiseMixtureParams::random_init(6, 2, 5, &mut rng);
        let v_s = random_field(6, 5, 8, 0.2, 1.0);
        let v_x = mixture_variance(&v_s, &phi0).unwrap();
        let x_power: Vec<f64> = v_x.data().to_vec();
        let mut phi = phi0.clone();
        mstep_update(&mut phi, &x_power, std::slice::from_ref(&v_s)).unwrap();
        for (a, b) in phi0.w.iter().zip(&phi.w) {
            assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
        }
        for (a, b) in phi0.h.iter().zip(&phi.h) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
        for (a, b) in phi0.g.iter().zip(&phi.g) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn mstep_monotonically_decreases_cost() {
        // 200 sweeps on a random 64 x 50 problem, K = 8
        let mut rng = stream(9, "nmf-mono");
        let mut phi = NoiseMixtureParams::random_init(64, 8, 50, &mut rng);
        let x_power: Vec<f64> = (0..64 * 50).map(|_| rng.random_range(0.01..4.0)).collect();
        let v_s = random_field(64, 50, 10, 0.05, 2.0);
        let samples = [v_s];
        let mut cost = mstep_cost(&phi, &x_power, &samples);
        for sweep in 0..200 {
            mstep_update(&mut phi, &x_power, &samples).unwrap();
            let new_cost = mstep_cost(&phi, &x_power, &samples);
            assert!(
                new_cost <= cost + 1e-9 * cost.abs(),
                "sweep {sweep}: {cost} -> {new_cost}"
            );
            cost = new_cost;
        }
    }

    #[test]
    fn scalar_case_matches_hand_derived_update() {
        // F = 1, K = 1, negligible speech and gain: v_x ~ w * h_n, and the
        // hand-derived IS-NMF update is h <- h * sqrt(x2 / (w h))
        let w0 = 0.7;
        let h0 = [0.4, 1.3, 0.9];
        let x2 = [0.2, 0.8, 1.1];
        let mut phi =
            NoiseMixtureParams::from_parts(1, 1, 3, vec![w0], h0.to_vec(), vec![1e-12; 3])
                .unwrap();
        let v_s = VarianceField::from_vec(1, 3, vec![1e-12; 3]).unwrap();
        let mut expected_h = [0.0; 3];
        for t in 0..3 {
            expected_h[t] = h0[t] * (x2[t] / (w0 * h0[t])).sqrt();
        }
        mstep_update(&mut phi, &x2, std::slice::from_ref(&v_s)).unwrap();
        for t in 0..3 {
            assert!(
                (phi.h[t] - expected_h[t]).abs() < 1e-9,
                "h[{t}] {} vs {}",
                phi.h[t],
                expected_h[t]
            );
        }
    }

    #[test]
    fn nonnegativity_is_preserved() {
        let mut rng = stream(11, "nmf-pos");
        let mut phi = NoiseMixtureParams::random_init(8, 2, 6, &mut rng);
        let x_power: Vec<f64> = (0..48).map(|_| rng.random_range(0.0..2.0)).collect();
        for seed in 0..20 {
            let v_s = random_field(8, 6, 100 + seed, 0.01, 1.0);
            mstep_update(&mut phi, &x_power, &[v_s]).unwrap();
            assert!(phi.w.iter().all(|&v| v >= crate::NMF_FLOOR));
            assert!(phi.h.iter().all(|&v| v >= crate::NMF_FLOOR));
            assert!(phi.g.iter().all(|&v| v >= crate::NMF_FLOOR));
        }
    }
}
