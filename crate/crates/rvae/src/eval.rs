//! Mixture synthesis at controlled SNR and SI-SDR scoring.

use crate::rng::stream;
use crate::signal::Waveform;
use crate::{Error, Result};

/// Recipe for one synthetic mixture.
#[derive(Clone, Debug)]
pub struct MixSpec {
    pub clean: Waveform,
    pub noise: Waveform,
    pub snr_db: f64,
    pub seed: u64,
}

/// Scale the noise so `10 log10(||s||^2 / ||b||^2)` equals `snr_db` exactly
/// and return `(mixture, scaled_clean, scaled_noise)`; the mixture is the
/// bit-level sum of the two returned components. The noise is randomly
/// cropped (seeded) when longer than the clean signal.
pub fn mix_at_snr(spec: &MixSpec) -> Result<(Waveform, Waveform, Waveform)> {
    if spec.clean.sample_rate != spec.noise.sample_rate {
        return Err(Error::Contract(format!(
            "sample rate mismatch: clean {} Hz vs noise {} Hz",
            spec.clean.sample_rate, spec.noise.sample_rate
        )));
    }
    if spec.noise.len() < spec.clean.len() {
        return Err(Error::Contract(format!(
            "noise ({} samples) shorter than clean ({} samples)",
            spec.noise.len(),
            spec.clean.len()
        )));
    }
    let clean_energy = spec.clean.energy();
    if clean_energy == 0.0 {
        return Err(Error::Contract("clean signal has zero energy".into()));
    }

    use rand::Rng as _;
    let mut rng = stream(spec.seed, "mix-crop");
    let max_off = spec.noise.len() - spec.clean.len();
    let offset = if max_off == 0 { 0 } else { rng.random_range(0..=max_off) };
    let cropped = &spec.noise.samples[offset..offset + spec.clean.len()];
    let noise_energy: f64 = cropped.iter().map(|s| s * s).sum();
    if noise_energy == 0.0 {
        return Err(Error::Contract("noise crop has zero energy".into()));
    }

    let target = clean_energy / 10f64.powf(spec.snr_db / 10.0);
    let gain = (target / noise_energy).sqrt();
    let scaled_noise: Vec<f64> = cropped.iter().map(|s| s * gain).collect();
    let mixture: Vec<f64> = spec
        .clean
        .samples
        .iter()
        .zip(&scaled_noise)
        .map(|(c, b)| c + b)
        .collect();
    Ok((
        Waveform::new(mixture, spec.clean.sample_rate)?,
        spec.clean.clone(),
        Waveform::new(scaled_noise, spec.clean.sample_rate)?,
    ))
}

/// Scale-invariant signal-to-distortion ratio in dB, capped to +-100.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Contract(format!(
            "length mismatch: reference {} vs estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let ref_energy = reference.energy();
    if ref_energy == 0.0 {
        return Err(Error::Contract("si_sdr: zero-energy reference".into()));
    }
    let dot: f64 =
        estimate.samples.iter().zip(&reference.samples).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let mut target = 0.0;
    let mut resid = 0.0;
    for (e, r) in estimate.samples.iter().zip(&reference.samples) {
        let t = alpha * r;
        target += t * t;
        resid += (t - e) * (t - e);
    }
    if target == 0.0 {
        return Ok(-100.0); // zero-energy (or orthogonal) estimate
    }
    if resid == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (target / resid).log10()).clamp(-100.0, 100.0))
}

/// Median plus bootstrap 95% confidence interval (1e4 resamples, fixed
/// internal seed).
pub fn summarize(scores: &[f64]) -> Result<(f64, (f64, f64))> {
    if scores.is_empty() {
        return Err(Error::Contract("summarize: empty score list".into()));
    }
    let med = median(scores);
    use rand::Rng as _;
    let mut rng = stream(0x626f6f74, "bootstrap");
    let resamples = 10_000;
    let mut medians = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; scores.len()];
    for _ in 0..resamples {
        for slot in buf.iter_mut() {
            *slot = scores[rng.random_range(0..scores.len())];
        }
        medians.push(median(&buf));
    }
    medians.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = medians[(0.025 * resamples as f64) as usize];
    let hi = medians[(0.975 * resamples as f64) as usize - 1];
    Ok((med, (lo, hi)))
}

/// Drop the iSTFT edge region (window - hop samples) from both ends so
/// scores compare the overlap-add interior only.
pub fn trim_for_scoring(wave: &Waveform, window: usize, hop: usize) -> Result<Waveform> {
    let edge = window - hop;
    if wave.len() <= 2 * edge {
        return Err(Error::Contract(format!(
            "signal of {} samples too short to trim {edge} from each end",
            wave.len()
        )));
    }
    Waveform::new(wave.samples[edge..wave.len() - edge].to_vec(), wave.sample_rate)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;

    fn noise_wave(len: usize, seed: u64) -> Waveform {
        let mut rng = stream(seed, "eval-noise");
        Waveform::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000).unwrap()
    }

    #[test]
    fn snr_zero_gives_equal_energies() {
        let clean = noise_wave(4000, 1);
        let noise = noise_wave(8000, 2);
        let (_, s, b) =
            mix_at_snr(&MixSpec { clean, noise, snr_db: 0.0, seed: 3 }).unwrap();
        let rel = (s.energy() - b.energy()).abs() / s.energy();
        assert!(rel < 1e-10, "rel {rel}");
    }

    #[test]
    fn snr_plus_ten_means_tenth_energy() {
        let clean = noise_wave(4000, 4);
        let noise = noise_wave(8000, 5);
        let (_, s, b) =
            mix_at_snr(&MixSpec { clean, noise, snr_db: 10.0, seed: 6 }).unwrap();
        let rel = (b.energy() - s.energy() / 10.0).abs() / (s.energy() / 10.0);
        assert!(rel < 1e-10);
    }

    #[test]
    fn mixture_is_exact_bitwise_sum() {
        let clean = noise_wave(4000, 7);
        let noise = noise_wave(9000, 8);
        let (x, s, b) =
            mix_at_snr(&MixSpec { clean, noise, snr_db: -5.0, seed: 9 }).unwrap();
        for t in 0..x.len() {
            assert_eq!(x.samples[t], s.samples[t] + b.samples[t]);
        }
    }

    #[test]
    fn mixing_is_deterministic_given_seed() {
        let spec = MixSpec { clean: noise_wave(4000, 10), noise: noise_wave(9000, 11), snr_db: 5.0, seed: 12 };
        let (a, _, _) = mix_at_snr(&spec).unwrap();
        let (b, _, _) = mix_at_snr(&spec).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn silent_inputs_are_contract_errors() {
        let silent = Waveform::new(vec![0.0; 4000], 16_000).unwrap();
        let noise = noise_wave(8000, 13);
        assert!(matches!(
            mix_at_snr(&MixSpec { clean: silent, noise, snr_db: 0.0, seed: 1 }),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn si_sdr_perfect_and_scaled_estimates_hit_the_cap() {
        let s = noise_wave(2000, 14);
        assert_eq!(si_sdr(&s, &s).unwrap(), 100.0);
        let scaled =
            Waveform::new(s.samples.iter().map(|v| 3.7 * v).collect(), 16_000).unwrap();
        assert_eq!(si_sdr(&s, &scaled).unwrap(), 100.0);
    }

    #[test]
    fn si_sdr_orthogonal_equal_energy_noise_is_zero_db() {
        // orthogonal projection algebra: estimate = s + n, n hand-built
        // orthogonal to s with matched energy
        let s = noise_wave(4000, 15);
        let raw = noise_wave(4000, 16);
        let dot: f64 = raw.samples.iter().zip(&s.samples).map(|(a, b)| a * b).sum();
        let n_raw: Vec<f64> = raw
            .samples
            .iter()
            .zip(&s.samples)
            .map(|(r, sv)| r - dot / s.energy() * sv)
            .collect();
        let n_energy: f64 = n_raw.iter().map(|v| v * v).sum();
        let scale = (s.energy() / n_energy).sqrt();
        let est: Vec<f64> =
            s.samples.iter().zip(&n_raw).map(|(sv, nv)| sv + scale * nv).collect();
        let got = si_sdr(&s, &Waveform::new(est, 16_000).unwrap()).unwrap();
        assert!(got.abs() < 1e-9, "expected 0 dB, got {got}");
    }

    #[test]
    fn si_sdr_zero_estimate_is_floor() {
        let s = noise_wave(1000, 17);
        let zero = Waveform::new(vec![0.0; 1000], 16_000).unwrap();
        assert_eq!(si_sdr(&s, &zero).unwrap(), -100.0);
    }

    #[test]
    fn si_sdr_scale_invariance_property() {
        let mut rng = stream(18, "sisdr-prop");
        let s = noise_wave(3000, 19);
        let est = noise_wave(3000, 20);
        let base = si_sdr(&s, &est).unwrap();
        for _ in 0..10 {
            let alpha: f64 = rng.random_range(0.01..50.0);
            let scaled =
                Waveform::new(est.samples.iter().map(|v| alpha * v).collect(), 16_000).unwrap();
            let got = si_sdr(&s, &scaled).unwrap();
            assert!((got - base).abs() < 1e-9, "alpha {alpha}: {got} vs {base}");
            // global scaling of both arguments too
            let s2 = Waveform::new(s.samples.iter().map(|v| alpha * v).collect(), 16_000).unwrap();
            let got2 = si_sdr(&s2, &scaled).unwrap();
            assert!((got2 - base).abs() < 1e-9);
        }
    }

    #[test]
    fn summarize_basics() {
        let (med, (lo, hi)) = summarize(&[3.0, 3.0, 3.0, 3.0]).unwrap();
        assert_eq!(med, 3.0);
        assert_eq!((lo, hi), (3.0, 3.0));

        let (med, _) = summarize(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(med, 3.0);
    }

    #[test]
    fn bootstrap_ci_width_for_standard_normal() {
        // simulation oracle: n = 651 standard-normal scores give a median CI
        // of width roughly 0.1-0.2
        use rand_distr::StandardNormal;
        let mut rng = stream(21, "boot-sim");
        let scores: Vec<f64> = (0..651).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (_, (lo, hi)) = summarize(&scores).unwrap();
        let width = hi - lo;
        assert!((0.05..0.35).contains(&width), "CI width {width}");
    }
}
