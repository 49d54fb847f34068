//! Test-time speech enhancement.
//!
//! The mixture likelihood combines the trained speech prior with the NMF
//! noise model (`v_x = g v_s(z) + W_b H_b`). Two E-steps are provided:
//!
//! - VEM: the encoder copy is fine-tuned on the noisy input by gradient
//!   ascent on the mixture VFE (decoder and `phi` frozen);
//! - PEEM: a MAP point estimate of z is optimized instead.
//!
//! The M-step runs the multiplicative updates from [`mstep_update`], and
//! the final estimate is a Wiener-like variance-ratio filter averaged over
//! posterior samples.

mod nmf;

pub use nmf::{mixture_variance, mstep_cost, mstep_update, NoiseMixtureParams};

use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::encoder::{sample_posterior, standard_normal_frames, EncoderParams};
use crate::prior::{decode, DecoderParams, LatentSequence, VarianceField};
use crate::rng::stream;
use crate::signal::{istft, stft, ComplexSpectrogram, Waveform};
use crate::training::ModelCheckpoint;
use crate::{Error, Result, Variant};

/// E-step flavor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Vem,
    Peem,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Vem => "vem",
            Algorithm::Peem => "peem",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vem" => Ok(Algorithm::Vem),
            "peem" => Ok(Algorithm::Peem),
            other => Err(Error::Config(format!("unknown algorithm `{other}` (vem|peem)"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Enhancement settings.
#[derive(Clone, Debug)]
pub struct EnhanceConfig {
    pub algorithm: Algorithm,
    pub iterations: usize,
    /// NMF rank K.
    pub rank: usize,
    /// Gradient steps per E-step.
    pub estep_grad_steps: usize,
    pub estep_adam_alpha: f64,
    /// Monte Carlo samples R.
    pub mc_samples: usize,
    pub seed: u64,
}

impl EnhanceConfig {
    /// Defaults: 500 iterations, K = 8, R = 1, Adam step 1e-2, and 10
    /// E-step gradient steps for the ffnn variant / 1 for the recurrent
    /// ones.
    pub fn new(algorithm: Algorithm, variant: Variant) -> Self {
        EnhanceConfig {
            algorithm,
            iterations: 500,
            rank: 8,
            estep_grad_steps: if variant == Variant::Ffnn { 10 } else { 1 },
            estep_adam_alpha: 1e-2,
            mc_samples: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.rank == 0 || self.mc_samples == 0 {
            return Err(Error::Config(
                "iterations, rank and mc_samples must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-iteration convergence trace.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub iteration: usize,
    /// M-step criterion C(phi) after the sweep.
    pub cost: f64,
    /// Mixture-VFE estimate (constant-dropped form) after the E-step.
    pub vfe: f64,
}

/// Result of [`enhance`].
pub struct EnhanceOutcome {
    pub wave: Waveform,
    pub trace: Vec<TraceRow>,
    /// True when the E-step NaN guard gave up (parameters reverted).
    pub estep_aborted: bool,
}

// ---- mixture objective on the tape -----------------------------------------

/// Build the mixture VFE (constant-dropped) for the VEM E-step.
/// Returns (loss, objective value) where loss = -objective.
#[allow(clippy::too_many_arguments)]
fn vem_objective(
    tape: &mut Tape,
    enc_vars: &crate::encoder::EncoderVars,
    dec_vars: &crate::prior::DecoderVars,
    phi: &NoiseMixtureParams,
    feat: &[Vec<f64>],
    power: &[Vec<f64>],
    eps: &[Vec<f64>],
    latent_dim: usize,
) -> (Var, f64) {
    let bins = phi.bins();
    let v_b = phi.noise_variance();
    let frames = feat.len();
    let feat_vars: Vec<Var> = feat.iter().map(|u| tape.constant(1, bins, u.clone())).collect();
    let eps_vars: Vec<Var> =
        eps.iter().map(|e| tape.constant(1, latent_dim, e.clone())).collect();
    let sampled = enc_vars.sample(tape, &feat_vars, &eps_vars);
    let v_s = dec_vars.forward(tape, &sampled.z);

    let mut v_x = Vec::with_capacity(frames);
    for (n, &vs) in v_s.iter().enumerate() {
        let scaled = tape.scale(vs, phi.gains()[n]);
        let col: Vec<f64> = (0..bins).map(|f| v_b[f * frames + n]).collect();
        let vb = tape.constant(1, bins, col);
        v_x.push(tape.add(scaled, vb));
    }
    let power_vars: Vec<Var> =
        power.iter().map(|p| tape.constant(1, bins, p.clone())).collect();
    let parts = crate::training::objective_terms(tape, &power_vars, &v_x, &sampled, None);
    let objective = parts.objective;
    let value = tape.scalar(objective);
    let loss = tape.neg(objective);
    (loss, value)
}

/// Stateful VEM E-step optimizer with a persistent Adam trajectory and the
/// NaN guard (revert, halve once, then freeze).
pub(crate) struct VemOptimizer {
    pub enc: EncoderParams,
    adam: AdamState,
    halved: bool,
    pub frozen: bool,
}

impl VemOptimizer {
    pub fn new(enc: EncoderParams, alpha: f64) -> Self {
        let adam = {
            let tensors = enc.named_tensors();
            let refs: Vec<&Tensor> = tensors.iter().map(|(_, t)| *t).collect();
            AdamState::new(AdamConfig::estep().with_alpha(alpha), &refs)
        };
        VemOptimizer { enc, adam, halved: false, frozen: false }
    }

    /// One gradient-ascent step with the given noise draws. Returns the
    /// pre-step objective value.
    pub fn step_with_eps(
        &mut self,
        dec: &DecoderParams,
        phi: &NoiseMixtureParams,
        feat: &[Vec<f64>],
        power: &[Vec<f64>],
        eps: &[Vec<f64>],
    ) -> Result<f64> {
        if self.frozen {
            return Err(Error::Numeric("E-step aborted after repeated NaN".into()));
        }
        let snapshot: Vec<Vec<f64>> =
            self.enc.named_tensors().iter().map(|(_, t)| t.data().to_vec()).collect();

        match self.attempt(dec, phi, feat, power, eps) {
            Ok(v) => Ok(v),
            Err(Error::Numeric(_)) => {
                self.restore(&snapshot);
                if !self.halved {
                    self.halved = true;
                    self.adam.cfg.alpha *= 0.5;
                    match self.attempt(dec, phi, feat, power, eps) {
                        Ok(v) => Ok(v),
                        Err(e) => {
                            self.restore(&snapshot);
                            self.frozen = true;
                            Err(e)
                        }
                    }
                } else {
                    self.frozen = true;
                    Err(Error::Numeric("E-step aborted after repeated NaN".into()))
                }
            }
            Err(e) => Err(e),
        }
    }

    fn attempt(
        &mut self,
        dec: &DecoderParams,
        phi: &NoiseMixtureParams,
        feat: &[Vec<f64>],
        power: &[Vec<f64>],
        eps: &[Vec<f64>],
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let enc_vars = self.enc.register(&mut tape, true);
        let dec_vars = dec.register(&mut tape, false);
        let enc_params = enc_vars.param_vars();
        let (loss, value) = vem_objective(
            &mut tape,
            &enc_vars,
            &dec_vars,
            phi,
            feat,
            power,
            eps,
            self.enc.latent_dim,
        );
        if !value.is_finite() {
            return Err(Error::Numeric("mixture VFE is not finite".into()));
        }
        let grads = tape.backward(loss)?;
        let collected: Vec<Vec<f64>> = enc_params
            .iter()
            .map(|&v| {
                let (r, c) = tape.shape(v);
                grads.get_or_zeros(v, r * c)
            })
            .collect();
        if collected.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("mixture VFE gradient is not finite".into()));
        }
        let mut tensors = self.enc.named_tensors_mut();
        let mut params: Vec<&mut Tensor> = tensors.iter_mut().map(|(_, t)| &mut **t).collect();
        let refs: Vec<&[f64]> = collected.iter().map(|g| g.as_slice()).collect();
        self.adam.step(&mut params, &refs);
        drop(tensors);
        if self.enc.named_tensors().iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Numeric("encoder parameters became non-finite".into()));
        }
        Ok(value)
    }

    fn restore(&mut self, snapshot: &[Vec<f64>]) {
        for ((_, t), saved) in self.enc.named_tensors_mut().iter_mut().zip(snapshot) {
            t.data_mut().copy_from_slice(saved);
        }
    }
}

/// Fine-tune a private encoder copy on the noisy spectrogram:
/// `cfg.estep_grad_steps` Adam ascent steps on the mixture VFE w.r.t. the
/// encoder only (`phi` and the decoder stay frozen).
pub fn estep_vem(
    enc: EncoderParams,
    dec: &DecoderParams,
    phi: &NoiseMixtureParams,
    x: &ComplexSpectrogram,
    cfg: &EnhanceConfig,
) -> Result<EncoderParams> {
    let feat = crate::encoder::features(x);
    let power = x.power_frames();
    let mut opt = VemOptimizer::new(enc, cfg.estep_adam_alpha);
    let mut rng = stream(cfg.seed, "estep-vem");
    for _ in 0..cfg.estep_grad_steps {
        let eps = standard_normal_frames(x.num_frames(), opt.enc.latent_dim, &mut rng);
        match opt.step_with_eps(dec, phi, &feat, &power, &eps) {
            Ok(_) => {}
            Err(Error::Numeric(_)) if opt.frozen => break,
            Err(e) => return Err(e),
        }
    }
    Ok(opt.enc)
}

// ---- PEEM -------------------------------------------------------------------

/// Full MAP objective `ln p(x|z; phi) + ln p(z)` evaluated directly.
pub fn peem_objective(
    dec: &DecoderParams,
    phi: &NoiseMixtureParams,
    x: &ComplexSpectrogram,
    z: &LatentSequence,
) -> Result<f64> {
    let v_s = decode(dec, z)?;
    let v_x = mixture_variance(&v_s, phi)?;
    let ll = crate::prior::log_likelihood(x, &v_x)?;
    let prior: f64 = z
        .data()
        .iter()
        .map(|v| -0.5 * (v * v + (2.0 * std::f64::consts::PI).ln()))
        .sum();
    Ok(ll + prior)
}

/// Stateful MAP optimizer over z with the same NaN guard as the VEM path.
pub(crate) struct PeemOptimizer {
    pub z: LatentSequence,
    adam: AdamState,
    halved: bool,
    pub frozen: bool,
}

impl PeemOptimizer {
    pub fn new(z: LatentSequence, alpha: f64) -> Self {
        let flat = Tensor::from_vec(&[z.num_frames(), z.latent_dim()], z.data().to_vec())
            .expect("latent sequence is well-formed");
        let adam = AdamState::new(AdamConfig::estep().with_alpha(alpha), &[&flat]);
        PeemOptimizer { z, adam, halved: false, frozen: false }
    }

    /// One ascent step on the MAP objective. Returns the pre-step value
    /// (full form, constants included).
    pub fn step(
        &mut self,
        dec: &DecoderParams,
        phi: &NoiseMixtureParams,
        power: &[Vec<f64>],
    ) -> Result<f64> {
        if self.frozen {
            return Err(Error::Numeric("E-step aborted after repeated NaN".into()));
        }
        let snapshot = self.z.clone();
        match self.attempt(dec, phi, power) {
            Ok(v) => Ok(v),
            Err(Error::Numeric(_)) => {
                self.z = snapshot.clone();
                if !self.halved {
                    self.halved = true;
                    self.adam.cfg.alpha *= 0.5;
                    match self.attempt(dec, phi, power) {
                        Ok(v) => Ok(v),
                        Err(e) => {
                            self.z = snapshot;
                            self.frozen = true;
                            Err(e)
                        }
                    }
                } else {
                    self.frozen = true;
                    Err(Error::Numeric("E-step aborted after repeated NaN".into()))
                }
            }
            Err(e) => Err(e),
        }
    }

    fn attempt(
        &mut self,
        dec: &DecoderParams,
        phi: &NoiseMixtureParams,
        power: &[Vec<f64>],
    ) -> Result<f64> {
        let frames = self.z.num_frames();
        let latent = self.z.latent_dim();
        let bins = phi.bins();
        let v_b = phi.noise_variance();

        let mut tape = Tape::new();
        let dec_vars = dec.register(&mut tape, false);
        let z_vars: Vec<Var> =
            (0..frames).map(|n| tape.variable(1, latent, self.z.frame(n).to_vec())).collect();
        let v_s = dec_vars.forward(&mut tape, &z_vars);

        let mut data_terms = Vec::with_capacity(frames);
        let mut prior_terms = Vec::with_capacity(frames);
        for n in 0..frames {
            let scaled = tape.scale(v_s[n], phi.gains()[n]);
            let col: Vec<f64> = (0..bins).map(|f| v_b[f * frames + n]).collect();
            let vb = tape.constant(1, bins, col);
            let v_x = tape.add(scaled, vb);
            let a = tape.constant(1, bins, power[n].clone());
            let ratio = tape.div(a, v_x);
            let lnv = tape.ln(v_x);
            let fit = tape.add(ratio, lnv);
            data_terms.push(tape.sum_all(fit));

            let zsq = tape.mul(z_vars[n], z_vars[n]);
            prior_terms.push(tape.sum_all(zsq));
        }
        let data = tape.add_scalars(&data_terms);
        let prior = tape.add_scalars(&prior_terms);
        let half_prior = tape.scale(prior, 0.5);
        let neg = tape.add(data, half_prior);
        // neg = sum(a/v_x + ln v_x) + 0.5 sum(z^2) = constants - objective
        let value_wo_const = -tape.scalar(neg);
        if !value_wo_const.is_finite() {
            return Err(Error::Numeric("MAP objective is not finite".into()));
        }
        let grads = tape.backward(neg)?;
        let mut flat = vec![0.0; frames * latent];
        for (n, zv) in z_vars.iter().enumerate() {
            let g = grads.get_or_zeros(*zv, latent);
            flat[n * latent..(n + 1) * latent].copy_from_slice(&g);
        }
        if flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("MAP gradient is not finite".into()));
        }
        let mut z_tensor = Tensor::from_vec(&[frames, latent], self.z.data().to_vec()).unwrap();
        self.adam.step(&mut [&mut z_tensor], &[&flat]);
        if !z_tensor.is_finite() {
            return Err(Error::Numeric("latent estimate became non-finite".into()));
        }
        self.z.data_mut().copy_from_slice(z_tensor.data());

        let constants = -(bins as f64 * frames as f64) * std::f64::consts::PI.ln()
            - 0.5 * (frames * latent) as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(value_wo_const + constants)
    }
}

/// MAP gradient ascent on `ln p(x|z) + ln p(z)` w.r.t. z.
pub fn estep_peem(
    dec: &DecoderParams,
    phi: &NoiseMixtureParams,
    x: &ComplexSpectrogram,
    z_init: &LatentSequence,
    cfg: &EnhanceConfig,
) -> Result<LatentSequence> {
    if !z_init.is_finite() {
        return Err(Error::Contract("PEEM z_init must be finite".into()));
    }
    let power = x.power_frames();
    let mut opt = PeemOptimizer::new(z_init.clone(), cfg.estep_adam_alpha);
    for _ in 0..cfg.estep_grad_steps {
        match opt.step(dec, phi, &power) {
            Ok(_) => {}
            Err(Error::Numeric(_)) if opt.frozen => break,
            Err(e) => return Err(e),
        }
    }
    Ok(opt.z)
}

// ---- Wiener reconstruction ----------------------------------------------------

/// Variance-ratio filter averaged over samples; the returned coefficients
/// are the scaled estimate `sqrt(g) * s_hat`, i.e. a per-entry gain
/// `g_n * mean_r[v_s / v_x]` applied to x.
pub fn wiener_filter(
    x: &ComplexSpectrogram,
    v_s_samples: &[VarianceField],
    v_b: &VarianceField,
    g: &[f64],
) -> Result<ComplexSpectrogram> {
    if v_s_samples.is_empty() {
        return Err(Error::Contract("wiener_filter needs at least one sample".into()));
    }
    let bins = x.bins();
    let frames = x.num_frames();
    if v_b.bins() != bins || v_b.num_frames() != frames || g.len() != frames {
        return Err(Error::Dimension("wiener_filter geometry mismatch".into()));
    }
    for v_s in v_s_samples {
        if v_s.bins() != bins || v_s.num_frames() != frames {
            return Err(Error::Dimension("wiener_filter sample geometry mismatch".into()));
        }
    }
    let mut out = x.clone();
    let r = v_s_samples.len() as f64;
    for (n, &gn) in g.iter().enumerate() {
        for f in 0..bins {
            let mut ratio = 0.0;
            for v_s in v_s_samples {
                let vs = v_s.value(f, n);
                let vx = gn * vs + v_b.value(f, n);
                ratio += vs / vx;
            }
            let gain = gn * ratio / r;
            *out.bin_mut(f, n) = x.bin(f, n) * gain;
        }
    }
    Ok(out)
}

/// Decode latent samples and apply the Wiener-like filter.
pub fn wiener_reconstruct(
    x: &ComplexSpectrogram,
    dec: &DecoderParams,
    z_samples: &[LatentSequence],
    phi: &NoiseMixtureParams,
) -> Result<ComplexSpectrogram> {
    let v_s: Vec<VarianceField> =
        z_samples.iter().map(|z| decode(dec, z)).collect::<Result<_>>()?;
    wiener_filter(x, &v_s, &phi.noise_variance_field()?, phi.gains())
}

// ---- full loop ------------------------------------------------------------------

/// Enhance one utterance: init phi, alternate E and M steps for
/// `cfg.iterations`, reconstruct, inverse STFT, trim to the input length.
pub fn enhance(
    x_wave: &Waveform,
    ckpt: &ModelCheckpoint,
    cfg: &EnhanceConfig,
) -> Result<EnhanceOutcome> {
    cfg.validate()?;
    let x = stft(x_wave)?;
    if x.bins() != ckpt.meta.bins {
        return Err(Error::Config(format!(
            "input yields {} bins but the checkpoint was trained with {}",
            x.bins(),
            ckpt.meta.bins
        )));
    }
    let frames = x.num_frames();
    let power = x.power_frames();
    let x_power_matrix = x.power_matrix();
    let feat = crate::encoder::features(&x);

    let mut phi = NoiseMixtureParams::random_init(
        x.bins(),
        cfg.rank,
        frames,
        &mut stream(cfg.seed, "nmf-init"),
    );
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut estep_aborted = false;
    let mut sample_rng = stream(cfg.seed, "posterior-samples");

    let spec_estimate = match cfg.algorithm {
        Algorithm::Vem => {
            let mut opt = VemOptimizer::new(ckpt.encoder.clone(), cfg.estep_adam_alpha);
            let mut eps_rng = stream(cfg.seed, "estep-eps");
            let mut last_vfe = f64::NAN;
            for iteration in 0..cfg.iterations {
                if !opt.frozen {
                    for _ in 0..cfg.estep_grad_steps {
                        let eps =
                            standard_normal_frames(frames, opt.enc.latent_dim, &mut eps_rng);
                        match opt.step_with_eps(&ckpt.decoder, &phi, &feat, &power, &eps) {
                            Ok(v) => last_vfe = v,
                            Err(Error::Numeric(_)) if opt.frozen => {
                                estep_aborted = true;
                                break;
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
                let v_s: Vec<VarianceField> = (0..cfg.mc_samples)
                    .map(|_| {
                        let (z, _) = sample_posterior(&opt.enc, &x, &mut sample_rng, false)?;
                        decode(&ckpt.decoder, &z)
                    })
                    .collect::<Result<_>>()?;
                mstep_update(&mut phi, &x_power_matrix, &v_s)?;
                trace.push(TraceRow {
                    iteration,
                    cost: mstep_cost(&phi, &x_power_matrix, &v_s),
                    vfe: last_vfe,
                });
            }
            let z_samples: Vec<LatentSequence> = (0..cfg.mc_samples)
                .map(|_| {
                    sample_posterior(&opt.enc, &x, &mut sample_rng, false).map(|(z, _)| z)
                })
                .collect::<Result<_>>()?;
            wiener_reconstruct(&x, &ckpt.decoder, &z_samples, &phi)?
        }
        Algorithm::Peem => {
            let (z0, _) = crate::encoder::posterior_mean(&ckpt.encoder, &x)?;
            let mut opt = PeemOptimizer::new(z0, cfg.estep_adam_alpha);
            let mut last_obj = f64::NAN;
            for iteration in 0..cfg.iterations {
                if !opt.frozen {
                    for _ in 0..cfg.estep_grad_steps {
                        match opt.step(&ckpt.decoder, &phi, &power) {
                            Ok(v) => last_obj = v,
                            Err(Error::Numeric(_)) if opt.frozen => {
                                estep_aborted = true;
                                break;
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
                let v_s = decode(&ckpt.decoder, &opt.z)?;
                mstep_update(&mut phi, &x_power_matrix, std::slice::from_ref(&v_s))?;
                trace.push(TraceRow {
                    iteration,
                    cost: mstep_cost(&phi, &x_power_matrix, std::slice::from_ref(&v_s)),
                    vfe: last_obj,
                });
            }
            wiener_reconstruct(&x, &ckpt.decoder, std::slice::from_ref(&opt.z), &phi)?
        }
    };

    let wave = istft(&spec_estimate, x_wave.len())?;
    Ok(EnhanceOutcome { wave, trace, estep_aborted })
}
