//! Variational free energy training of the prior/encoder pair.
//!
//! The objective maximized per Monte Carlo sample (R = 1, reparameterized)
//! is
//!
//! ```text
//! VFE = - sum_{f,n} d_IS(|s_fn|^2, v_s,fn(z)) + 1/2 sum_{l,n} (ln v_z - mu_z^2 - v_z)
//! ```
//!
//! The tape carries only the parameter-dependent part (`a/v + ln v` for the
//! data term); the remaining `-ln a - 1` entries are data constants added
//! back when reporting the full value. Padded frames are excluded from both
//! sums through binary masks.

mod checkpoint;
pub mod corpus;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, ModelCheckpoint};

use crate::autodiff::{clip_global_norm, AdamConfig, AdamState, Tape, Var};
use crate::encoder::{standard_normal_frames, EncoderParams};
use crate::prior::{DecoderParams, LatentSequence, VarianceField};
use crate::rng::{stream, Rng};
use crate::signal::ComplexSpectrogram;
use crate::{Error, Result, Variant};

/// Training hyperparameters.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Latent dimension L.
    pub latent_dim: usize,
    /// Hidden width H of every non-output layer.
    pub hidden: usize,
    /// Frames per FFNN batch.
    pub batch_frames: usize,
    /// Sequences per recurrent batch.
    pub batch_seqs: usize,
    /// Frames per sequence chunk.
    pub seq_len: usize,
    pub adam_alpha: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global L2 gradient clip during training.
    pub grad_clip: f64,
    pub max_epochs: usize,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Rnn,
            latent_dim: 16,
            hidden: 128,
            batch_frames: 128,
            batch_seqs: 32,
            seq_len: 50,
            adam_alpha: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 100.0,
            max_epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("latent_dim and hidden must be positive".into()));
        }
        if self.batch_frames == 0 || self.batch_seqs == 0 || self.seq_len == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            alpha: self.adam_alpha,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Parse a TOML config file; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One Monte Carlo VFE evaluation with the sampled quantities exposed.
pub struct VfeSample {
    /// Full Eq-form value (data constants included).
    pub value: f64,
    pub z: LatentSequence,
    pub post: crate::encoder::PosteriorParams,
    pub v_s: VarianceField,
}

/// Monte Carlo VFE (R = 1) of one utterance under the current models.
pub fn vfe(
    spec: &ComplexSpectrogram,
    dec: &DecoderParams,
    enc: &EncoderParams,
    rng: &mut Rng,
) -> Result<f64> {
    Ok(vfe_detailed(spec, dec, enc, rng)?.value)
}

/// As [`vfe`] but returning the sampled path for oracle checks.
pub fn vfe_detailed(
    spec: &ComplexSpectrogram,
    dec: &DecoderParams,
    enc: &EncoderParams,
    rng: &mut Rng,
) -> Result<VfeSample> {
    if spec.bins() != dec.bins || spec.bins() != enc.bins {
        return Err(Error::Dimension(format!(
            "spectrogram bins {} vs decoder {} / encoder {}",
            spec.bins(),
            dec.bins,
            enc.bins
        )));
    }
    let n = spec.num_frames();
    let l = enc.latent_dim;
    let eps = standard_normal_frames(n, l, rng);
    let power: Vec<Vec<f64>> = spec.power_frames();
    let feat: Vec<Vec<f64>> = power
        .iter()
        .map(|p| p.iter().map(|&v| crate::encoder::compress_power(v)).collect())
        .collect();

    let mut tape = Tape::new();
    let enc_vars = enc.register(&mut tape, false);
    let dec_vars = dec.register(&mut tape, false);
    let feat_vars: Vec<Var> =
        feat.iter().map(|u| tape.constant(1, spec.bins(), u.clone())).collect();
    let eps_vars: Vec<Var> = eps.iter().map(|e| tape.constant(1, l, e.clone())).collect();
    let power_vars: Vec<Var> =
        power.iter().map(|p| tape.constant(1, spec.bins(), p.clone())).collect();

    let sampled = enc_vars.sample(&mut tape, &feat_vars, &eps_vars);
    let v_frames = dec_vars.forward(&mut tape, &sampled.z);
    let parts = objective_terms(&mut tape, &power_vars, &v_frames, &sampled, None);
    let variable_part = tape.scalar(parts.objective);

    // data constants: sum over (f, n) of (ln a + 1); the IS divergence is
    // +inf when a bin has exactly zero power
    let mut constant = 0.0;
    for (fi, p) in power.iter().enumerate() {
        for (bi, &a) in p.iter().enumerate() {
            let term = a.ln() + 1.0;
            if !term.is_finite() {
                return Err(Error::Numeric(format!(
                    "vfe: zero/non-finite power at frame {fi}, bin {bi} makes d_IS unbounded"
                )));
            }
            constant += term;
        }
    }
    let value = variable_part + constant;
    if !value.is_finite() {
        let frame = first_bad_frame(&tape, &v_frames, &sampled.var);
        return Err(Error::Numeric(format!(
            "vfe: non-finite objective (first offending frame: {frame:?})"
        )));
    }

    let mut z = LatentSequence::zeros(n, l);
    let mut mu = vec![0.0; n * l];
    let mut var = vec![0.0; n * l];
    for i in 0..n {
        z.frame_mut(i).copy_from_slice(tape.value(sampled.z[i]));
        mu[i * l..(i + 1) * l].copy_from_slice(tape.value(sampled.mu[i]));
        var[i * l..(i + 1) * l].copy_from_slice(tape.value(sampled.var[i]));
    }
    let columns: Vec<Vec<f64>> = v_frames.iter().map(|&v| tape.value(v).to_vec()).collect();
    Ok(VfeSample {
        value,
        z,
        post: crate::encoder::PosteriorParams::from_vecs(n, l, mu, var)?,
        v_s: VarianceField::from_columns(&columns)?,
    })
}

fn first_bad_frame(tape: &Tape, v_frames: &[Var], var_frames: &[Var]) -> Option<usize> {
    for (n, (&v, &vz)) in v_frames.iter().zip(var_frames).enumerate() {
        let bad = tape.value(v).iter().any(|x| !x.is_finite())
            || tape.value(vz).iter().any(|x| !x.is_finite());
        if bad {
            return Some(n);
        }
    }
    None
}

pub(crate) struct ObjectiveParts {
    /// Parameter-dependent VFE part (to maximize):
    /// `-(a/v + ln v)` summed masked + `0.5 (ln v_z - mu^2 - v_z)` summed masked.
    pub objective: Var,
    /// Number of unmasked frame-rows.
    pub mask_total: f64,
}

/// Build the masked Eq-form objective on the tape. `mask` columns are
/// `[B x 1]` of zeros/ones; `None` means all-ones.
pub(crate) fn objective_terms(
    tape: &mut Tape,
    power: &[Var],
    v_frames: &[Var],
    sampled: &crate::encoder::SampledPosterior,
    mask: Option<&[Var]>,
) -> ObjectiveParts {
    let frames = power.len();
    let mut data_terms = Vec::with_capacity(frames);
    let mut kl_terms = Vec::with_capacity(frames);
    let mut mask_total = 0.0;
    for n in 0..frames {
        let ratio = tape.div(power[n], v_frames[n]);
        let lnv = tape.ln(v_frames[n]);
        let fit = tape.add(ratio, lnv);
        let fit_rows = tape.row_sum(fit);
        let fit_masked = match mask {
            Some(m) => tape.mul(fit_rows, m[n]),
            None => fit_rows,
        };
        data_terms.push(tape.sum_all(fit_masked));

        let lnvz = tape.ln(sampled.var[n]);
        let musq = tape.mul(sampled.mu[n], sampled.mu[n]);
        let a = tape.sub(lnvz, musq);
        let b = tape.sub(a, sampled.var[n]);
        let kl_rows = tape.row_sum(b);
        let kl_masked = match mask {
            Some(m) => tape.mul(kl_rows, m[n]),
            None => kl_rows,
        };
        kl_terms.push(tape.sum_all(kl_masked));

        mask_total += match mask {
            Some(m) => tape.value(m[n]).iter().sum::<f64>(),
            None => tape.shape(power[n]).0 as f64,
        };
    }
    let data = tape.add_scalars(&data_terms);
    let kl = tape.add_scalars(&kl_terms);
    let neg_data = tape.neg(data);
    let half_kl = tape.scale(kl, 0.5);
    let objective = tape.add(neg_data, half_kl);
    ObjectiveParts { objective, mask_total }
}

/// A padded mini-batch of sequence chunks (FFNN batches are chunks of
/// length 1 with a wide batch dimension).
pub struct SeqBatch {
    pub batch: usize,
    pub bins: usize,
    pub frames: usize,
    /// Per frame: `[B x F]` raw power.
    pub power: Vec<Vec<f64>>,
    /// Per frame: `[B x F]` log1p features.
    pub feat: Vec<Vec<f64>>,
    /// Per frame: `[B x 1]` of zeros/ones.
    pub mask: Vec<Vec<f64>>,
}

impl SeqBatch {
    pub fn real_frames(&self) -> f64 {
        self.mask.iter().map(|m| m.iter().sum::<f64>()).sum()
    }
}

/// Row range [lo, hi) of a batch as an owned sub-batch, with the matching
/// epsilon slices.
fn shard_rows(
    batch: &SeqBatch,
    eps: &[Vec<f64>],
    lo: usize,
    hi: usize,
) -> (SeqBatch, Vec<Vec<f64>>) {
    let rows = hi - lo;
    let bins = batch.bins;
    let take = |frames: &[Vec<f64>], width: usize| -> Vec<Vec<f64>> {
        frames.iter().map(|f| f[lo * width..hi * width].to_vec()).collect()
    };
    let shard = SeqBatch {
        batch: rows,
        bins,
        frames: batch.frames,
        power: take(&batch.power, bins),
        feat: take(&batch.feat, bins),
        mask: take(&batch.mask, 1),
    };
    let latent = eps[0].len() / batch.batch;
    let eps_shard = take(eps, latent);
    (shard, eps_shard)
}

/// Chunk descriptor into a corpus of spectrograms.
#[derive(Clone, Copy, Debug)]
struct Chunk {
    utt: usize,
    start: usize,
    len: usize,
}

fn chunk_corpus(corpus: &[ComplexSpectrogram], seq_len: usize) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    for (u, spec) in corpus.iter().enumerate() {
        let n = spec.num_frames();
        let mut start = 0;
        while start < n {
            let len = seq_len.min(n - start);
            chunks.push(Chunk { utt: u, start, len });
            start += seq_len;
        }
    }
    chunks
}

fn build_batch(corpus: &[ComplexSpectrogram], chunks: &[Chunk], seq_len: usize) -> SeqBatch {
    let batch = chunks.len();
    let bins = corpus[chunks[0].utt].bins();
    let mut power = vec![vec![0.0; batch * bins]; seq_len];
    let mut feat = vec![vec![0.0; batch * bins]; seq_len];
    let mut mask = vec![vec![0.0; batch]; seq_len];
    for (b, ch) in chunks.iter().enumerate() {
        let spec = &corpus[ch.utt];
        for n in 0..seq_len {
            if n < ch.len {
                mask[n][b] = 1.0;
                for f in 0..bins {
                    let a = spec.bin(f, ch.start + n).norm_sqr();
                    power[n][b * bins + f] = a;
                    feat[n][b * bins + f] = crate::encoder::compress_power(a);
                }
            }
        }
    }
    SeqBatch { batch, bins, frames: seq_len, power, feat, mask }
}

/// Per-step statistics.
#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    /// Masked objective per real frame (higher is better).
    pub objective: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
}

/// Stateful optimizer over an encoder/decoder pair.
pub struct Trainer {
    pub dec: DecoderParams,
    pub enc: EncoderParams,
    pub cfg: TrainConfig,
    adam: AdamState,
    eps_rng: Rng,
}

impl Trainer {
    /// Fresh models from the config seed.
    pub fn new(cfg: TrainConfig, bins: usize) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = stream(cfg.seed, "model-init");
        let dec = DecoderParams::init(cfg.variant, cfg.latent_dim, bins, cfg.hidden, &mut init_rng);
        let enc = EncoderParams::init(cfg.variant, cfg.latent_dim, bins, cfg.hidden, &mut init_rng);
        Self::from_models(cfg, dec, enc)
    }

    /// Fresh models with the decoder output bias set to the corpus power
    /// scale (see [`mean_log_power`]).
    pub fn new_for_corpus(cfg: TrainConfig, corpus: &[ComplexSpectrogram]) -> Result<Self> {
        let mut trainer = Self::new(cfg, corpus[0].bins())?;
        let bias = mean_log_power(corpus);
        trainer.dec.head.b.data_mut().copy_from_slice(&bias);
        Ok(trainer)
    }

    pub fn from_models(cfg: TrainConfig, dec: DecoderParams, enc: EncoderParams) -> Result<Self> {
        cfg.validate()?;
        let adam = {
            let enc_t = enc.named_tensors();
            let dec_t = dec.named_tensors();
            let all: Vec<&crate::autodiff::Tensor> =
                enc_t.iter().map(|(_, t)| *t).chain(dec_t.iter().map(|(_, t)| *t)).collect();
            AdamState::new(cfg.adam(), &all)
        };
        let eps_rng = stream(cfg.seed, "train-eps");
        Ok(Trainer { dec, enc, cfg, adam, eps_rng })
    }

    /// Objective and gradients for one batch; `eps` supplied per frame.
    fn batch_pass(
        &self,
        batch: &SeqBatch,
        eps: &[Vec<f64>],
        with_grads: bool,
    ) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let enc_vars = self.enc.register(&mut tape, with_grads);
        let dec_vars = self.dec.register(&mut tape, with_grads);
        let enc_params = enc_vars.param_vars();
        let dec_params = dec_vars.param_vars();

        let feat_vars: Vec<Var> = batch
            .feat
            .iter()
            .map(|u| tape.constant(batch.batch, batch.bins, u.clone()))
            .collect();
        let power_vars: Vec<Var> = batch
            .power
            .iter()
            .map(|p| tape.constant(batch.batch, batch.bins, p.clone()))
            .collect();
        let eps_vars: Vec<Var> = eps
            .iter()
            .map(|e| tape.constant(batch.batch, self.cfg.latent_dim, e.clone()))
            .collect();
        let mask_vars: Vec<Var> =
            batch.mask.iter().map(|m| tape.constant(batch.batch, 1, m.clone())).collect();

        let sampled = enc_vars.sample(&mut tape, &feat_vars, &eps_vars);
        let v_frames = dec_vars.forward(&mut tape, &sampled.z);
        let parts =
            objective_terms(&mut tape, &power_vars, &v_frames, &sampled, Some(&mask_vars));
        let scale = 1.0 / parts.mask_total.max(1.0);
        let neg = tape.neg(parts.objective);
        let loss = tape.scale(neg, scale);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numeric("training loss is not finite".into()));
        }
        if !with_grads {
            return Ok((-value, None));
        }
        let grads = tape.backward(loss)?;
        let mut out = Vec::with_capacity(enc_params.len() + dec_params.len());
        for v in enc_params.into_iter().chain(dec_params) {
            let (r, c) = tape.shape(v);
            out.push(grads.get_or_zeros(v, r * c));
        }
        Ok((-value, Some(out)))
    }

    /// One optimization step on a batch. Returns the per-frame objective.
    ///
    /// The gradient is computed on two row shards (one tape each, rayon
    /// join) and reduced with fixed weights, so results are identical to a
    /// single-tape pass up to float reassociation and do not depend on
    /// scheduling.
    pub fn step(&mut self, batch: &SeqBatch) -> Result<StepStats> {
        let eps: Vec<Vec<f64>> = (0..batch.frames)
            .map(|_| {
                standard_normal_frames(batch.batch, self.cfg.latent_dim, &mut self.eps_rng)
                    .into_iter()
                    .flatten()
                    .collect()
            })
            .collect();
        let (objective, grads) = if batch.batch >= 4 {
            let mid = batch.batch / 2;
            let (left, eps_l) = shard_rows(batch, &eps, 0, mid);
            let (right, eps_r) = shard_rows(batch, &eps, mid, batch.batch);
            let (ra, rb) = rayon::join(
                || self.batch_pass(&left, &eps_l, true),
                || self.batch_pass(&right, &eps_r, true),
            );
            let (obj_a, grads_a) = ra?;
            let (obj_b, grads_b) = rb?;
            let (ma, mb) = (left.real_frames(), right.real_frames());
            let total = (ma + mb).max(1.0);
            let mut combined = grads_a.unwrap();
            let gb = grads_b.unwrap();
            for (ca, cb) in combined.iter_mut().zip(&gb) {
                for (a, b) in ca.iter_mut().zip(cb) {
                    *a = (*a * ma + *b * mb) / total;
                }
            }
            ((obj_a * ma + obj_b * mb) / total, Some(combined))
        } else {
            self.batch_pass(batch, &eps, true)?
        };
        let mut grads = grads.unwrap();
        let grad_norm = clip_global_norm(&mut grads, self.cfg.grad_clip);

        let mut enc_t = self.enc.named_tensors_mut();
        let mut dec_t = self.dec.named_tensors_mut();
        let mut params: Vec<&mut crate::autodiff::Tensor> = enc_t
            .iter_mut()
            .map(|(_, t)| &mut **t)
            .chain(dec_t.iter_mut().map(|(_, t)| &mut **t))
            .collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        self.adam.step(&mut params, &grad_refs);
        Ok(StepStats { objective, grad_norm })
    }

    /// Masked objective per real frame over a batch list, with epsilon draws
    /// fixed by `seed` so successive evaluations are comparable.
    pub fn evaluate(&self, batches: &[SeqBatch], seed: u64) -> Result<f64> {
        let mut rng = stream(seed, "val-eps");
        let mut total = 0.0;
        let mut frames = 0.0;
        for batch in batches {
            let eps: Vec<Vec<f64>> = (0..batch.frames)
                .map(|_| {
                    standard_normal_frames(batch.batch, self.cfg.latent_dim, &mut rng)
                        .into_iter()
                        .flatten()
                        .collect()
                })
                .collect();
            let (obj, _) = self.batch_pass(batch, &eps, false)?;
            let real = batch.real_frames();
            total += obj * real;
            frames += real;
        }
        Ok(total / frames.max(1.0))
    }
}

/// Early-stopping bookkeeping: maximize a validation score with patience.
pub(crate) struct EarlyStopper {
    best: f64,
    pub best_epoch: usize,
    since_best: usize,
    patience: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { best: f64::NEG_INFINITY, best_epoch: 0, since_best: 0, patience }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Returns `(improved, should_stop)`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        if value > self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }
}

/// Per-epoch training record.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_objective: f64,
    pub val_objective: f64,
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochStats>,
    pub diverged: bool,
}

/// Full training loop: mini-batches, early stopping on validation VFE,
/// best-validation checkpoint returned. On NaN divergence the last good
/// (best-validation) checkpoint is returned with `diverged = true`.
pub fn train(
    train_corpus: &[ComplexSpectrogram],
    val_corpus: &[ComplexSpectrogram],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_corpus.is_empty() {
        return Err(Error::Contract("training corpus is empty".into()));
    }
    let bins = train_corpus[0].bins();
    if train_corpus.iter().chain(val_corpus).any(|s| s.bins() != bins) {
        return Err(Error::Config("corpus has inconsistent STFT geometry".into()));
    }

    let seq_len = if cfg.variant == Variant::Ffnn { 1 } else { cfg.seq_len };
    let batch_size =
        if cfg.variant == Variant::Ffnn { cfg.batch_frames } else { cfg.batch_seqs };
    let chunks = chunk_corpus(train_corpus, seq_len);
    let val_chunks = chunk_corpus(val_corpus, seq_len);
    let val_batches: Vec<SeqBatch> = val_chunks
        .chunks(batch_size)
        .map(|c| build_batch(val_corpus, c, seq_len))
        .collect();

    let mut trainer = Trainer::new(cfg.clone(), bins)?;
    let mut shuffle_rng = stream(cfg.seed, "batch-shuffle");
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = Vec::new();
    let mut best: Option<(DecoderParams, EncoderParams, usize)> = None;
    let mut diverged = false;

    'epochs: for epoch in 0..cfg.max_epochs {
        use rand::seq::SliceRandom as _;
        let mut order: Vec<usize> = (0..chunks.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_obj = 0.0;
        let mut steps = 0.0f64;
        for group in order.chunks(batch_size) {
            let selected: Vec<Chunk> = group.iter().map(|&i| chunks[i]).collect();
            let batch = build_batch(train_corpus, &selected, seq_len);
            match trainer.step(&batch) {
                Ok(stats) => {
                    epoch_obj += stats.objective;
                    steps += 1.0;
                }
                Err(Error::Numeric(_)) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }

        let val_obj = if val_batches.is_empty() {
            epoch_obj / steps.max(1.0)
        } else {
            trainer.evaluate(&val_batches, cfg.seed)?
        };
        history.push(EpochStats {
            epoch,
            train_objective: epoch_obj / steps.max(1.0),
            val_objective: val_obj,
        });

        let (improved, stop) = stopper.observe(epoch, val_obj);
        if improved {
            best = Some((trainer.dec.clone(), trainer.enc.clone(), epoch));
        }
        if stop {
            break;
        }
    }

    let (dec, enc, best_epoch) = match best {
        Some(b) => b,
        // divergence before any completed epoch: fall back to current params
        None => (trainer.dec.clone(), trainer.enc.clone(), 0),
    };
    let meta = CheckpointMeta {
        variant: cfg.variant,
        latent_dim: cfg.latent_dim,
        bins,
        hidden: cfg.hidden,
        epoch: best_epoch,
        val_vfe: stopper.best(),
        seed: cfg.seed,
    };
    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint { decoder: dec, encoder: enc, meta },
        history,
        diverged,
    })
}

/// Chunk + batch helpers exposed for tests and the overfit smoke path.
pub fn single_utterance_batch(spec: &ComplexSpectrogram, seq_len: usize) -> SeqBatch {
    let corpus = [spec.clone()];
    let chunks = chunk_corpus(&corpus, seq_len);
    build_batch(&corpus, &chunks, seq_len)
}

/// One epoch of shuffled mini-batches over a chunked corpus.
pub fn epoch_batches(
    corpus: &[ComplexSpectrogram],
    seq_len: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Vec<SeqBatch> {
    use rand::seq::SliceRandom as _;
    let chunks = chunk_corpus(corpus, seq_len);
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|group| {
            let selected: Vec<Chunk> = group.iter().map(|&i| chunks[i]).collect();
            build_batch(corpus, &selected, seq_len)
        })
        .collect()
}

/// Per-bin mean log power of a corpus, floored at the variance floor.
/// Used to initialize the decoder's log-variance head bias so the output
/// scale starts at the data scale instead of unit variance.
pub fn mean_log_power(corpus: &[ComplexSpectrogram]) -> Vec<f64> {
    let bins = corpus[0].bins();
    let mut acc = vec![0.0; bins];
    let mut count = 0.0;
    for spec in corpus {
        for n in 0..spec.num_frames() {
            for (f, a) in acc.iter_mut().enumerate() {
                *a += spec.bin(f, n).norm_sqr().max(crate::VARIANCE_FLOOR).ln();
            }
        }
        count += spec.num_frames() as f64;
    }
    for a in &mut acc {
        *a /= count.max(1.0);
    }
    acc
}
