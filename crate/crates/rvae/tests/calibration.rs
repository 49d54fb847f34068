//! Manual desk-scale calibration run (ignored by default).
use std::time::Instant;

#[test]
#[ignore]
fn desk_scale_calibration() {
    use rvae::rng::{domain_seed, stream};
    use rvae::training::{corpus, train, TrainConfig};

    let t_all = Instant::now();
    // 10-minute corpus, 90/10 train/val
    let mut rng = stream(42, "cal-corpus");
    let waves = corpus::synth_clean_corpus(600.0, 16_000, &mut rng).unwrap();
    let specs: Vec<_> = waves.iter().map(|w| rvae::signal::stft(w).unwrap()).collect();
    let n_val = specs.len() / 10;
    let (val, tr) = specs.split_at(n_val);
    println!("corpus: {} train / {} val utts ({:.1}s)", tr.len(), val.len(), t_all.elapsed().as_secs_f64());

    let cfg = TrainConfig {
        variant: rvae::Variant::Rnn,
        latent_dim: 16,
        hidden: 64,
        max_epochs: 30,
        patience: 20,
        seed: 42,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let outcome = train(tr, val, &cfg).unwrap();
    println!("training: {} epochs in {:.1}s, diverged={}", outcome.history.len(), t0.elapsed().as_secs_f64(), outcome.diverged);
    for h in outcome.history.iter().step_by(5) {
        println!("  epoch {}: train {:.3} val {:.3}", h.epoch, h.train_objective, h.val_objective);
    }
    let ckpt = outcome.checkpoint;

    // 20 held-out mixtures at 0 dB
    let mut test_rng = stream(77, "cal-test");
    let mut noise_rng = stream(78, "cal-noise");
    let mixtures: Vec<_> = (0..20)
        .map(|i| {
            let clean = corpus::synth_utterance(2.0, 16_000, &mut test_rng).unwrap();
            let kind = if i % 2 == 0 { corpus::NoiseKind::White } else { corpus::NoiseKind::Colored };
            let noise = corpus::synth_noise(kind, 4.0, 16_000, &mut noise_rng).unwrap();
            let (mix, s_ref, _) = rvae::eval::mix_at_snr(&rvae::eval::MixSpec {
                clean, noise, snr_db: 0.0, seed: 1000 + i as u64,
            }).unwrap();
            (mix, s_ref)
        })
        .collect();

    for (alg, iters) in [(rvae::enhancer::Algorithm::Vem, 500usize), (rvae::enhancer::Algorithm::Peem, 500)] {
        let t0 = Instant::now();
        use rayon::prelude::*;
        let improvements: Vec<f64> = mixtures
            .par_iter()
            .enumerate()
            .map(|(i, (mix, s_ref))| {
                let mut cfg = rvae::enhancer::EnhanceConfig::new(alg, rvae::Variant::Rnn);
                cfg.iterations = iters;
                cfg.seed = domain_seed(9, &format!("utt{i}"));
                let out = rvae::enhancer::enhance(mix, &ckpt, &cfg).unwrap();
                let spec = rvae::signal::stft(mix).unwrap();
                let trim = |w: &rvae::signal::Waveform| rvae::eval::trim_for_scoring(w, spec.window_size(), spec.hop()).unwrap();
                let before = rvae::eval::si_sdr(&trim(s_ref), &trim(mix)).unwrap();
                let after = rvae::eval::si_sdr(&trim(s_ref), &trim(&out.wave)).unwrap();
                after - before
            })
            .collect();
        let (median, ci) = rvae::eval::summarize(&improvements).unwrap();
        println!("{alg:?}: median improvement {median:.2} dB (CI [{:.2},{:.2}]) in {:.1}s", ci.0, ci.1, t0.elapsed().as_secs_f64());
        let mut sorted = improvements.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!("  all: {:?}", sorted.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>());
    }
    println!("total {:.1}s", t_all.elapsed().as_secs_f64());
}
