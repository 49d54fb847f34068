//! Allocation trajectory diagnosis (ignored).
use rvae::rng::stream;
use rvae::training::{corpus, train, TrainConfig};
use rvae::signal::{stft, istft, Waveform};
use rvae::prior::VarianceField;
use rvae::encoder::sample_posterior;
use rvae::enhancer::*;

#[test]
#[ignore]
fn diagnose_allocation() {
    let mut rng = stream(42, "cal-corpus");
    let waves = corpus::synth_clean_corpus(180.0, 16_000, &mut rng).unwrap();
    let specs: Vec<_> = waves.iter().map(|w| stft(w).unwrap()).collect();
    let n_val = specs.len() / 10;
    let (val, tr) = specs.split_at(n_val);
    let cfg = TrainConfig {
        variant: rvae::Variant::Rnn, latent_dim: 16, hidden: 64,
        max_epochs: 15, patience: 20, seed: 42,
        ..TrainConfig::default()
    };
    let ckpt = train(tr, val, &cfg).unwrap().checkpoint;

    let clean = corpus::synth_utterance(2.0, 16_000, &mut stream(77, "diag-utt")).unwrap();
    let noise = corpus::synth_noise(corpus::NoiseKind::White, 4.0, 16_000, &mut stream(78, "diag-n")).unwrap();
    let (mix, s_ref, b_ref) = rvae::eval::mix_at_snr(&rvae::eval::MixSpec {
        clean: clean.clone(), noise, snr_db: 0.0, seed: 5,
    }).unwrap();
    let x = stft(&mix).unwrap();
    let s_spec = stft(&s_ref).unwrap();
    let b_spec = stft(&b_ref).unwrap();
    let frames = x.num_frames();
    let bins = x.bins();
    let x_power = x.power_matrix();
    let power = x.power_frames();
    let feat_frames: Vec<Vec<f64>> = (0..frames).map(|n| {
        x.frame(n).iter().map(|c| rvae::encoder::compress_power(c.norm_sqr())).collect()
    }).collect();
    let _ = feat_frames;
    let trim = |w: &Waveform| rvae::eval::trim_for_scoring(w, x.window_size(), x.hop()).unwrap();
    let sdr = |w: &Waveform| rvae::eval::si_sdr(&trim(&s_ref), &trim(w)).unwrap();

    let mean_is = |v: &VarianceField, target: &rvae::signal::ComplexSpectrogram| -> f64 {
        let mut acc = 0.0;
        for f in 0..bins { for n in 0..frames {
            let a = target.bin(f, n).norm_sqr().max(1e-10);
            acc += rvae::is_divergence(a, v.value(f, n));
        }}
        acc / (bins * frames) as f64
    };

    // manual VEM loop with instrumentation
    let mean_x2: f64 = x_power.iter().sum::<f64>() / x_power.len() as f64;
    let scale_opt: f64 = std::env::var("PHI_SCALE").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let mut phi = {
        let raw = NoiseMixtureParams::random_init(bins, 8, frames, &mut stream(9, "nmf-init"));
        if scale_opt == 0.0 { raw } else {
            // rescale W, H so E[v_b] = scale_opt * mean |x|^2
            let target = (scale_opt * mean_x2 / (8.0 * 0.25)).sqrt();
            let w: Vec<f64> = raw.w().iter().map(|v| v * target).collect();
            let h: Vec<f64> = raw.h().iter().map(|v| v * target).collect();
            NoiseMixtureParams::from_parts(bins, 8, frames, w, h, raw.gains().to_vec()).unwrap()
        }
    };
    let mut enc = ckpt.encoder.clone();
    let mut sample_rng = stream(9, "posterior-samples");
    let alpha = 1e-2;
    let mut vemopt: Option<rvae::enhancer::EnhanceConfig> = None; let _ = vemopt;
    // reuse estep_vem one step at a time to keep the Adam state... simpler: call estep public op each iter (fresh adam each time, 1 step)
    for it in 0..=500usize {
        if it > 0 {
            let mut ecfg = EnhanceConfig::new(Algorithm::Vem, rvae::Variant::Rnn);
            ecfg.estep_grad_steps = 1;
            ecfg.estep_adam_alpha = alpha;
            ecfg.seed = 9 + it as u64;
            enc = estep_vem(enc, &ckpt.decoder, &phi, &x, &ecfg).unwrap();
            let (z, _) = sample_posterior(&enc, &x, &mut sample_rng, false).unwrap();
            let v_s = rvae::prior::decode(&ckpt.decoder, &z).unwrap();
            mstep_update(&mut phi, &x_power, std::slice::from_ref(&v_s)).unwrap();
        }
        if [0usize, 1, 10, 50, 150, 500].contains(&it) {
            let (z, _) = sample_posterior(&enc, &x, &mut sample_rng, false).unwrap();
            let v_s = rvae::prior::decode(&ckpt.decoder, &z).unwrap();
            let v_b = phi.noise_variance_field().unwrap();
            let filt = wiener_filter(&x, std::slice::from_ref(&v_s), &v_b, phi.gains()).unwrap();
            let est = istft(&filt, mix.len()).unwrap();
            let mut g = phi.gains().to_vec();
            g.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let gmed = g[g.len()/2];
            let sum_speech: f64 = (0..bins*frames).map(|i| {
                let f = i / frames; let n = i % frames;
                phi.gains()[n] * v_s.value(f, n)
            }).sum();
            let sum_noise: f64 = v_b.data().iter().sum();
            let sum_x: f64 = x_power.iter().sum();
            println!("it {it:4}: sdr {:+7.2} dB | g med {gmed:.3} | gVs/X {:.2} Vb/X {:.2} | IS(vs|S2) {:.1} IS(vb|B2) {:.1}",
                sdr(&est), sum_speech / sum_x, sum_noise / sum_x,
                mean_is(&v_s, &s_spec), mean_is(&v_b, &b_spec));
        }
    }
    let _ = power;
}
