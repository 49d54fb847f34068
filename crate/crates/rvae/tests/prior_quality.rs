//! How well can the trained prior represent clean speech? (ignored)
use rvae::rng::stream;
use rvae::training::{corpus, train, TrainConfig};
use rvae::signal::stft;
use rvae::prior::VarianceField;

fn mean_is(v: &VarianceField, spec: &rvae::signal::ComplexSpectrogram) -> f64 {
    let mut acc = 0.0;
    for f in 0..spec.bins() { for n in 0..spec.num_frames() {
        let a = spec.bin(f, n).norm_sqr().max(1e-10);
        acc += rvae::is_divergence(a, v.value(f, n));
    }}
    acc / (spec.bins() * spec.num_frames()) as f64
}

#[test]
#[ignore]
fn prior_representation_ceiling() {
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

    // training utterance
    let train_spec = &tr[0];
    let (z, _) = rvae::encoder::posterior_mean(&ckpt.encoder, train_spec).unwrap();
    let v = rvae::prior::decode(&ckpt.decoder, &z).unwrap();
    println!("train utt: IS(decode(post_mean)) = {:.2}", mean_is(&v, train_spec));

    // held-out clean utterance
    let clean = corpus::synth_utterance(2.0, 16_000, &mut stream(77, "diag-utt")).unwrap();
    let s_spec = stft(&clean).unwrap();
    let (z, _) = rvae::encoder::posterior_mean(&ckpt.encoder, &s_spec).unwrap();
    let v = rvae::prior::decode(&ckpt.decoder, &z).unwrap();
    println!("held-out clean: IS(decode(post_mean)) = {:.2}", mean_is(&v, &s_spec));

    // prior ceiling: MAP ascent of ln p(S|z) + ln p(z) from the encoder init
    let phi = rvae::enhancer::NoiseMixtureParams::from_parts(
        s_spec.bins(), 1, s_spec.num_frames(),
        vec![1e-12; s_spec.bins()], vec![1e-12; s_spec.num_frames()],
        vec![1.0; s_spec.num_frames()],
    ).unwrap();
    let (mut z, _) = rvae::encoder::posterior_mean(&ckpt.encoder, &s_spec).unwrap();
    for alpha in [3e-2, 1e-2, 3e-3] {
        let cfg = rvae::enhancer::EnhanceConfig {
            estep_grad_steps: 300,
            estep_adam_alpha: alpha,
            ..rvae::enhancer::EnhanceConfig::new(rvae::enhancer::Algorithm::Peem, rvae::Variant::Rnn)
        };
        z = rvae::enhancer::estep_peem(&ckpt.decoder, &phi, &s_spec, &z, &cfg).unwrap();
    }
    let v = rvae::prior::decode(&ckpt.decoder, &z).unwrap();
    println!("held-out clean MAP ceiling: IS = {:.2}", mean_is(&v, &s_spec));
}
