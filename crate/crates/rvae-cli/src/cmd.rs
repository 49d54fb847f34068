//! Subcommand implementations.

use crate::manifest::RunManifest;
use anyhow::{bail, Context as _};
use rvae::enhancer::{enhance as run_enhance, Algorithm, EnhanceConfig};
use rvae::eval::{mix_at_snr, si_sdr, summarize, trim_for_scoring, MixSpec};
use rvae::rng::{domain_seed, stream};
use rvae::signal::{read_wav, stft, write_wav, WavFormat, Waveform};
use rvae::training::corpus::{synth_clean_corpus, synth_noise, NoiseKind};
use rvae::training::{load_checkpoint, save_checkpoint, TrainConfig};
use rvae::Variant;
use std::io::Write as _;
use std::path::Path;

const SAMPLE_RATE: u32 = 16_000;

pub fn synth_corpus(out: &Path, minutes: f64, seed: u64, noise_files: usize) -> anyhow::Result<()> {
    if minutes <= 0.0 {
        bail!("--minutes must be positive");
    }
    for sub in ["train", "val", "test", "noise"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let mut rng = stream(seed, "synth-corpus");
    let utts = synth_clean_corpus(minutes * 60.0, SAMPLE_RATE, &mut rng)?;

    // deterministic 8:1:1 split by index; small corpora still get at least
    // one validation and one test utterance when possible
    let mut slots: Vec<usize> = (0..utts.len())
        .map(|i| match i % 10 {
            8 => 1,
            9 => 2,
            _ => 0,
        })
        .collect();
    if utts.len() >= 3 {
        if !slots.contains(&1) {
            slots[utts.len() - 2] = 1;
        }
        if !slots.contains(&2) {
            slots[utts.len() - 1] = 2;
        }
    }
    let mut lists: [Vec<String>; 3] = Default::default();
    for (i, utt) in utts.iter().enumerate() {
        let sub = ["train", "val", "test"][slots[i]];
        let rel = format!("{sub}/utt{i:04}.wav");
        write_wav(&out.join(&rel), utt, WavFormat::Float32)?;
        lists[slots[i]].push(rel);
    }
    for (name, list) in ["train.txt", "val.txt", "test.txt"].iter().zip(&lists) {
        std::fs::write(out.join(name), list.join("\n") + "\n")?;
    }

    let mut noise_rng = stream(seed, "synth-noise");
    for i in 0..noise_files {
        let kind = if i % 2 == 0 { NoiseKind::White } else { NoiseKind::Colored };
        let wave = synth_noise(kind, 10.0, SAMPLE_RATE, &mut noise_rng)?;
        let rel = format!("noise/{}_{i:02}.wav", kind.as_str());
        write_wav(&out.join(rel), &wave, WavFormat::Float32)?;
    }

    let total: f64 = utts.iter().map(|u| u.duration_secs()).sum();
    RunManifest::new(
        "synth-corpus",
        seed,
        serde_json::json!({
            "minutes": minutes,
            "noise_files": noise_files,
            "utterances": utts.len(),
            "total_secs": total,
        }),
    )
    .write(&out.join("run.json"))?;
    println!(
        "wrote {} utterances ({total:.1} s) and {noise_files} noise files to {}",
        utts.len(),
        out.display()
    );
    Ok(())
}

pub struct TrainOverrides {
    pub variant: Option<Variant>,
    pub latent: Option<usize>,
    pub hidden: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
}

fn read_list(corpus: &Path, list: &str, subdir: &str) -> anyhow::Result<Vec<Waveform>> {
    let list_path = corpus.join(list);
    let names: Vec<String> = if list_path.exists() {
        std::fs::read_to_string(&list_path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().to_string())
            .collect()
    } else {
        // fall back to scanning the subdirectory
        let dir = corpus.join(subdir);
        let mut names: Vec<String> = std::fs::read_dir(&dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "wav"))
            .map(|e| format!("{subdir}/{}", e.file_name().to_string_lossy()))
            .collect();
        names.sort();
        names
    };
    names
        .iter()
        .map(|rel| read_wav(&corpus.join(rel)).map_err(Into::into))
        .collect()
}

pub fn train(
    corpus: &Path,
    out: &Path,
    config: Option<&Path>,
    ovr: TrainOverrides,
) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(path) => TrainConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = ovr.variant {
        cfg.variant = v;
    }
    if let Some(v) = ovr.latent {
        cfg.latent_dim = v;
    }
    if let Some(v) = ovr.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = ovr.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = ovr.patience {
        cfg.patience = v;
    }
    if let Some(v) = ovr.seed {
        cfg.seed = v;
    }
    cfg.validate()?;

    let train_waves = read_list(corpus, "train.txt", "train")?;
    let val_waves = read_list(corpus, "val.txt", "val").unwrap_or_default();
    if train_waves.is_empty() {
        bail!("corpus {} contains no training utterances", corpus.display());
    }
    let to_specs = |waves: &[Waveform]| -> anyhow::Result<Vec<_>> {
        waves.iter().map(|w| stft(w).map_err(Into::into)).collect()
    };
    let train_specs = to_specs(&train_waves)?;
    let val_specs = to_specs(&val_waves)?;

    let outcome = rvae::training::train(&train_specs, &val_specs, &cfg)?;
    if outcome.diverged {
        eprintln!("warning: training diverged (NaN); keeping the last good checkpoint");
    }
    save_checkpoint(&outcome.checkpoint, out)?;

    RunManifest::new("train", cfg.seed, serde_json::to_value(&cfg)?)
        .with_checkpoint(out)?
        .write(&out.join("run.json"))?;
    let last = outcome.history.last();
    println!(
        "trained {} epochs (best epoch {}, val VFE {:.4}); checkpoint at {}",
        outcome.history.len(),
        outcome.checkpoint.meta.epoch,
        last.map_or(f64::NAN, |h| h.val_objective),
        out.display()
    );
    Ok(())
}

pub struct EnhanceOverrides {
    pub iters: Option<usize>,
    pub rank: Option<usize>,
    pub estep_steps: Option<usize>,
    pub seed: u64,
}

fn build_cfg(alg: Algorithm, variant: Variant, ovr: &EnhanceOverrides) -> EnhanceConfig {
    let mut cfg = EnhanceConfig::new(alg, variant);
    if let Some(v) = ovr.iters {
        cfg.iterations = v;
    }
    if let Some(v) = ovr.rank {
        cfg.rank = v;
    }
    if let Some(v) = ovr.estep_steps {
        cfg.estep_grad_steps = v;
    }
    cfg.seed = ovr.seed;
    cfg
}

pub fn enhance(
    ckpt_dir: &Path,
    input: &Path,
    output: &Path,
    alg: Algorithm,
    variant_check: Option<Variant>,
    ovr: EnhanceOverrides,
    trace_csv: Option<&Path>,
) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(ckpt_dir)?;
    if let Some(v) = variant_check {
        if v != ckpt.meta.variant {
            bail!(
                "variant mismatch: --variant {} but checkpoint {} was trained as {}",
                v,
                ckpt_dir.display(),
                ckpt.meta.variant
            );
        }
    }
    let wave = read_wav(input)?;
    let cfg = build_cfg(alg, ckpt.meta.variant, &ovr);
    let outcome = run_enhance(&wave, &ckpt, &cfg)?;
    if outcome.estep_aborted {
        eprintln!("warning: E-step aborted after repeated NaN; output uses the last stable state");
    }
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_wav(output, &outcome.wave, WavFormat::Float32)?;

    if let Some(path) = trace_csv {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "iteration,cost,vfe")?;
        for row in &outcome.trace {
            writeln!(f, "{},{},{}", row.iteration, row.cost, row.vfe)?;
        }
    }
    RunManifest::new(
        "enhance",
        ovr.seed,
        serde_json::json!({
            "algorithm": alg.as_str(),
            "variant": ckpt.meta.variant.as_str(),
            "iterations": cfg.iterations,
            "rank": cfg.rank,
            "estep_grad_steps": cfg.estep_grad_steps,
            "input": input.display().to_string(),
        }),
    )
    .with_checkpoint(ckpt_dir)?
    .write(&output.with_extension("run.json"))?;
    println!("enhanced {} -> {}", input.display(), output.display());
    Ok(())
}

pub fn mix(clean: &Path, noise: &Path, snr: f64, out_stem: &Path, seed: u64) -> anyhow::Result<()> {
    let clean_wave = read_wav(clean)?;
    let noise_wave = read_wav(noise)?;
    let (mixture, reference, _) = mix_at_snr(&MixSpec {
        clean: clean_wave,
        noise: noise_wave,
        snr_db: snr,
        seed,
    })?;

    let stem = out_stem.to_string_lossy();
    let stem = stem.strip_suffix(".wav").unwrap_or(&stem).to_string();
    if let Some(parent) = Path::new(&stem).parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mix_path = format!("{stem}.mix.wav");
    let ref_path = format!("{stem}.ref.wav");
    write_wav(Path::new(&mix_path), &mixture, WavFormat::Float32)?;
    write_wav(Path::new(&ref_path), &reference, WavFormat::Float32)?;
    RunManifest::new(
        "mix",
        seed,
        serde_json::json!({
            "clean": clean.display().to_string(),
            "noise": noise_stem(noise),
            "snr_db": snr,
        }),
    )
    .write(Path::new(&format!("{stem}.json")))?;
    println!("wrote {mix_path} at {snr} dB");
    Ok(())
}

fn noise_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

struct TestItem {
    id: String,
    mix: Waveform,
    reference: Waveform,
    noise: String,
    snr: String,
}

/// utterance id, noise label, snr label, noisy score, enhanced score.
type ScoreRow = (String, String, String, f64, f64);

pub fn evaluate(
    ckpt_dir: &Path,
    testset: &Path,
    report: &Path,
    alg: Algorithm,
    ovr: EnhanceOverrides,
    workers: usize,
) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(ckpt_dir)?;
    let mut items = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(testset)
        .with_context(|| format!("reading {}", testset.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.to_string_lossy().ends_with(".mix.wav"))
        .collect();
    entries.sort();
    for mix_path in entries {
        let base = mix_path.to_string_lossy().trim_end_matches(".mix.wav").to_string();
        let id = Path::new(&base)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| base.clone());
        let ref_path = format!("{base}.ref.wav");
        let reference = read_wav(Path::new(&ref_path))
            .with_context(|| format!("missing reference for {id} (expected {ref_path})"))?;
        let mix = read_wav(&mix_path)?;
        // optional metadata from the mix manifest
        let (noise, snr) = match std::fs::read_to_string(format!("{base}.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        {
            Some(v) => (
                v["config"]["noise"].as_str().unwrap_or("unknown").to_string(),
                v["config"]["snr_db"]
                    .as_f64()
                    .map(|s| format!("{s}"))
                    .unwrap_or_else(|| "unknown".to_string()),
            ),
            None => ("unknown".to_string(), "unknown".to_string()),
        };
        items.push(TestItem { id, mix, reference, noise, snr });
    }
    if items.is_empty() {
        bail!("testset {} contains no *.mix.wav files", testset.display());
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if workers == 0 { 0 } else { workers })
        .build()?;
    let variant = ckpt.meta.variant;
    let rows: Vec<anyhow::Result<ScoreRow>> = pool.install(|| {
        use rayon::prelude::*;
        items
            .par_iter()
            .map(|item| {
                // one stream per utterance so worker scheduling cannot
                // change results
                let mut cfg = build_cfg(alg, variant, &ovr);
                cfg.seed = domain_seed(ovr.seed, &item.id);
                let outcome = run_enhance(&item.mix, &ckpt, &cfg)?;
                let spec_geom = stft(&item.mix)?;
                let trim = |w: &Waveform| {
                    trim_for_scoring(w, spec_geom.window_size(), spec_geom.hop())
                };
                let reference = trim(&item.reference)?;
                let noisy_score = si_sdr(&reference, &trim(&item.mix)?)?;
                let enhanced_score = si_sdr(&reference, &trim(&outcome.wave)?)?;
                Ok((
                    item.id.clone(),
                    item.noise.clone(),
                    item.snr.clone(),
                    noisy_score,
                    enhanced_score,
                ))
            })
            .collect()
    });

    let mut csv = String::from("utterance,noise,snr,algorithm,variant,si_sdr_noisy,si_sdr_enhanced\n");
    let mut noisy = Vec::new();
    let mut enhanced = Vec::new();
    for row in rows {
        let (id, noise, snr, n_score, e_score) = row?;
        csv.push_str(&format!(
            "{id},{noise},{snr},{},{},{n_score},{e_score}\n",
            alg.as_str(),
            variant.as_str()
        ));
        noisy.push(n_score);
        enhanced.push(e_score);
    }
    if let Some(parent) = report.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(report, csv)?;

    let (med_noisy, _) = summarize(&noisy)?;
    let (med_enh, ci) = summarize(&enhanced)?;
    RunManifest::new(
        "evaluate",
        ovr.seed,
        serde_json::json!({
            "algorithm": alg.as_str(),
            "variant": variant.as_str(),
            "utterances": noisy.len(),
            "median_si_sdr_noisy": med_noisy,
            "median_si_sdr_enhanced": med_enh,
            "ci95": [ci.0, ci.1],
        }),
    )
    .with_checkpoint(ckpt_dir)?
    .write(&report.with_extension("run.json"))?;
    println!(
        "evaluated {} utterances: median SI-SDR {med_noisy:.2} dB noisy -> {med_enh:.2} dB enhanced (95% CI [{:.2}, {:.2}])",
        noisy.len(),
        ci.0,
        ci.1
    );
    Ok(())
}

pub fn gradcheck(seeds: u64) -> anyhow::Result<()> {
    let reports = rvae::diagnostics::run_gradient_suite(seeds)?;
    let mut failed = 0;
    for r in &reports {
        println!(
            "{}: max rel err {:.3e} (tol {:.0e}) ... {}",
            r.name,
            r.max_err,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        );
        if !r.passed {
            failed += 1;
        }
    }

    // M-step monotonicity spot-check
    let mstep = rvae::diagnostics::check_mstep_monotonicity(50, 20)?;
    println!(
        "{}: worst relative increase {:.3e} (tol {:.0e}) ... {}",
        mstep.name,
        mstep.max_err,
        mstep.tolerance,
        if mstep.passed { "ok" } else { "FAIL" }
    );
    if !mstep.passed {
        failed += 1;
    }

    if failed > 0 {
        bail!("{failed} gradcheck suites failed");
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}
