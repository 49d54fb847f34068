//! Command-line pipeline: synthesize corpora, train priors, enhance noisy
//! audio, build mixtures, evaluate, and self-check gradients.

mod cmd;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "rvae", version, about = "Deep generative speech enhancement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic clean-speech corpus plus noise.
    SynthCorpus {
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Total clean-speech duration in minutes.
        #[arg(long, default_value_t = 1.0)]
        minutes: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Noise files to emit (half white, half colored).
        #[arg(long, default_value_t = 4)]
        noise_files: usize,
    },
    /// Train a variational prior/encoder pair on a corpus directory.
    Train {
        /// Corpus directory produced by synth-corpus (or with train.txt /
        /// val.txt lists of 16 kHz mono WAVs).
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint output directory.
        #[arg(long)]
        out: PathBuf,
        /// Optional TOML config; flags below override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<rvae::Variant>,
        #[arg(long, value_name = "L")]
        latent: Option<usize>,
        #[arg(long, value_name = "H")]
        hidden: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance a noisy WAV with a trained checkpoint.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_name = "IN.WAV")]
        input: PathBuf,
        #[arg(long, value_name = "OUT.WAV")]
        output: PathBuf,
        /// E-step algorithm.
        #[arg(long, default_value = "vem")]
        alg: rvae::enhancer::Algorithm,
        /// Cross-check: fail if the checkpoint variant differs.
        #[arg(long)]
        variant: Option<rvae::Variant>,
        #[arg(long)]
        iters: Option<usize>,
        /// NMF rank.
        #[arg(long, value_name = "K")]
        k: Option<usize>,
        /// Gradient steps per E-step (default: 10 for ffnn, 1 otherwise).
        #[arg(long)]
        estep_steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write a per-iteration convergence trace (iteration, C(phi), VFE).
        #[arg(long)]
        trace_csv: Option<PathBuf>,
    },
    /// Mix clean speech with noise at an exact energy SNR.
    Mix {
        #[arg(long, value_name = "CLEAN.WAV")]
        clean: PathBuf,
        #[arg(long, value_name = "NOISE.WAV")]
        noise: PathBuf,
        /// Target SNR in dB.
        #[arg(long)]
        snr: f64,
        /// Output stem: writes STEM.mix.wav, STEM.ref.wav, STEM.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Enhance every mixture in a testset and report SI-SDR scores.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of *.mix.wav / *.ref.wav pairs (see `mix`).
        #[arg(long)]
        testset: PathBuf,
        /// CSV report path.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "vem")]
        alg: rvae::enhancer::Algorithm,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, value_name = "K")]
        k: Option<usize>,
        #[arg(long)]
        estep_steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Run the gradient / EM property suites and exit nonzero on failure.
    Gradcheck {
        /// Seeds per check family.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SynthCorpus { out, minutes, seed, noise_files } => {
            cmd::synth_corpus(&out, minutes, seed, noise_files)
        }
        Command::Train {
            corpus,
            out,
            config,
            variant,
            latent,
            hidden,
            max_epochs,
            patience,
            seed,
        } => cmd::train(
            &corpus,
            &out,
            config.as_deref(),
            cmd::TrainOverrides { variant, latent, hidden, max_epochs, patience, seed },
        ),
        Command::Enhance {
            ckpt,
            input,
            output,
            alg,
            variant,
            iters,
            k,
            estep_steps,
            seed,
            trace_csv,
        } => cmd::enhance(
            &ckpt,
            &input,
            &output,
            alg,
            variant,
            cmd::EnhanceOverrides { iters, rank: k, estep_steps, seed },
            trace_csv.as_deref(),
        ),
        Command::Mix { clean, noise, snr, out, seed } => {
            cmd::mix(&clean, &noise, snr, &out, seed)
        }
        Command::Evaluate {
            ckpt,
            testset,
            report,
            alg,
            iters,
            k,
            estep_steps,
            seed,
            workers,
        } => cmd::evaluate(
            &ckpt,
            &testset,
            &report,
            alg,
            cmd::EnhanceOverrides { iters, rank: k, estep_steps, seed },
            workers,
        ),
        Command::Gradcheck { seeds } => cmd::gradcheck(seeds),
    }
}
