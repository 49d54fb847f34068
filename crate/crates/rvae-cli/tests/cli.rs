//! End-to-end command tests against the compiled binary.

use std::path::Path;
use std::process::Command;

fn rvae() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rvae"));
    // keep run manifests byte-reproducible
    cmd.env("SOURCE_DATE_EPOCH", "1700000000");
    cmd
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn rvae");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn dir_digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

#[test]
fn synth_corpus_is_deterministic_and_sized() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        run_ok(rvae()
            .args(["synth-corpus", "--minutes", "1", "--seed", "11"])
            .arg("--out")
            .arg(out));
    }
    assert_eq!(dir_digest(&a), dir_digest(&b), "same seed must give identical bytes");

    // total duration within 1% of 60 s
    let mut total = 0.0;
    for sub in ["train", "val", "test"] {
        for entry in std::fs::read_dir(a.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            let reader = hound::WavReader::open(&path).unwrap();
            total += reader.duration() as f64 / reader.spec().sample_rate as f64;
        }
    }
    assert!((total - 60.0).abs() / 60.0 < 0.01, "total duration {total}");

    // different seed differs
    let c = tmp.path().join("c");
    run_ok(rvae()
        .args(["synth-corpus", "--minutes", "1", "--seed", "12"])
        .arg("--out")
        .arg(&c));
    assert_ne!(dir_digest(&a), dir_digest(&c));
}

/// Train a micro checkpoint shared by the enhance/evaluate tests.
fn train_micro(tmp: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let corpus = tmp.join("corpus");
    run_ok(rvae()
        .args(["synth-corpus", "--minutes", "0.4", "--seed", "21"])
        .arg("--out")
        .arg(&corpus));
    let ckpt = tmp.join("ckpt");
    run_ok(rvae()
        .args([
            "train",
            "--variant",
            "rnn",
            "--latent",
            "4",
            "--hidden",
            "8",
            "--max-epochs",
            "2",
            "--seed",
            "3",
        ])
        .arg("--corpus")
        .arg(&corpus)
        .arg("--out")
        .arg(&ckpt));
    (corpus, ckpt)
}

#[test]
fn full_pipeline_smoke_and_contract_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (corpus, ckpt) = train_micro(tmp.path());
    assert!(ckpt.join("manifest.json").exists());
    assert!(ckpt.join("weights.bin").exists());
    assert!(ckpt.join("run.json").exists());

    // mix a held-out utterance with noise
    let clean = std::fs::read_to_string(corpus.join("test.txt"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    let stem = tmp.path().join("testset/utt0");
    run_ok(rvae()
        .args(["mix", "--snr", "0", "--seed", "5"])
        .arg("--clean")
        .arg(corpus.join(&clean))
        .arg("--noise")
        .arg(corpus.join("noise/colored_01.wav"))
        .arg("--out")
        .arg(&stem));
    assert!(tmp.path().join("testset/utt0.mix.wav").exists());
    assert!(tmp.path().join("testset/utt0.ref.wav").exists());

    // enhance with trace
    let out_wav = tmp.path().join("enhanced.wav");
    let trace = tmp.path().join("trace.csv");
    run_ok(rvae()
        .args(["enhance", "--alg", "vem", "--iters", "4", "--seed", "6"])
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--input")
        .arg(tmp.path().join("testset/utt0.mix.wav"))
        .arg("--output")
        .arg(&out_wav)
        .arg("--trace-csv")
        .arg(&trace));
    assert!(out_wav.exists());
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("iteration,cost,vfe"));
    assert_eq!(trace_text.lines().count(), 5);

    // determinism: repeat into a second file, byte-identical
    let out2 = tmp.path().join("enhanced2.wav");
    run_ok(rvae()
        .args(["enhance", "--alg", "vem", "--iters", "4", "--seed", "6"])
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--input")
        .arg(tmp.path().join("testset/utt0.mix.wav"))
        .arg("--output")
        .arg(&out2));
    assert_eq!(std::fs::read(&out_wav).unwrap(), std::fs::read(&out2).unwrap());

    // variant mismatch: message must name both variants, nonzero exit
    let out = rvae()
        .args(["enhance", "--alg", "vem", "--variant", "brnn"])
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--input")
        .arg(tmp.path().join("testset/utt0.mix.wav"))
        .arg("--output")
        .arg(tmp.path().join("nope.wav"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("brnn") && msg.contains("rnn"), "{msg}");

    // evaluate over the one-mixture testset
    let report = tmp.path().join("report.csv");
    run_ok(rvae()
        .args(["evaluate", "--alg", "peem", "--iters", "4", "--seed", "7"])
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--testset")
        .arg(tmp.path().join("testset"))
        .arg("--report")
        .arg(&report));
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "utterance,noise,snr,algorithm,variant,si_sdr_noisy,si_sdr_enhanced"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("utt0,colored_01,0,peem,rnn,"), "{row}");

    // evaluate on an empty directory: nonzero exit
    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = rvae()
        .args(["evaluate"])
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--testset")
        .arg(&empty)
        .arg("--report")
        .arg(tmp.path().join("empty.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn train_is_deterministic_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    run_ok(rvae()
        .args(["synth-corpus", "--minutes", "0.3", "--seed", "31"])
        .arg("--out")
        .arg(&corpus));
    let digests: Vec<_> = ["x", "y"]
        .iter()
        .map(|name| {
            let ckpt = tmp.path().join(name);
            run_ok(rvae()
                .args([
                    "train",
                    "--variant",
                    "ffnn",
                    "--latent",
                    "3",
                    "--hidden",
                    "6",
                    "--max-epochs",
                    "2",
                    "--seed",
                    "9",
                ])
                .arg("--corpus")
                .arg(&corpus)
                .arg("--out")
                .arg(&ckpt));
            dir_digest(&ckpt)
        })
        .collect();
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn gradcheck_passes_and_reports() {
    let stdout = run_ok(rvae().args(["gradcheck", "--seeds", "1"]));
    assert!(stdout.contains("m-step monotonicity"), "{stdout}");
    assert!(stdout.contains("all"), "{stdout}");
}
