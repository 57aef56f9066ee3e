//! End-to-end tests of the command-line pipeline: synth -> prepare ->
//! pretrain -> train -> enhance -> evaluate, plus the determinism and
//! error-path contracts.

use std::path::{Path, PathBuf};
use std::process::Output;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mode-enhance")
}

fn run_in(base: &Path, args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .env_remove("MODE_ENHANCE_BASE")
        .current_dir(base)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(base: &Path) -> PathBuf {
    let path = base.join("run.toml");
    let text = format!(
        r#"
[stft]
frame_len = 128
hop = 64
n_mels = 16
n_mfcc = 6

[model]
num_experts = 2
context = 2
expert_hidden = [16]
gate_hidden = [8]
batchnorm = true

[data]
sample_rate = 16000
snr_list = [0.0]
val_fraction = 0.2
synth_utterances = 8
synth_segments = 3
synth_segment_dur = 0.25

[train]
lr = 1e-3
batch_size = 64
epochs = 2
seed = 9

[pretrain]
embedding_dim = 4
ae_hidden = [16]
ae_epochs = 4
kmeans_restarts = 2
kmeans_max_iters = 20
gate_epochs = 2
expert_epochs = 2

[paths]
base = "{}"
"#,
        base.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let config = write_config(base);
    let cfg = config.to_str().unwrap();

    assert_ok(&run_in(base, &["--config", cfg, "synth"]), "synth");
    assert_ok(&run_in(base, &["--config", cfg, "prepare"]), "prepare");

    // Re-running synth and prepare with the same config and seed must
    // reproduce bit-identical artifacts.
    let features_first = std::fs::read(base.join("work/features.bin")).unwrap();
    let wav_first = std::fs::read(base.join("corpus/clean/synth-0000.wav")).unwrap();
    assert_ok(&run_in(base, &["--config", cfg, "synth"]), "synth again");
    assert_ok(&run_in(base, &["--config", cfg, "prepare"]), "prepare again");
    assert_eq!(features_first, std::fs::read(base.join("work/features.bin")).unwrap());
    assert_eq!(wav_first, std::fs::read(base.join("corpus/clean/synth-0000.wav")).unwrap());

    assert_ok(&run_in(base, &["--config", cfg, "pretrain"]), "pretrain");
    assert_ok(&run_in(base, &["--config", cfg, "train"]), "train");
    let model_first = std::fs::read(base.join("work/model.bin")).unwrap();
    assert_ok(&run_in(base, &["--config", cfg, "train"]), "train again");
    assert_eq!(
        model_first,
        std::fs::read(base.join("work/model.bin")).unwrap(),
        "training must be bit-deterministic under a fixed config and seed"
    );

    // Manifest records the run without timestamps.
    let manifest = std::fs::read_to_string(base.join("work/model.manifest.txt")).unwrap();
    assert!(manifest.contains("command=train"));
    assert!(manifest.contains("feature_hash="));

    let out = run_in(
        base,
        &[
            "--config",
            cfg,
            "enhance",
            "-i",
            "corpus/clean/synth-0001.wav",
            "-o",
            "work/enhanced.wav",
            "--strategy",
            "top1",
        ],
    );
    assert_ok(&out, "enhance");
    assert!(base.join("work/enhanced.wav").is_file());

    let out = run_in(base, &["--config", cfg, "evaluate"]);
    assert_ok(&out, "evaluate");
    for report in
        ["eval_full.tsv", "eval_top1.tsv", "eval_oracle.tsv", "eval_noisy.tsv", "gate_probs.tsv", "summary.txt"]
    {
        assert!(base.join("work/reports").join(report).is_file(), "missing {report}");
    }
    let summary = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(summary.contains("oracle IRM"));
    assert!(summary.contains("utilization"));
}

#[test]
fn enhance_with_ones_mask_is_the_identity_on_clean_audio() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let config = write_config(base);
    let cfg = config.to_str().unwrap();
    assert_ok(&run_in(base, &["--config", cfg, "synth"]), "synth");

    let input = base.join("corpus/clean/synth-0002.wav");
    let output = base.join("work/identity.wav");
    let out = run_in(
        base,
        &[
            "--config",
            cfg,
            "enhance",
            "-i",
            input.to_str().unwrap(),
            "-o",
            output.to_str().unwrap(),
            "--mask",
            "ones",
        ],
    );
    assert_ok(&out, "enhance --mask ones");

    // The all-ones soft mask is the identity; after the 16-bit round trip
    // the output must match the input sample for sample.
    let a = mode_enhance::data::wav::read_wav(&input).unwrap();
    let b = mode_enhance::data::wav::read_wav(&output).unwrap();
    assert_eq!(a.len(), b.len());
    let worst = a
        .samples
        .iter()
        .zip(&b.samples)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    assert!(worst <= 1e-6, "identity enhancement drifted by {worst}");
}

#[test]
fn missing_artifacts_produce_data_errors_with_paths() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let config = write_config(base);
    let cfg = config.to_str().unwrap();

    // evaluate without a model: exit code 2, message names the missing path.
    let out = run_in(base, &["--config", cfg, "evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("model.bin"), "stderr was: {stderr}");

    // train without pretraining: actionable message and nonzero exit.
    assert_ok(&run_in(base, &["--config", cfg, "synth"]), "synth");
    assert_ok(&run_in(base, &["--config", cfg, "prepare"]), "prepare");
    let out = run_in(base, &["--config", cfg, "train"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--random-init"), "stderr was: {stderr}");

    // train from random init works without pretraining artifacts.
    let out = run_in(base, &["--config", cfg, "train", "--random-init", "--epochs", "1"]);
    assert_ok(&out, "train --random-init");
}

#[test]
fn mismatched_feature_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let config = write_config(base);
    let cfg = config.to_str().unwrap();
    assert_ok(&run_in(base, &["--config", cfg, "synth"]), "synth");
    assert_ok(&run_in(base, &["--config", cfg, "prepare"]), "prepare");

    // Same artifacts, different STFT config: refused, never coerced.
    let other = std::fs::read_to_string(&config)
        .unwrap()
        .replace("frame_len = 128", "frame_len = 256")
        .replace("hop = 64", "hop = 128");
    let other_path = base.join("other.toml");
    std::fs::write(&other_path, other).unwrap();
    let out = run_in(base, &["--config", other_path.to_str().unwrap(), "train", "--random-init"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config"), "stderr was: {stderr}");
}

#[test]
fn artifact_directories_are_locked_against_concurrent_writers() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let config = write_config(base);
    let cfg = config.to_str().unwrap();
    assert_ok(&run_in(base, &["--config", cfg, "synth"]), "synth");

    std::fs::create_dir_all(base.join("work")).unwrap();
    std::fs::write(base.join("work/.mode-enhance.lock"), b"").unwrap();
    let out = run_in(base, &["--config", cfg, "prepare"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    std::fs::remove_file(base.join("work/.mode-enhance.lock")).unwrap();
    assert_ok(&run_in(base, &["--config", cfg, "prepare"]), "prepare after unlock");
}

#[test]
fn wrong_sample_rate_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    let config = write_config(base);
    let cfg = config.to_str().unwrap();

    let wave = mode_enhance::dsp::Waveform { samples: vec![0.1; 4000], sample_rate: 8000 };
    let input = base.join("slow.wav");
    mode_enhance::data::wav::write_wav(&input, &wave).unwrap();
    let out = run_in(
        base,
        &["--config", cfg, "enhance", "-i", input.to_str().unwrap(), "-o", "out.wav", "--mask", "ones"],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("8000") && stderr.contains("16000"), "stderr was: {stderr}");
}

#[test]
fn usage_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run_in(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mixture of deep experts"));

    // A broken config is a usage/config error (exit 1).
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[stft]\nhop = 300\n").unwrap();
    let out = run_in(dir.path(), &["--config", bad.to_str().unwrap(), "synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));
}

#[test]
fn base_dir_env_override_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path();
    // Config says base = "."; the env var redirects everything.
    let config = base.join("rel.toml");
    std::fs::write(
        &config,
        "[data]\nsynth_utterances = 3\nsynth_segments = 3\nsynth_segment_dur = 0.25\n\
         [stft]\nframe_len = 128\nhop = 64\nn_mels = 16\nn_mfcc = 6\n",
    )
    .unwrap();
    let out = std::process::Command::new(bin())
        .args(["--config", config.to_str().unwrap(), "synth"])
        .env("MODE_ENHANCE_BASE", base)
        .current_dir("/")
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(base.join("corpus/clean/synth-0000.wav").is_file());
}
