//! Command-line front end: corpus synthesis, feature preparation,
//! pretraining, joint training, enhancement and evaluation.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mode_enhance::config::RunConfig;
use mode_enhance::data::{self, synth, wav, Dataset, DatasetConfig};
use mode_enhance::dsp;
use mode_enhance::error::{Error, Result};
use mode_enhance::eval::{self, MaskSource};
use mode_enhance::mask::{soft_enhance, Mask};
use mode_enhance::mode::{InferStrategy, ModeModel};
use mode_enhance::pretrain::{AutoencoderConfig, KmeansConfig, PretrainConfig};
use mode_enhance::train::{
    pretrain_mode_model, train_mode_model, PretrainPipelineConfig, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "mode-enhance",
    version,
    about = "Speech enhancement with a mixture of deep experts",
    after_help = "Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error."
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic labeled corpus into the corpus directories.
    Synth {
        #[arg(long)]
        clean_dir: Option<PathBuf>,
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        #[arg(long)]
        num_utterances: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Mix corpora at the configured SNRs and build the feature set.
    Prepare {
        #[arg(long)]
        clean_dir: Option<PathBuf>,
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        /// Output features file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated SNR list in dB, overriding the config.
        #[arg(long, value_delimiter = ',')]
        snr: Option<Vec<f64>>,
    },
    /// Unsupervised warm start: autoencoder embedding, k-means clustering,
    /// then gate and expert pretraining on the cluster labels.
    Pretrain {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Jointly train gate and experts on the specialization loss.
    Train {
        #[arg(long)]
        features: Option<PathBuf>,
        /// Pretrained model to start from (default: the pretrain output).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Start from random parameters instead of the pretrained model.
        #[arg(long)]
        random_init: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output model file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enhance a single WAV file with a trained model.
    Enhance {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Inference strategy: "full" or "top1".
        #[arg(long)]
        strategy: Option<String>,
        /// Soft-attenuation strength override.
        #[arg(long)]
        beta: Option<f64>,
        /// Mask source: "model", or "ones" for the identity mask.
        #[arg(long, default_value = "model")]
        mask: String,
    },
    /// Evaluate a trained model on a feature set and write reports.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
}

/// Exclusive lock on an artifact directory; removed on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".mode-enhance.lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} is locked by another run (stale? remove {})",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn parse_strategy(s: &str) -> Result<InferStrategy> {
    match s {
        "full" => Ok(InferStrategy::Full),
        "top1" => Ok(InferStrategy::Top1),
        other => Err(Error::Config(format!("unknown strategy '{other}', expected full|top1"))),
    }
}

fn write_manifest(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k}={v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn load_config(cli_config: &Option<PathBuf>) -> Result<RunConfig> {
    match cli_config {
        Some(path) => RunConfig::load(path),
        None => {
            let cfg = RunConfig::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn cmd_synth(
    cfg: &RunConfig,
    clean_dir: Option<PathBuf>,
    noise_dir: Option<PathBuf>,
    num_utterances: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let clean_dir = cfg.resolve(&clean_dir.unwrap_or_else(|| cfg.paths.clean_dir.clone()));
    let noise_dir = cfg.resolve(&noise_dir.unwrap_or_else(|| cfg.paths.noise_dir.clone()));
    let _clean_lock = DirLock::acquire(&clean_dir)?;
    let _noise_lock = if noise_dir != clean_dir { Some(DirLock::acquire(&noise_dir)?) } else { None };

    let synth_cfg = synth::SynthConfig {
        num_utterances: num_utterances.unwrap_or(cfg.data.synth_utterances),
        seed: seed.unwrap_or(cfg.train.seed),
        sample_rate: cfg.data.sample_rate,
        segment_dur: cfg.data.synth_segment_dur,
        segments_per_utt: cfg.data.synth_segments,
    };
    let (clean, noise) = synth::generate_corpus(&synth_cfg, &cfg.stft)?;
    data::write_corpus(&clean_dir, &clean)?;
    data::write_corpus(&noise_dir, &noise)?;
    // Named run_manifest so it cannot be confused with a corpus file list.
    write_manifest(
        &clean_dir.join("run_manifest.txt"),
        &[
            ("command", "synth".into()),
            ("version", env!("CARGO_PKG_VERSION").into()),
            ("config_hash", format!("{:016x}", cfg.config_hash())),
            ("seed", synth_cfg.seed.to_string()),
            ("clean_utterances", clean.len().to_string()),
            ("noise_files", noise.len().to_string()),
        ],
    )?;
    println!(
        "synth: wrote {} clean utterances to {} and {} noise files to {}",
        clean.len(),
        clean_dir.display(),
        noise.len(),
        noise_dir.display()
    );
    Ok(())
}

fn cmd_prepare(
    cfg: &RunConfig,
    clean_dir: Option<PathBuf>,
    noise_dir: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    snr: Option<Vec<f64>>,
) -> Result<()> {
    let clean_dir = cfg.resolve(&clean_dir.unwrap_or_else(|| cfg.paths.clean_dir.clone()));
    let noise_dir = cfg.resolve(&noise_dir.unwrap_or_else(|| cfg.paths.noise_dir.clone()));
    let out = cfg.resolve(&out.unwrap_or_else(|| cfg.paths.features.clone()));
    let out_dir = out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let _lock = DirLock::acquire(&out_dir)?;

    let (clean, warnings) = data::load_corpus(&clean_dir, cfg.data.sample_rate)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let (noise, warnings) = data::load_corpus(&noise_dir, cfg.data.sample_rate)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let seed = seed.unwrap_or(cfg.train.seed);
    let dcfg = DatasetConfig {
        snr_list: snr.unwrap_or_else(|| cfg.data.snr_list.clone()),
        context: cfg.model.context,
        gamma: cfg.enhance.gamma,
        seed,
    };
    let dataset = data::build_dataset(&clean, &noise, &cfg.stft, &dcfg)?;
    dataset.save(&out)?;
    write_manifest(
        &out.with_extension("manifest.txt"),
        &[
            ("command", "prepare".into()),
            ("version", env!("CARGO_PKG_VERSION").into()),
            ("config_hash", format!("{:016x}", cfg.config_hash())),
            ("feature_hash", format!("{:016x}", dataset.feature_hash)),
            ("seed", seed.to_string()),
            ("utterances", dataset.utterances.len().to_string()),
            ("examples", dataset.num_examples().to_string()),
        ],
    )?;
    println!(
        "prepare: {} utterances, {} examples -> {}",
        dataset.utterances.len(),
        dataset.num_examples(),
        out.display()
    );
    Ok(())
}

fn load_features(cfg: &RunConfig, features: Option<PathBuf>) -> Result<Dataset> {
    let path = cfg.resolve(&features.unwrap_or_else(|| cfg.paths.features.clone()));
    let dataset = Dataset::load(&path)?;
    if dataset.feature_hash != cfg.feature_hash() {
        return Err(Error::ConfigHashMismatch(format!(
            "features {} were built under config {:016x}, current config gives {:016x}; \
             re-run `prepare` or restore the matching config",
            path.display(),
            dataset.feature_hash,
            cfg.feature_hash()
        )));
    }
    Ok(dataset)
}

fn cmd_pretrain(cfg: &RunConfig, features: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<()> {
    let out_dir = cfg.resolve(&out_dir.unwrap_or_else(|| cfg.paths.pretrain_dir.clone()));
    let _lock = DirLock::acquire(&out_dir)?;
    let dataset = load_features(cfg, features)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = ModeModel::init(cfg.mode_config(), &mut rng)?;
    let pipeline = PretrainPipelineConfig {
        autoencoder: AutoencoderConfig {
            embedding_dim: cfg.pretrain.embedding_dim,
            hidden: cfg.pretrain.ae_hidden.clone(),
            epochs: cfg.pretrain.ae_epochs,
            batch_size: cfg.train.batch_size,
            lr: cfg.train.lr,
            seed: cfg.train.seed.wrapping_add(1),
        },
        kmeans: KmeansConfig {
            restarts: cfg.pretrain.kmeans_restarts,
            max_iters: cfg.pretrain.kmeans_max_iters,
            seed: cfg.train.seed.wrapping_add(2),
        },
        gate: PretrainConfig {
            epochs: cfg.pretrain.gate_epochs,
            batch_size: cfg.train.batch_size,
            lr: cfg.train.lr,
            seed: cfg.train.seed.wrapping_add(3),
        },
        experts: PretrainConfig {
            epochs: cfg.pretrain.expert_epochs,
            batch_size: cfg.train.batch_size,
            lr: cfg.train.lr,
            seed: cfg.train.seed.wrapping_add(4),
        },
    };
    let artifacts = pretrain_mode_model(&mut model, &dataset, &pipeline)?;

    model.save(&out_dir.join("model_pretrained.bin"))?;
    artifacts.autoencoder.save(&out_dir.join("autoencoder.bin"))?;
    artifacts.clustering.save(&out_dir.join("clustering.bin"))?;
    let sizes = mode_enhance::pretrain::cluster_sizes(&artifacts.frame_labels, model.num_experts());
    write_manifest(
        &out_dir.join("run_manifest.txt"),
        &[
            ("command", "pretrain".into()),
            ("version", env!("CARGO_PKG_VERSION").into()),
            ("config_hash", format!("{:016x}", cfg.config_hash())),
            ("feature_hash", format!("{:016x}", dataset.feature_hash)),
            ("seed", cfg.train.seed.to_string()),
            ("autoencoder_loss", artifacts.autoencoder.final_loss.to_string()),
            ("kmeans_wcss", artifacts.clustering.wcss.to_string()),
            ("gate_accuracy", artifacts.gate_accuracy.to_string()),
            ("cluster_sizes", format!("{sizes:?}")),
            ("fallback_experts", format!("{:?}", artifacts.expert_report.fallback_experts)),
        ],
    )?;
    println!(
        "pretrain: gate accuracy {:.3}, cluster sizes {:?}, artifacts in {}",
        artifacts.gate_accuracy,
        sizes,
        out_dir.display()
    );
    if !artifacts.expert_report.fallback_experts.is_empty() {
        eprintln!(
            "warning: experts {:?} had empty clusters and fell back to the full dataset",
            artifacts.expert_report.fallback_experts
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cfg: &RunConfig,
    features: Option<PathBuf>,
    init: Option<PathBuf>,
    random_init: bool,
    epochs: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let out = cfg.resolve(&out.unwrap_or_else(|| cfg.paths.model.clone()));
    let out_dir = out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let _lock = DirLock::acquire(&out_dir)?;
    let dataset = load_features(cfg, features)?;
    let (train_set, val_set) = dataset.split(cfg.data.val_fraction, cfg.train.seed);
    let train_matrix = train_set.stack();
    let val_matrix = val_set.stack();

    let seed = seed.unwrap_or(cfg.train.seed);
    let (mut model, init_desc, default_lr) = if random_init {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (ModeModel::init(cfg.mode_config(), &mut rng)?, "random".to_string(), cfg.train.lr)
    } else {
        let init_path = cfg.resolve(
            &init.unwrap_or_else(|| cfg.paths.pretrain_dir.join("model_pretrained.bin")),
        );
        if !init_path.is_file() {
            return Err(Error::Data(format!(
                "pretrained model {} not found; run `mode-enhance pretrain` first or pass --random-init",
                init_path.display()
            )));
        }
        let model = ModeModel::load(&init_path)?;
        (
            model,
            init_path.display().to_string(),
            cfg.train.lr / cfg.train.fine_tune_lr_divisor,
        )
    };
    model.check_feature_hash(dataset.feature_hash)?;

    let tcfg = TrainConfig {
        epochs: epochs.unwrap_or(cfg.train.epochs),
        batch_size: cfg.train.batch_size,
        lr: lr.unwrap_or(default_lr),
        seed: seed.wrapping_add(10),
    };
    let summary = train_mode_model(
        &mut model,
        &train_matrix,
        (!val_matrix.is_empty()).then_some(&val_matrix),
        &tcfg,
    )?;
    model.save(&out)?;

    let gate_report = if val_set.utterances.is_empty() {
        eval::gate_analysis(&model, &train_set)?
    } else {
        eval::gate_analysis(&model, &val_set)?
    };
    write_manifest(
        &out.with_extension("manifest.txt"),
        &[
            ("command", "train".into()),
            ("version", env!("CARGO_PKG_VERSION").into()),
            ("config_hash", format!("{:016x}", cfg.config_hash())),
            ("feature_hash", format!("{:016x}", dataset.feature_hash)),
            ("seed", seed.to_string()),
            ("init", init_desc.clone()),
            ("epochs", tcfg.epochs.to_string()),
            ("lr", tcfg.lr.to_string()),
            ("final_train_loss", summary.final_train_loss.to_string()),
            (
                "final_val_mask_mse",
                summary.final_val_mask_mse.map_or("n/a".into(), |v| v.to_string()),
            ),
            ("gate_utilization", format!("{:?}", gate_report.utilization)),
        ],
    )?;
    println!(
        "train: init {init_desc}, {} epochs, final loss {:.6}, val mask mse {}, gate utilization {:?} -> {}",
        tcfg.epochs,
        summary.final_train_loss,
        summary.final_val_mask_mse.map_or("n/a".into(), |v| format!("{v:.6}")),
        gate_report.utilization.iter().map(|u| (u * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        out.display()
    );
    Ok(())
}

fn cmd_enhance(
    cfg: &RunConfig,
    model_path: Option<PathBuf>,
    input: PathBuf,
    output: PathBuf,
    strategy: Option<String>,
    beta: Option<f64>,
    mask_source: String,
) -> Result<()> {
    let waveform = wav::read_wav_expecting(&input, cfg.data.sample_rate)?;
    let spec = dsp::stft(&waveform, &cfg.stft)?;
    let beta = beta.unwrap_or(cfg.enhance.beta);
    let strategy = match strategy {
        Some(s) => parse_strategy(&s)?,
        None => cfg.enhance.strategy,
    };

    let mask = match mask_source.as_str() {
        "ones" => Mask::new(ndarray::Array2::ones(spec.frames.dim()))?,
        "model" => {
            let path = cfg.resolve(&model_path.unwrap_or_else(|| cfg.paths.model.clone()));
            let model = ModeModel::load(&path)?;
            model.check_feature_hash(dsp::feature_hash(
                &cfg.stft,
                cfg.data.sample_rate,
                model.config.context,
            ))?;
            let logspec = dsp::cmvn(&dsp::log_spectrum(&spec, &cfg.stft))?;
            let expert_inputs = dsp::stack_context(&logspec, model.config.context);
            let mfcc = dsp::cmvn(&dsp::mfcc(&spec, &cfg.stft)?)?;
            let gate_inputs = dsp::stack_context(&mfcc, model.config.context);
            let values = model.infer_mask(&expert_inputs, &gate_inputs, strategy)?;
            Mask::new(values.mapv(|v| v.clamp(0.0, 1.0)))?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown mask source '{other}', expected model|ones"
            )))
        }
    };
    let enhanced_spec = soft_enhance(&spec, &mask, beta)?;
    let enhanced = dsp::istft(&enhanced_spec)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    wav::write_wav(&output, &enhanced)?;
    write_manifest(
        &output.with_extension("manifest.txt"),
        &[
            ("command", "enhance".into()),
            ("version", env!("CARGO_PKG_VERSION").into()),
            ("config_hash", format!("{:016x}", cfg.config_hash())),
            ("input", input.display().to_string()),
            ("mask", mask_source.clone()),
            ("beta", beta.to_string()),
        ],
    )?;
    println!(
        "enhance: {} -> {} ({} frames, mask {mask_source}, beta {beta:.4})",
        input.display(),
        output.display(),
        spec.num_frames()
    );
    Ok(())
}

fn cmd_evaluate(
    cfg: &RunConfig,
    model_path: Option<PathBuf>,
    features: Option<PathBuf>,
    report_dir: Option<PathBuf>,
) -> Result<()> {
    let model_path = cfg.resolve(&model_path.unwrap_or_else(|| cfg.paths.model.clone()));
    let model = ModeModel::load(&model_path)?;
    let dataset = load_features(cfg, features)?;
    model.check_feature_hash(dataset.feature_hash)?;
    let report_dir = cfg.resolve(&report_dir.unwrap_or_else(|| cfg.paths.report_dir.clone()));
    std::fs::create_dir_all(&report_dir)?;
    let enhance = cfg.enhance_config();

    let (full, top1, delta) = eval::compare_strategies(&model, &dataset, &enhance)?;
    let oracle = eval::evaluate_enhancement(MaskSource::OracleIrm, &dataset, &enhance)?;
    let noisy = eval::evaluate_enhancement(MaskSource::Identity, &dataset, &enhance)?;
    let gate = eval::gate_analysis(&model, &dataset)?;

    std::fs::write(report_dir.join("eval_full.tsv"), full.to_tsv())?;
    std::fs::write(report_dir.join("eval_top1.tsv"), top1.to_tsv())?;
    std::fs::write(report_dir.join("eval_oracle.tsv"), oracle.to_tsv())?;
    std::fs::write(report_dir.join("eval_noisy.tsv"), noisy.to_tsv())?;
    std::fs::write(report_dir.join("gate_probs.tsv"), gate.probs_tsv())?;

    let mut summary = String::new();
    summary.push_str("== model (full mixture) ==\n");
    summary.push_str(&full.to_table());
    summary.push_str("\n== model (top-1 expert) ==\n");
    summary.push_str(&top1.to_table());
    summary.push_str(&format!("\nfull-vs-top1 mean SI-SDR delta: {delta:.4} dB\n"));
    summary.push_str("\n== oracle IRM ==\n");
    summary.push_str(&oracle.to_table());
    summary.push_str("\n== unprocessed noisy ==\n");
    summary.push_str(&noisy.to_table());
    summary.push_str(&format!(
        "\ngate: utilization {:?}, mean entropy {:.4}{}\n",
        gate.utilization,
        gate.mean_entropy,
        gate.purity.map_or(String::new(), |p| format!(", purity {p:.3}")),
    ));
    std::fs::write(report_dir.join("summary.txt"), &summary)?;
    write_manifest(
        &report_dir.join("run_manifest.txt"),
        &[
            ("command", "evaluate".into()),
            ("version", env!("CARGO_PKG_VERSION").into()),
            ("config_hash", format!("{:016x}", cfg.config_hash())),
            ("feature_hash", format!("{:016x}", dataset.feature_hash)),
            ("model", model_path.display().to_string()),
            ("utterances", dataset.utterances.len().to_string()),
        ],
    )?;
    print!("{summary}");
    println!("evaluate: reports written to {}", report_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config)?;
    match cli.command {
        Command::Synth { clean_dir, noise_dir, num_utterances, seed } => {
            cmd_synth(&cfg, clean_dir, noise_dir, num_utterances, seed)
        }
        Command::Prepare { clean_dir, noise_dir, out, seed, snr } => {
            cmd_prepare(&cfg, clean_dir, noise_dir, out, seed, snr)
        }
        Command::Pretrain { features, out_dir } => cmd_pretrain(&cfg, features, out_dir),
        Command::Train { features, init, random_init, epochs, lr, seed, out } => {
            cmd_train(&cfg, features, init, random_init, epochs, lr, seed, out)
        }
        Command::Enhance { model, input, output, strategy, beta, mask } => {
            cmd_enhance(&cfg, model, input, output, strategy, beta, mask)
        }
        Command::Evaluate { model, features, report_dir } => {
            cmd_evaluate(&cfg, model, features, report_dir)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            let _ = std::io::stdout().flush();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
