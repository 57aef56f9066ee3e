//! Run configuration: one TOML file covering analysis, model, data,
//! training, pretraining, enhancement and artifact paths. Every command is
//! driven by the same file so that a config plus a seed pins a run exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{self, StftConfig};
use crate::error::{Error, Result};
use crate::mask::EnhanceConfig;
use crate::mode::{InferStrategy, ModeConfig};

/// Environment variable overriding `paths.base`.
pub const BASE_DIR_ENV: &str = "MODE_ENHANCE_BASE";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub num_experts: usize,
    /// Context frames on each side of the center frame.
    pub context: usize,
    pub expert_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    pub batchnorm: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            num_experts: 5,
            context: 4,
            expert_hidden: vec![512, 512, 512],
            gate_hidden: vec![512, 512, 512],
            batchnorm: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub sample_rate: u32,
    pub snr_list: Vec<f64>,
    pub val_fraction: f64,
    /// Synthetic corpus parameters for `synth`.
    pub synth_utterances: usize,
    pub synth_segments: usize,
    pub synth_segment_dur: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            snr_list: vec![-5.0, 5.0],
            val_fraction: 0.1,
            synth_utterances: 24,
            synth_segments: 6,
            synth_segment_dur: 0.4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Joint fine-tuning after pretraining runs at `lr / fine_tune_lr_divisor`.
    pub fine_tune_lr_divisor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { lr: 1e-3, batch_size: 128, epochs: 20, seed: 17, fine_tune_lr_divisor: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    pub embedding_dim: usize,
    pub ae_hidden: Vec<usize>,
    pub ae_epochs: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub gate_epochs: usize,
    pub expert_epochs: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            ae_hidden: vec![256, 64],
            ae_epochs: 30,
            kmeans_restarts: 10,
            kmeans_max_iters: 100,
            gate_epochs: 10,
            expert_epochs: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceSection {
    pub beta: f64,
    pub gamma: f64,
    pub strategy: InferStrategy,
}

impl Default for EnhanceSection {
    fn default() -> Self {
        let e = EnhanceConfig::default();
        Self { beta: e.beta, gamma: e.gamma, strategy: InferStrategy::Full }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    /// Base directory all other paths resolve against; `MODE_ENHANCE_BASE`
    /// overrides it.
    pub base: PathBuf,
    pub clean_dir: PathBuf,
    pub noise_dir: PathBuf,
    pub features: PathBuf,
    pub model: PathBuf,
    pub pretrain_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            base: PathBuf::from("."),
            clean_dir: PathBuf::from("corpus/clean"),
            noise_dir: PathBuf::from("corpus/noise"),
            features: PathBuf::from("work/features.bin"),
            model: PathBuf::from("work/model.bin"),
            pretrain_dir: PathBuf::from("work/pretrain"),
            report_dir: PathBuf::from("work/reports"),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub pretrain: PretrainSection,
    pub enhance: EnhanceSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.enhance_config().validate()?;
        if self.model.num_experts == 0 {
            return Err(Error::Config("model.num_experts must be at least 1".into()));
        }
        if self.data.sample_rate == 0 {
            return Err(Error::Config("data.sample_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(Error::Config(format!(
                "data.val_fraction must lie in [0, 1), got {}",
                self.data.val_fraction
            )));
        }
        if self.data.snr_list.is_empty() {
            return Err(Error::Config("data.snr_list must not be empty".into()));
        }
        if self.train.fine_tune_lr_divisor <= 0.0 {
            return Err(Error::Config("train.fine_tune_lr_divisor must be positive".into()));
        }
        Ok(())
    }

    /// Base directory: environment override, then `paths.base`.
    pub fn base_dir(&self) -> PathBuf {
        match std::env::var_os(BASE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.paths.base.clone(),
        }
    }

    /// Resolves a configured path against the base directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir().join(path)
        }
    }

    /// Hash of everything that shapes features; embedded in models and
    /// feature files.
    pub fn feature_hash(&self) -> u64 {
        dsp::feature_hash(&self.stft, self.data.sample_rate, self.model.context)
    }

    /// Hash of the full effective configuration, for run manifests.
    pub fn config_hash(&self) -> u64 {
        let text = toml::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    pub fn mode_config(&self) -> ModeConfig {
        ModeConfig {
            num_experts: self.model.num_experts,
            context: self.model.context,
            num_bins: self.stft.num_bins(),
            num_mfcc: self.stft.n_mfcc,
            expert_hidden: self.model.expert_hidden.clone(),
            gate_hidden: self.model.gate_hidden.clone(),
            batchnorm: self.model.batchnorm,
            feature_hash: self.feature_hash(),
        }
    }

    pub fn enhance_config(&self) -> EnhanceConfig {
        EnhanceConfig { beta: self.enhance.beta, gamma: self.enhance.gamma }
    }
}
