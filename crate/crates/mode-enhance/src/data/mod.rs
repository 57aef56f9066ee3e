//! Corpus handling: WAV ingestion, SNR-controlled mixing, context-feature
//! dataset construction and the built-in synthetic corpus.

pub mod synth;
pub mod wav;

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{self, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::mask::compute_irm;
use crate::nn::serial::{self, ArtifactKind};

/// One corpus item: an utterance (or noise recording) plus optional
/// per-frame class labels from a sidecar file.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub waveform: Waveform,
    pub frame_labels: Option<Vec<usize>>,
}

/// A clean/noise/noisy triple mixed at a known SNR.
///
/// `noisy` is exactly `clean + noise` sample by sample; `noise` is the
/// scaled noise segment actually added.
#[derive(Debug, Clone)]
pub struct UtterancePair {
    pub clean: Waveform,
    pub noise: Waveform,
    pub noisy: Waveform,
    pub snr_db: f64,
    pub clean_id: String,
    pub noise_id: String,
}

/// Measured SNR in dB between a clean signal and a noise signal.
pub fn measure_snr_db(clean: &Waveform, noise: &Waveform) -> f64 {
    10.0 * (clean.power() / noise.power()).log10()
}

/// Scales a noise segment so that `10 log10(P_clean / P_noise) = snr_db`
/// over the full utterance, then adds it to the clean signal.
///
/// A noise recording longer than the utterance is randomly cropped; a
/// shorter one is tiled (with a random start phase) to cover it.
pub fn mix_at_snr(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UtterancePair> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::Data(format!(
            "sample rate mismatch: clean {} Hz vs noise {} Hz",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if clean.is_empty() || noise.is_empty() {
        return Err(Error::Data("cannot mix empty signals".into()));
    }
    let len = clean.len();
    let segment: Vec<f64> = if noise.len() >= len {
        let offset = rng.random_range(0..=noise.len() - len);
        noise.samples[offset..offset + len].to_vec()
    } else {
        let offset = rng.random_range(0..noise.len());
        (0..len).map(|i| noise.samples[(offset + i) % noise.len()]).collect()
    };
    let p_clean = clean.power();
    let p_noise = segment.iter().map(|s| s * s).sum::<f64>() / len as f64;
    if p_clean <= 0.0 {
        return Err(Error::Data("clean signal is silent, SNR undefined".into()));
    }
    if p_noise <= 0.0 {
        return Err(Error::Data("noise segment is silent, SNR undefined".into()));
    }
    let scale = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = segment.iter().map(|s| s * scale).collect();
    let noisy: Vec<f64> = clean.samples.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    Ok(UtterancePair {
        clean: clean.clone(),
        noise: Waveform { samples: scaled, sample_rate: clean.sample_rate },
        noisy: Waveform { samples: noisy, sample_rate: clean.sample_rate },
        snr_db,
        clean_id: String::new(),
        noise_id: String::new(),
    })
}

/// Dataset construction parameters.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub snr_list: Vec<f64>,
    /// Context frames on each side for the stacked inputs.
    pub context: usize,
    /// IRM exponent for the targets.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { snr_list: vec![-5.0, 5.0], context: 4, gamma: 0.5, seed: 0 }
    }
}

/// Per-utterance features: one training example per STFT frame.
#[derive(Debug, Clone)]
pub struct UtteranceFeatures {
    pub utt_id: String,
    pub noise_id: String,
    pub snr_db: f64,
    /// Context-stacked, normalized noisy log-spectra, (F, (2c+1)*bins).
    pub expert_inputs: Array2<f64>,
    /// Context-stacked, normalized noisy MFCCs, (F, (2c+1)*n_mfcc).
    pub gate_inputs: Array2<f64>,
    /// IRM targets, (F, bins), in [0, 1].
    pub targets: Array2<f64>,
    /// Normalized single-frame clean log-spectra, (F, bins); clustering input.
    pub clean_logspec: Array2<f64>,
    pub frame_labels: Option<Vec<usize>>,
    pub clean: Waveform,
    pub noisy: Waveform,
}

impl UtteranceFeatures {
    pub fn num_frames(&self) -> usize {
        self.targets.nrows()
    }
}

/// A full feature set with the configuration it was built under.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub utterances: Vec<UtteranceFeatures>,
    pub stft: StftConfig,
    pub sample_rate: u32,
    pub context: usize,
    pub gamma: f64,
    pub feature_hash: u64,
}

/// Flattened view of a dataset for minibatch training.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub expert: Array2<f64>,
    pub gate: Array2<f64>,
    pub targets: Array2<f64>,
    /// Present only when every utterance carries labels.
    pub frame_labels: Option<Vec<usize>>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset {
    pub fn num_examples(&self) -> usize {
        self.utterances.iter().map(|u| u.num_frames()).sum()
    }

    /// Concatenates all utterances into one example matrix.
    pub fn stack(&self) -> FeatureMatrix {
        let total = self.num_examples();
        let e_dim = self.utterances[0].expert_inputs.ncols();
        let g_dim = self.utterances[0].gate_inputs.ncols();
        let t_dim = self.utterances[0].targets.ncols();
        let mut expert = Array2::zeros((total, e_dim));
        let mut gate = Array2::zeros((total, g_dim));
        let mut targets = Array2::zeros((total, t_dim));
        let mut labels = Vec::with_capacity(total);
        let mut have_labels = true;
        let mut row = 0;
        for u in &self.utterances {
            let f = u.num_frames();
            expert.slice_mut(ndarray::s![row..row + f, ..]).assign(&u.expert_inputs);
            gate.slice_mut(ndarray::s![row..row + f, ..]).assign(&u.gate_inputs);
            targets.slice_mut(ndarray::s![row..row + f, ..]).assign(&u.targets);
            match &u.frame_labels {
                Some(l) => labels.extend_from_slice(l),
                None => have_labels = false,
            }
            row += f;
        }
        FeatureMatrix { expert, gate, targets, frame_labels: have_labels.then_some(labels) }
    }

    /// All normalized clean log-spectrum frames (clustering input).
    pub fn clean_frames(&self) -> Array2<f64> {
        let total = self.num_examples();
        let dim = self.utterances[0].clean_logspec.ncols();
        let mut out = Array2::zeros((total, dim));
        let mut row = 0;
        for u in &self.utterances {
            let f = u.num_frames();
            out.slice_mut(ndarray::s![row..row + f, ..]).assign(&u.clean_logspec);
            row += f;
        }
        out
    }

    /// Seeded split by utterance into (train, validation). A positive
    /// fraction keeps at least one utterance for validation; zero keeps none.
    pub fn split(&self, val_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.utterances.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let min_val = if val_fraction > 0.0 && self.utterances.len() > 1 { 1 } else { 0 };
        let n_val = ((self.utterances.len() as f64 * val_fraction).round() as usize)
            .min(self.utterances.len().saturating_sub(1))
            .max(min_val);
        let val_set: std::collections::BTreeSet<usize> =
            order.into_iter().take(n_val).collect();
        let mut train = self.clone_empty();
        let mut val = self.clone_empty();
        for (i, u) in self.utterances.iter().enumerate() {
            if val_set.contains(&i) {
                val.utterances.push(u.clone());
            } else {
                train.utterances.push(u.clone());
            }
        }
        (train, val)
    }

    fn clone_empty(&self) -> Dataset {
        Dataset {
            utterances: Vec::new(),
            stft: self.stft.clone(),
            sample_rate: self.sample_rate,
            context: self.context,
            gamma: self.gamma,
            feature_hash: self.feature_hash,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serial::write_header(&mut w, ArtifactKind::FeatureSet)?;
        serial::put_u64(&mut w, self.stft.frame_len as u64)?;
        serial::put_u64(&mut w, self.stft.hop as u64)?;
        serial::put_f64(&mut w, self.stft.magnitude_floor)?;
        serial::put_u64(&mut w, self.stft.n_mels as u64)?;
        serial::put_u64(&mut w, self.stft.n_mfcc as u64)?;
        serial::put_u32(&mut w, self.sample_rate)?;
        serial::put_u64(&mut w, self.context as u64)?;
        serial::put_f64(&mut w, self.gamma)?;
        serial::put_u64(&mut w, self.feature_hash)?;
        serial::put_u64(&mut w, self.utterances.len() as u64)?;
        for u in &self.utterances {
            serial::put_string(&mut w, &u.utt_id)?;
            serial::put_string(&mut w, &u.noise_id)?;
            serial::put_f64(&mut w, u.snr_db)?;
            serial::put_array2(&mut w, &u.expert_inputs)?;
            serial::put_array2(&mut w, &u.gate_inputs)?;
            serial::put_array2(&mut w, &u.targets)?;
            serial::put_array2(&mut w, &u.clean_logspec)?;
            match &u.frame_labels {
                Some(labels) => {
                    serial::put_u8(&mut w, 1)?;
                    serial::put_u64(&mut w, labels.len() as u64)?;
                    for &l in labels {
                        serial::put_u64(&mut w, l as u64)?;
                    }
                }
                None => serial::put_u8(&mut w, 0)?,
            }
            serial::put_f64_slice(&mut w, &u.clean.samples)?;
            serial::put_f64_slice(&mut w, &u.noisy.samples)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Data(format!("cannot open features file {}: {e}", path.display()))
        })?;
        let mut r = BufReader::new(file);
        serial::read_header(&mut r, ArtifactKind::FeatureSet)?;
        let stft = StftConfig {
            frame_len: serial::get_u64(&mut r)? as usize,
            hop: serial::get_u64(&mut r)? as usize,
            window: crate::dsp::WindowKind::Hann,
            magnitude_floor: serial::get_f64(&mut r)?,
            n_mels: serial::get_u64(&mut r)? as usize,
            n_mfcc: serial::get_u64(&mut r)? as usize,
        };
        let sample_rate = serial::get_u32(&mut r)?;
        let context = serial::get_u64(&mut r)? as usize;
        let gamma = serial::get_f64(&mut r)?;
        let feature_hash = serial::get_u64(&mut r)?;
        let n = serial::get_u64(&mut r)? as usize;
        let mut utterances = Vec::with_capacity(n);
        for _ in 0..n {
            let utt_id = serial::get_string(&mut r)?;
            let noise_id = serial::get_string(&mut r)?;
            let snr_db = serial::get_f64(&mut r)?;
            let expert_inputs = serial::get_array2(&mut r)?;
            let gate_inputs = serial::get_array2(&mut r)?;
            let targets = serial::get_array2(&mut r)?;
            let clean_logspec = serial::get_array2(&mut r)?;
            let frame_labels = if serial::get_u8(&mut r)? != 0 {
                let len = serial::get_u64(&mut r)? as usize;
                let mut labels = Vec::with_capacity(len);
                for _ in 0..len {
                    labels.push(serial::get_u64(&mut r)? as usize);
                }
                Some(labels)
            } else {
                None
            };
            let clean = Waveform { samples: serial::get_f64_vec(&mut r)?, sample_rate };
            let noisy = Waveform { samples: serial::get_f64_vec(&mut r)?, sample_rate };
            utterances.push(UtteranceFeatures {
                utt_id,
                noise_id,
                snr_db,
                expert_inputs,
                gate_inputs,
                targets,
                clean_logspec,
                frame_labels,
                clean,
                noisy,
            });
        }
        let ds = Dataset { utterances, stft, sample_rate, context, gamma, feature_hash };
        let expected = dsp::feature_hash(&ds.stft, ds.sample_rate, ds.context);
        if expected != ds.feature_hash {
            return Err(Error::Format("features file hash does not match its config".into()));
        }
        Ok(ds)
    }
}

/// Extracts the per-utterance feature block from one mixed pair.
fn utterance_features(
    pair: &UtterancePair,
    labels: Option<&[usize]>,
    stft_cfg: &StftConfig,
    context: usize,
    gamma: f64,
) -> Result<UtteranceFeatures> {
    let clean_spec = dsp::stft(&pair.clean, stft_cfg)?;
    let noise_spec = dsp::stft(&pair.noise, stft_cfg)?;
    let noisy_spec = dsp::stft(&pair.noisy, stft_cfg)?;
    let irm = compute_irm(&clean_spec, &noise_spec, gamma)?;

    let noisy_logspec = dsp::cmvn(&dsp::log_spectrum(&noisy_spec, stft_cfg))?;
    let expert_inputs = dsp::stack_context(&noisy_logspec, context);
    let noisy_mfcc = dsp::cmvn(&dsp::mfcc(&noisy_spec, stft_cfg)?)?;
    let gate_inputs = dsp::stack_context(&noisy_mfcc, context);
    let clean_logspec = dsp::cmvn(&dsp::log_spectrum(&clean_spec, stft_cfg))?;

    if let Some(l) = labels {
        if l.len() != irm.num_frames() {
            return Err(Error::Data(format!(
                "{}: {} frame labels but {} frames",
                pair.clean_id,
                l.len(),
                irm.num_frames()
            )));
        }
    }
    Ok(UtteranceFeatures {
        utt_id: pair.clean_id.clone(),
        noise_id: pair.noise_id.clone(),
        snr_db: pair.snr_db,
        expert_inputs,
        gate_inputs,
        targets: irm.values,
        clean_logspec,
        frame_labels: labels.map(|l| l.to_vec()),
        clean: pair.clean.clone(),
        noisy: pair.noisy.clone(),
    })
}

/// Builds the training dataset: per utterance, mix with a drawn noise and
/// SNR, analyze, compute IRM targets, normalize per utterance, and stack
/// context frames with edge replication. Deterministic under the seed.
pub fn build_dataset(
    clean_corpus: &[CorpusEntry],
    noise_corpus: &[CorpusEntry],
    stft_cfg: &StftConfig,
    cfg: &DatasetConfig,
) -> Result<Dataset> {
    stft_cfg.validate()?;
    if clean_corpus.is_empty() {
        return Err(Error::Data("clean corpus is empty".into()));
    }
    if noise_corpus.is_empty() {
        return Err(Error::Data("noise corpus is empty".into()));
    }
    if cfg.snr_list.is_empty() {
        return Err(Error::Config("snr list is empty".into()));
    }
    if cfg.gamma.is_nan() || cfg.gamma <= 0.0 || cfg.gamma > 1.0 {
        return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", cfg.gamma)));
    }
    let sample_rate = clean_corpus[0].waveform.sample_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut utterances = Vec::with_capacity(clean_corpus.len());
    for entry in clean_corpus {
        if entry.waveform.sample_rate != sample_rate {
            return Err(Error::Data(format!(
                "{}: sample rate {} differs from corpus rate {sample_rate}",
                entry.id, entry.waveform.sample_rate
            )));
        }
        let noise = &noise_corpus[rng.random_range(0..noise_corpus.len())];
        let snr_db = cfg.snr_list[rng.random_range(0..cfg.snr_list.len())];
        let mut pair = mix_at_snr(&entry.waveform, &noise.waveform, snr_db, &mut rng)
            .map_err(|e| Error::Data(format!("{}: {e}", entry.id)))?;
        pair.clean_id = entry.id.clone();
        pair.noise_id = noise.id.clone();
        let features = utterance_features(
            &pair,
            entry.frame_labels.as_deref(),
            stft_cfg,
            cfg.context,
            cfg.gamma,
        )?;
        utterances.push(features);
    }
    Ok(Dataset {
        utterances,
        stft: stft_cfg.clone(),
        sample_rate,
        context: cfg.context,
        gamma: cfg.gamma,
        feature_hash: dsp::feature_hash(stft_cfg, sample_rate, cfg.context),
    })
}

/// Loads a corpus directory: all `*.wav` files sorted by name, or the files
/// listed in `manifest.txt` (one relative path per line) when present.
/// Unparseable WAV files are skipped and reported in the warnings; a file
/// with the wrong sample rate is a hard error.
pub fn load_corpus(dir: &Path, expected_rate: u32) -> Result<(Vec<CorpusEntry>, Vec<String>)> {
    let manifest = dir.join("manifest.txt");
    let paths: Vec<std::path::PathBuf> = if manifest.is_file() {
        std::fs::read_to_string(&manifest)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| dir.join(l))
            .collect()
    } else {
        let mut found: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::Data(format!("cannot read corpus dir {}: {e}", dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        found.sort();
        found
    };
    if paths.is_empty() {
        return Err(Error::Data(format!("no WAV files found in {}", dir.display())));
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for path in paths {
        let waveform = match wav::read_wav(&path) {
            Ok(w) => w,
            Err(Error::Format(msg)) => {
                warnings.push(format!("skipping {msg}"));
                continue;
            }
            Err(other) => return Err(other),
        };
        if waveform.sample_rate != expected_rate {
            return Err(Error::Data(format!(
                "{} is sampled at {} Hz, expected {expected_rate} Hz (resampling is not supported)",
                path.display(),
                waveform.sample_rate
            )));
        }
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let label_path = path.with_extension("labels.txt");
        let frame_labels = if label_path.is_file() {
            let mut labels = Vec::new();
            for (ln, line) in std::fs::read_to_string(&label_path)?.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                labels.push(line.parse::<usize>().map_err(|_| {
                    Error::Data(format!("{}: bad label on line {}", label_path.display(), ln + 1))
                })?);
            }
            Some(labels)
        } else {
            None
        };
        entries.push(CorpusEntry { id, waveform, frame_labels });
    }
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "no readable WAV files in {} ({} skipped)",
            dir.display(),
            warnings.len()
        )));
    }
    Ok((entries, warnings))
}

/// Writes a corpus to disk as WAV files plus `.labels.txt` sidecars (one
/// class id per STFT frame).
pub fn write_corpus(dir: &Path, entries: &[CorpusEntry]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for entry in entries {
        let path = dir.join(format!("{}.wav", entry.id));
        wav::write_wav(&path, &entry.waveform)?;
        if let Some(labels) = &entry.frame_labels {
            let mut out = String::with_capacity(labels.len() * 2);
            for l in labels {
                out.push_str(&l.to_string());
                out.push('\n');
            }
            std::fs::write(path.with_extension("labels.txt"), out)?;
        }
    }
    Ok(())
}
