//! Objective evaluation and model analysis: scale-invariant SDR, segmental
//! SNR, log-spectral distance, mask error, gate-utilization statistics and
//! expert-specialization reports.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::data::{Dataset, UtteranceFeatures};
use crate::dsp::{self, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::mask::{soft_enhance, EnhanceConfig, Mask};
use crate::mode::{InferStrategy, ModeModel};

/// Clamp for SI-SDR so perfect or orthogonal estimates stay finite.
pub const SI_SDR_CLAMP_DB: f64 = 60.0;

/// Scale-invariant signal-to-distortion ratio in dB, clamped to +/-60.
///
/// The estimate is projected onto the reference; the ratio of projected
/// energy to residual energy is insensitive to any positive rescaling of
/// the estimate.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Dimension(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    let ref_energy: f64 = reference.samples.iter().map(|s| s * s).sum();
    if ref_energy <= 0.0 {
        return Err(Error::Data("reference signal is silent".into()));
    }
    let dot: f64 =
        reference.samples.iter().zip(&estimate.samples).map(|(r, e)| r * e).sum();
    let alpha = dot / ref_energy;
    let mut target_energy = 0.0;
    let mut residual_energy = 0.0;
    for (r, e) in reference.samples.iter().zip(&estimate.samples) {
        let t = alpha * r;
        target_energy += t * t;
        let d = e - t;
        residual_energy += d * d;
    }
    let db = if residual_energy <= 0.0 {
        f64::INFINITY
    } else if target_energy <= 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (target_energy / residual_energy).log10()
    };
    Ok(db.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}

/// Mean over fixed-length frames of the clamped per-frame SNR in dB.
///
/// Frames are non-overlapping; a tail shorter than `frame` is dropped
/// (signals shorter than one frame are scored as a single frame). Silent
/// reference frames hit the lower clamp instead of producing NaN.
pub fn segmental_snr(
    reference: &Waveform,
    estimate: &Waveform,
    frame: usize,
    clamp_db: (f64, f64),
) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Dimension(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Data("empty signals".into()));
    }
    let frame = frame.max(1).min(reference.len());
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, e) in reference
        .samples
        .chunks_exact(frame)
        .zip(estimate.samples.chunks_exact(frame))
    {
        let sig: f64 = r.iter().map(|s| s * s).sum();
        let err: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = if sig <= 0.0 {
            f64::NEG_INFINITY
        } else if err <= 0.0 {
            f64::INFINITY
        } else {
            10.0 * (sig / err).log10()
        };
        total += db.clamp(clamp_db.0, clamp_db.1);
        count += 1;
    }
    Ok(total / count as f64)
}

/// Log-spectral distance in dB: mean over frames of the RMS difference of
/// the dB magnitude spectra (floored).
pub fn lsd(ref_spec: &Spectrogram, est_spec: &Spectrogram, floor: f64) -> Result<f64> {
    if ref_spec.frames.dim() != est_spec.frames.dim() {
        return Err(Error::Dimension(format!(
            "reference spectrogram is {:?}, estimate is {:?}",
            ref_spec.frames.dim(),
            est_spec.frames.dim()
        )));
    }
    let bins = ref_spec.num_bins() as f64;
    let mut total = 0.0;
    for (rrow, erow) in ref_spec.frames.rows().into_iter().zip(est_spec.frames.rows()) {
        let sq: f64 = rrow
            .iter()
            .zip(erow.iter())
            .map(|(r, e)| {
                let a = 20.0 * r.norm().max(floor).log10();
                let b = 20.0 * e.norm().max(floor).log10();
                (a - b) * (a - b)
            })
            .sum();
        total += (sq / bins).sqrt();
    }
    Ok(total / ref_spec.num_frames() as f64)
}

/// Plain mean squared per-bin mask error.
pub fn mask_mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "mask is {:?} but target is {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let total: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / pred.len() as f64)
}

/// Agreement between two labelings under the best one-to-one matching of
/// label values (exact subset-DP assignment; supports up to 20 classes).
pub fn matched_purity(pred: &[usize], truth: &[usize], num_pred: usize, num_truth: usize) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return 0.0;
    }
    assert!(num_truth <= 20, "purity assignment supports up to 20 classes");
    let mut counts = vec![vec![0u64; num_truth]; num_pred];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    let full = 1usize << num_truth;
    let mut dp = vec![0u64; full];
    for cluster in counts.iter().take(num_pred) {
        let mut next = vec![0u64; full];
        for mask in 0..full {
            next[mask] = next[mask].max(dp[mask]);
            for (t, &c) in cluster.iter().enumerate() {
                if mask & (1 << t) == 0 {
                    let nm = mask | (1 << t);
                    next[nm] = next[nm].max(dp[mask] + c);
                }
            }
        }
        dp = next;
    }
    let best = dp.iter().copied().max().unwrap_or(0);
    best as f64 / pred.len() as f64
}

/// Gate behavior over a dataset: per-frame probabilities, per-expert
/// utilization, decision entropy and (when labels exist) purity against the
/// planted frame classes.
#[derive(Debug, Clone)]
pub struct GateReport {
    /// All per-frame gate probabilities, (frames, m).
    pub frame_probs: Array2<f64>,
    /// Argmax expert per frame.
    pub argmax_expert: Vec<usize>,
    /// Mean gate probability per expert; sums to 1.
    pub utilization: Vec<f64>,
    /// Mean of the per-frame decision entropy, in [0, ln m].
    pub mean_entropy: f64,
    /// Best-assignment agreement between the argmax expert and the frame
    /// labels, when every utterance carries labels.
    pub purity: Option<f64>,
}

impl GateReport {
    /// Tab-separated per-frame probabilities for external plotting.
    pub fn probs_tsv(&self) -> String {
        let m = self.frame_probs.ncols();
        let mut out = String::new();
        out.push_str("frame");
        for i in 0..m {
            out.push_str(&format!("\tp{i}"));
        }
        out.push_str("\targmax\n");
        for (t, row) in self.frame_probs.rows().into_iter().enumerate() {
            out.push_str(&t.to_string());
            for p in row.iter() {
                out.push_str(&format!("\t{p:.6}"));
            }
            out.push_str(&format!("\t{}\n", self.argmax_expert[t]));
        }
        out
    }
}

/// Runs the gate over every frame of a dataset and summarizes its decisions.
pub fn gate_analysis(model: &ModeModel, dataset: &Dataset) -> Result<GateReport> {
    model.check_feature_hash(dataset.feature_hash)?;
    if dataset.utterances.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let matrix = dataset.stack();
    let m = model.num_experts();
    let frame_probs = model.gate.infer(&matrix.gate)?;
    let frames = frame_probs.nrows();

    let mut utilization = vec![0.0; m];
    let mut entropy_total = 0.0;
    let mut argmax_expert = Vec::with_capacity(frames);
    for row in frame_probs.rows() {
        let mut best = 0;
        let mut best_p = f64::NEG_INFINITY;
        for (i, &p) in row.iter().enumerate() {
            utilization[i] += p;
            if p > 0.0 {
                entropy_total -= p * p.ln();
            }
            if p > best_p {
                best_p = p;
                best = i;
            }
        }
        argmax_expert.push(best);
    }
    for u in utilization.iter_mut() {
        *u /= frames as f64;
    }
    let mean_entropy = (entropy_total / frames as f64).max(0.0);

    let purity = matrix.frame_labels.as_ref().and_then(|labels| {
        let num_classes = labels.iter().copied().max().map_or(1, |c| c + 1);
        // The exact assignment is exponential in the class count; skip the
        // score rather than panic for unusually wide label sets.
        (num_classes <= 20).then(|| matched_purity(&argmax_expert, labels, m, num_classes))
    });
    Ok(GateReport { frame_probs, argmax_expert, utilization, mean_entropy, purity })
}

/// Where the enhancement mask comes from during evaluation.
#[derive(Clone, Copy)]
pub enum MaskSource<'a> {
    /// A trained mixture, evaluated with the given strategy.
    Model { model: &'a ModeModel, strategy: InferStrategy },
    /// The IRM targets themselves: the oracle upper bound.
    OracleIrm,
    /// An all-ones mask: the enhanced output equals the noisy input.
    Identity,
}

/// Per-utterance objective scores.
#[derive(Debug, Clone)]
pub struct UtteranceMetrics {
    pub utt_id: String,
    pub noise_id: String,
    pub snr_db: f64,
    pub si_sdr_db: f64,
    /// SI-SDR of the unprocessed noisy input, for improvement deltas.
    pub si_sdr_noisy_db: f64,
    pub seg_snr_db: f64,
    pub lsd_db: f64,
    pub mask_mse: f64,
}

/// Mean metric values over some group of utterances.
#[derive(Debug, Clone, Default)]
pub struct AggregateMetrics {
    pub si_sdr_db: f64,
    pub si_sdr_noisy_db: f64,
    pub seg_snr_db: f64,
    pub lsd_db: f64,
    pub mask_mse: f64,
}

#[derive(Debug, Clone)]
pub struct GroupMetrics {
    pub noise_id: String,
    pub snr_db: f64,
    pub count: usize,
    pub values: AggregateMetrics,
}

/// Full evaluation report: one row per utterance, per-condition groups and
/// the overall mean.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rows: Vec<UtteranceMetrics>,
    pub groups: Vec<GroupMetrics>,
    pub overall: AggregateMetrics,
}

fn aggregate<'a>(rows: impl Iterator<Item = &'a UtteranceMetrics>) -> (AggregateMetrics, usize) {
    let mut agg = AggregateMetrics::default();
    let mut count = 0usize;
    for r in rows {
        agg.si_sdr_db += r.si_sdr_db;
        agg.si_sdr_noisy_db += r.si_sdr_noisy_db;
        agg.seg_snr_db += r.seg_snr_db;
        agg.lsd_db += r.lsd_db;
        agg.mask_mse += r.mask_mse;
        count += 1;
    }
    if count > 0 {
        let n = count as f64;
        agg.si_sdr_db /= n;
        agg.si_sdr_noisy_db /= n;
        agg.seg_snr_db /= n;
        agg.lsd_db /= n;
        agg.mask_mse /= n;
    }
    (agg, count)
}

impl MetricReport {
    /// Human-readable table grouped by condition.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:>7} {:>5} {:>10} {:>10} {:>10} {:>8} {:>10}\n",
            "noise", "snr_db", "n", "si_sdr", "si_sdr_in", "seg_snr", "lsd", "mask_mse"
        ));
        for g in &self.groups {
            out.push_str(&format!(
                "{:<14} {:>7.1} {:>5} {:>10.3} {:>10.3} {:>10.3} {:>8.3} {:>10.6}\n",
                g.noise_id,
                g.snr_db,
                g.count,
                g.values.si_sdr_db,
                g.values.si_sdr_noisy_db,
                g.values.seg_snr_db,
                g.values.lsd_db,
                g.values.mask_mse
            ));
        }
        out.push_str(&format!(
            "{:<14} {:>7} {:>5} {:>10.3} {:>10.3} {:>10.3} {:>8.3} {:>10.6}\n",
            "mean",
            "-",
            self.rows.len(),
            self.overall.si_sdr_db,
            self.overall.si_sdr_noisy_db,
            self.overall.seg_snr_db,
            self.overall.lsd_db,
            self.overall.mask_mse
        ));
        out
    }

    /// Machine-readable per-utterance rows.
    /// Columns: utt_id, noise_id, snr_db, si_sdr_db, si_sdr_noisy_db,
    /// seg_snr_db, lsd_db, mask_mse.
    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("utt_id\tnoise_id\tsnr_db\tsi_sdr_db\tsi_sdr_noisy_db\tseg_snr_db\tlsd_db\tmask_mse\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.8}\n",
                r.utt_id, r.noise_id, r.snr_db, r.si_sdr_db, r.si_sdr_noisy_db, r.seg_snr_db,
                r.lsd_db, r.mask_mse
            ));
        }
        out
    }
}

fn mask_for_utterance(
    source: &MaskSource<'_>,
    utt: &UtteranceFeatures,
) -> Result<Array2<f64>> {
    match source {
        MaskSource::Model { model, strategy } => {
            model.infer_mask(&utt.expert_inputs, &utt.gate_inputs, *strategy)
        }
        MaskSource::OracleIrm => Ok(utt.targets.clone()),
        MaskSource::Identity => Ok(Array2::ones(utt.targets.dim())),
    }
}

/// Enhances every utterance of a test set with the given mask source and
/// scores it against the clean reference.
pub fn evaluate_enhancement(
    source: MaskSource<'_>,
    dataset: &Dataset,
    enhance: &EnhanceConfig,
) -> Result<MetricReport> {
    enhance.validate()?;
    if dataset.utterances.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    if let MaskSource::Model { model, .. } = &source {
        model.check_feature_hash(dataset.feature_hash)?;
    }
    let mut rows = Vec::with_capacity(dataset.utterances.len());
    for utt in &dataset.utterances {
        let mask_values = mask_for_utterance(&source, utt)?;
        let mask = Mask::new(mask_values.mapv(|v| v.clamp(0.0, 1.0)))?;
        let noisy_spec = dsp::stft(&utt.noisy, &dataset.stft)?;
        let clean_spec = dsp::stft(&utt.clean, &dataset.stft)?;
        let enhanced_spec = soft_enhance(&noisy_spec, &mask, enhance.beta)?;
        let enhanced = dsp::istft(&enhanced_spec)?;

        rows.push(UtteranceMetrics {
            utt_id: utt.utt_id.clone(),
            noise_id: utt.noise_id.clone(),
            snr_db: utt.snr_db,
            si_sdr_db: si_sdr(&utt.clean, &enhanced)?,
            si_sdr_noisy_db: si_sdr(&utt.clean, &utt.noisy)?,
            seg_snr_db: segmental_snr(&utt.clean, &enhanced, 256, (-10.0, 35.0))?,
            lsd_db: lsd(&clean_spec, &enhanced_spec, dataset.stft.magnitude_floor)?,
            mask_mse: mask_mse(&mask.values, &utt.targets)?,
        });
    }

    let mut keys: Vec<(String, String)> = Vec::new();
    let mut grouped: BTreeMap<(String, String), Vec<&UtteranceMetrics>> = BTreeMap::new();
    for r in &rows {
        let key = (r.noise_id.clone(), format!("{:.3}", r.snr_db));
        if !grouped.contains_key(&key) {
            keys.push(key.clone());
        }
        grouped.entry(key).or_default().push(r);
    }
    let mut groups = Vec::new();
    for key in keys {
        let members = &grouped[&key];
        let (values, count) = aggregate(members.iter().copied());
        groups.push(GroupMetrics {
            noise_id: key.0,
            snr_db: members[0].snr_db,
            count,
            values,
        });
    }
    let (overall, _) = aggregate(rows.iter());
    Ok(MetricReport { rows, groups, overall })
}

/// Evaluates both inference strategies and reports their mean SI-SDR delta
/// (full minus top-1).
pub fn compare_strategies(
    model: &ModeModel,
    dataset: &Dataset,
    enhance: &EnhanceConfig,
) -> Result<(MetricReport, MetricReport, f64)> {
    let full = evaluate_enhancement(
        MaskSource::Model { model, strategy: InferStrategy::Full },
        dataset,
        enhance,
    )?;
    let top1 = evaluate_enhancement(
        MaskSource::Model { model, strategy: InferStrategy::Top1 },
        dataset,
        enhance,
    )?;
    let delta = full.overall.si_sdr_db - top1.overall.si_sdr_db;
    Ok((full, top1, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_corpus, SynthConfig};
    use crate::data::{build_dataset, DatasetConfig};
    use crate::dsp::StftConfig;
    use crate::mode::ModeConfig;
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_wave(len: usize, seed: u64) -> Waveform {
        let mut r = rng(seed);
        Waveform {
            samples: (0..len).map(|_| r.random_range(-0.5..0.5)).collect(),
            sample_rate: 16000,
        }
    }

    #[test]
    fn si_sdr_clamps_and_is_scale_invariant() {
        let r = random_wave(4000, 1);
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CLAMP_DB);

        let doubled = Waveform {
            samples: r.samples.iter().map(|s| 2.0 * s).collect(),
            sample_rate: 16000,
        };
        assert_eq!(si_sdr(&r, &doubled).unwrap(), SI_SDR_CLAMP_DB);

        // Orthogonal estimate: alternate +/- of the reference reversed gives
        // ~0 correlation; build an exactly orthogonal one instead.
        let mut orth = r.clone();
        orth.samples = vec![0.0; r.len()];
        orth.samples[0] = r.samples[1];
        orth.samples[1] = -r.samples[0];
        assert_eq!(si_sdr(&r, &orth).unwrap(), -SI_SDR_CLAMP_DB);

        // Scale invariance away from the clamp.
        let noisy_est = Waveform {
            samples: r
                .samples
                .iter()
                .zip(random_wave(4000, 2).samples.iter())
                .map(|(a, b)| a + 0.3 * b)
                .collect(),
            sample_rate: 16000,
        };
        let base = si_sdr(&r, &noisy_est).unwrap();
        for scale in [0.1, 3.0, 42.0] {
            let scaled = Waveform {
                samples: noisy_est.samples.iter().map(|s| s * scale).collect(),
                sample_rate: 16000,
            };
            let v = si_sdr(&r, &scaled).unwrap();
            assert!((v - base).abs() < 1e-9, "scale {scale}: {v} vs {base}");
        }

        let silent = Waveform { samples: vec![0.0; 4000], sample_rate: 16000 };
        assert!(si_sdr(&silent, &r).is_err());
    }

    #[test]
    fn segmental_snr_clamps_silence_and_perfection() {
        let r = random_wave(2048, 3);
        assert_eq!(segmental_snr(&r, &r, 256, (-10.0, 35.0)).unwrap(), 35.0);

        // Reference with an all-silent frame: that frame clamps at -10.
        let mut half_silent = r.clone();
        for s in half_silent.samples[0..256].iter_mut() {
            *s = 0.0;
        }
        let est = random_wave(2048, 4);
        let v = segmental_snr(&half_silent, &est, 256, (-10.0, 35.0)).unwrap();
        assert!(v.is_finite());
        assert!((-10.0..=35.0).contains(&v));

        assert!(segmental_snr(&r, &random_wave(100, 5), 256, (-10.0, 35.0)).is_err());
    }

    fn flat_spec(mag: f64, frames: usize, bins: usize) -> Spectrogram {
        Spectrogram {
            frames: Array2::from_elem((frames, bins), Complex64::new(mag, 0.0)),
            frame_len: (bins - 1) * 2,
            hop: bins - 1,
            window: crate::dsp::WindowKind::Hann,
            sample_rate: 16000,
            signal_len: frames * (bins - 1),
        }
    }

    #[test]
    fn lsd_examples() {
        let a = flat_spec(0.5, 4, 33);
        assert_eq!(lsd(&a, &a, 1e-8).unwrap(), 0.0);
        let b = flat_spec(5.0, 4, 33);
        let v = lsd(&a, &b, 1e-8).unwrap();
        assert!((v - 20.0).abs() < 1e-9, "lsd {v}");
        assert!(lsd(&a, &flat_spec(1.0, 3, 33), 1e-8).is_err());
    }

    #[test]
    fn mask_mse_is_plain_mean_square() {
        let a = ndarray::arr2(&[[0.0, 1.0], [0.5, 0.5]]);
        let b = ndarray::arr2(&[[0.5, 0.5], [0.5, 0.5]]);
        assert!((mask_mse(&a, &b).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn matched_purity_examples() {
        assert_eq!(matched_purity(&[0, 0, 1, 1], &[1, 1, 0, 0], 2, 2), 1.0);
        assert_eq!(matched_purity(&[0, 1, 0, 1], &[0, 0, 1, 1], 2, 2), 0.5);
        let p = matched_purity(&[0, 1, 2, 2], &[0, 0, 1, 1], 3, 2);
        assert!((p - 0.75).abs() < 1e-12);
    }

    fn small_stft() -> StftConfig {
        StftConfig { frame_len: 128, hop: 64, n_mels: 20, n_mfcc: 6, ..StftConfig::default() }
    }

    fn small_dataset(seed: u64) -> Dataset {
        let synth = SynthConfig {
            num_utterances: 3,
            seed,
            segment_dur: 0.2,
            segments_per_utt: 3,
            ..SynthConfig::default()
        };
        let stft = small_stft();
        let (clean, noise) = generate_corpus(&synth, &stft).unwrap();
        let cfg = DatasetConfig { snr_list: vec![0.0], context: 2, gamma: 0.5, seed };
        build_dataset(&clean, &noise, &stft, &cfg).unwrap()
    }

    fn small_model(dataset: &Dataset, m: usize, seed: u64) -> ModeModel {
        let cfg = ModeConfig {
            num_experts: m,
            context: dataset.context,
            num_bins: dataset.stft.num_bins(),
            num_mfcc: dataset.stft.n_mfcc,
            expert_hidden: vec![8],
            gate_hidden: vec![8],
            batchnorm: false,
            feature_hash: dataset.feature_hash,
        };
        ModeModel::init(cfg, &mut rng(seed)).unwrap()
    }

    #[test]
    fn uniform_gate_has_uniform_utilization_and_max_entropy() {
        let ds = small_dataset(31);
        let mut model = small_model(&ds, 3, 32);
        let last = model.gate.layers.last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(0.0);
        let report = gate_analysis(&model, &ds).unwrap();
        for &u in &report.utilization {
            assert!((u - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((report.mean_entropy - 3f64.ln()).abs() < 1e-12);
        let total: f64 = report.utilization.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn one_hot_gate_has_zero_entropy() {
        let ds = small_dataset(33);
        let mut model = small_model(&ds, 3, 34);
        let last = model.gate.layers.last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(-300.0);
        last.bias[1] = 300.0;
        let report = gate_analysis(&model, &ds).unwrap();
        assert!(report.mean_entropy.abs() < 1e-12, "entropy {}", report.mean_entropy);
        assert!((report.utilization[1] - 1.0).abs() < 1e-12);
        assert!(report.argmax_expert.iter().all(|&e| e == 1));
    }

    #[test]
    fn purity_is_one_when_argmax_matches_labels() {
        let ds = small_dataset(35);
        let model = small_model(&ds, 3, 36);
        let report = gate_analysis(&model, &ds).unwrap();
        // Labels present in the synthetic corpus.
        let labels = ds.stack().frame_labels.unwrap();
        let purity = matched_purity(&report.argmax_expert, &labels, 3, 3);
        assert_eq!(report.purity, Some(purity));
        // Using the argmax itself as the labels gives purity 1.
        assert_eq!(matched_purity(&report.argmax_expert, &report.argmax_expert, 3, 3), 1.0);
    }

    #[test]
    fn gate_analysis_refuses_mismatched_hash() {
        let ds = small_dataset(37);
        let mut model = small_model(&ds, 2, 38);
        model.config.feature_hash ^= 1;
        assert!(matches!(
            gate_analysis(&model, &ds),
            Err(Error::ConfigHashMismatch(_))
        ));
    }

    #[test]
    fn identity_mask_reproduces_the_noisy_input_score() {
        let ds = small_dataset(39);
        let report =
            evaluate_enhancement(MaskSource::Identity, &ds, &EnhanceConfig::default()).unwrap();
        for row in &report.rows {
            assert!(
                (row.si_sdr_db - row.si_sdr_noisy_db).abs() < 1e-3,
                "identity mask should score like the input: {} vs {}",
                row.si_sdr_db,
                row.si_sdr_noisy_db
            );
        }
    }

    #[test]
    fn oracle_mask_beats_identity_and_has_zero_mask_error() {
        let ds = small_dataset(41);
        let enhance = EnhanceConfig::default();
        let oracle = evaluate_enhancement(MaskSource::OracleIrm, &ds, &enhance).unwrap();
        let identity = evaluate_enhancement(MaskSource::Identity, &ds, &enhance).unwrap();
        assert!(oracle.overall.mask_mse < 1e-18);
        assert!(
            oracle.overall.si_sdr_db > identity.overall.si_sdr_db,
            "oracle {} should beat identity {}",
            oracle.overall.si_sdr_db,
            identity.overall.si_sdr_db
        );
    }

    #[test]
    fn strategies_are_both_reported_with_a_delta() {
        let ds = small_dataset(43);
        let model = small_model(&ds, 2, 44);
        let (full, top1, delta) =
            compare_strategies(&model, &ds, &EnhanceConfig::default()).unwrap();
        assert_eq!(full.rows.len(), top1.rows.len());
        assert!((full.overall.si_sdr_db - top1.overall.si_sdr_db - delta).abs() < 1e-12);
        // Reports serialize.
        assert!(full.to_table().contains("si_sdr"));
        assert!(full.to_tsv().lines().count() == full.rows.len() + 1);
    }

    #[test]
    fn empty_test_set_is_rejected() {
        let ds = small_dataset(45);
        let empty = Dataset { utterances: vec![], ..ds };
        assert!(matches!(
            evaluate_enhancement(MaskSource::Identity, &empty, &EnhanceConfig::default()),
            Err(Error::Data(_))
        ));
    }
}
