//! Built-in synthetic corpus for desk-scale experiments.
//!
//! Clean utterances alternate three frame classes with very different
//! spectra: voiced segments (harmonic stacks with a random fundamental),
//! unvoiced segments (high-tilted noise bursts) and near-silence. Per-frame
//! class labels are emitted alongside each utterance so gate specialization
//! can be scored against the planted classes. The noise set holds white and
//! amplitude-modulated broadband noise.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{StftConfig, Waveform};
use crate::error::Result;

use super::CorpusEntry;

pub const CLASS_VOICED: usize = 0;
pub const CLASS_UNVOICED: usize = 1;
pub const CLASS_SILENCE: usize = 2;
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_utterances: usize,
    pub seed: u64,
    pub sample_rate: u32,
    /// Segment duration in seconds.
    pub segment_dur: f64,
    /// Segments per utterance; at least 3 so every class appears.
    pub segments_per_utt: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_utterances: 24,
            seed: 0,
            sample_rate: 16000,
            segment_dur: 0.4,
            segments_per_utt: 6,
        }
    }
}

/// One labeled span of a clean utterance, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

fn fade(samples: &mut [f64], fade_len: usize) {
    let n = samples.len();
    let fade_len = fade_len.min(n / 2);
    for i in 0..fade_len {
        let g = i as f64 / fade_len as f64;
        samples[i] *= g;
        samples[n - 1 - i] *= g;
    }
}

fn scale_to_rms(samples: &mut [f64], rms: f64) {
    let current = (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt();
    if current > 0.0 {
        let g = rms / current;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
}

fn voiced_segment(len: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f0 = rng.random_range(100.0..300.0);
    let phase0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut out = vec![0.0; len];
    let mut h = 1usize;
    while h as f64 * f0 < 3800.0 {
        let amp = 1.0 / h as f64;
        let omega = std::f64::consts::TAU * h as f64 * f0 / sample_rate;
        for (n, s) in out.iter_mut().enumerate() {
            *s += amp * (omega * n as f64 + phase0 * h as f64).sin();
        }
        h += 1;
    }
    scale_to_rms(&mut out, 0.15);
    fade(&mut out, (0.01 * sample_rate) as usize);
    out
}

fn unvoiced_segment(len: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // White noise pushed to high frequencies by double differencing
    // (+12 dB/octave tilt).
    let mut out: Vec<f64> = (0..len + 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    for _ in 0..2 {
        for i in (1..out.len()).rev() {
            out[i] -= out[i - 1];
        }
    }
    out.drain(0..2);
    scale_to_rms(&mut out, 0.08);
    fade(&mut out, (0.01 * sample_rate) as usize);
    out
}

fn silence_segment(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Near-silence: -80 dBFS noise keeps per-utterance statistics finite.
    (0..len).map(|_| rng.random_range(-1.0..1.0) * 1e-4).collect()
}

/// Generates one clean utterance and its labeled segments. The first three
/// segments are a shuffle of all classes, so every class always appears.
pub fn synth_clean_utterance(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Waveform, Vec<Segment>) {
    let seg_len = (cfg.segment_dur * cfg.sample_rate as f64) as usize;
    let num_segments = cfg.segments_per_utt.max(NUM_CLASSES);
    let mut classes: Vec<usize> = (0..NUM_CLASSES).collect();
    classes.shuffle(rng);
    while classes.len() < num_segments {
        classes.push(rng.random_range(0..NUM_CLASSES));
    }

    let mut samples = Vec::with_capacity(seg_len * num_segments);
    let mut segments = Vec::with_capacity(num_segments);
    for &class in &classes {
        let start = samples.len();
        let body = match class {
            CLASS_VOICED => voiced_segment(seg_len, cfg.sample_rate as f64, rng),
            CLASS_UNVOICED => unvoiced_segment(seg_len, cfg.sample_rate as f64, rng),
            _ => silence_segment(seg_len, rng),
        };
        samples.extend(body);
        segments.push(Segment { class, start, end: samples.len() });
    }
    (Waveform { samples, sample_rate: cfg.sample_rate }, segments)
}

/// Per-frame class labels aligned with [`crate::dsp::stft`] framing: frame
/// `t` is centered on sample `t * hop`.
pub fn frame_labels(segments: &[Segment], signal_len: usize, stft: &StftConfig) -> Vec<usize> {
    let num_frames = stft.num_frames(signal_len);
    (0..num_frames)
        .map(|t| {
            let center = (t * stft.hop).min(signal_len.saturating_sub(1));
            segments
                .iter()
                .find(|s| center >= s.start && center < s.end)
                .map(|s| s.class)
                .unwrap_or(CLASS_SILENCE)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    /// White noise with a slow sinusoidal amplitude envelope.
    AmplitudeModulated,
}

pub fn synth_noise(kind: NoiseKind, dur_secs: f64, sample_rate: u32, rng: &mut ChaCha8Rng) -> Waveform {
    let len = (dur_secs * sample_rate as f64) as usize;
    let mut samples: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    if kind == NoiseKind::AmplitudeModulated {
        let fm = rng.random_range(2.0..8.0);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for (n, s) in samples.iter_mut().enumerate() {
            let t = n as f64 / sample_rate as f64;
            *s *= 1.0 + 0.8 * (std::f64::consts::TAU * fm * t + phase).sin();
        }
    }
    scale_to_rms(&mut samples, 0.1);
    Waveform { samples, sample_rate }
}

/// In-memory synthetic corpus: labeled clean utterances plus a noise set
/// with both stationary and modulated entries.
pub fn generate_corpus(
    cfg: &SynthConfig,
    stft: &StftConfig,
) -> Result<(Vec<CorpusEntry>, Vec<CorpusEntry>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut clean = Vec::with_capacity(cfg.num_utterances);
    for i in 0..cfg.num_utterances {
        let (waveform, segments) = synth_clean_utterance(cfg, &mut rng);
        let labels = frame_labels(&segments, waveform.len(), stft);
        clean.push(CorpusEntry {
            id: format!("synth-{i:04}"),
            waveform,
            frame_labels: Some(labels),
        });
    }
    let mut noise = Vec::new();
    for i in 0..3 {
        noise.push(CorpusEntry {
            id: format!("white-{i}"),
            waveform: synth_noise(NoiseKind::White, 4.0, cfg.sample_rate, &mut rng),
            frame_labels: None,
        });
        noise.push(CorpusEntry {
            id: format!("am-{i}"),
            waveform: synth_noise(NoiseKind::AmplitudeModulated, 4.0, cfg.sample_rate, &mut rng),
            frame_labels: None,
        });
    }
    Ok((clean, noise))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig { num_utterances: 3, seed: 5, ..SynthConfig::default() }
    }

    fn stft_cfg() -> StftConfig {
        StftConfig { frame_len: 256, hop: 128, ..StftConfig::default() }
    }

    #[test]
    fn every_utterance_covers_all_classes() {
        let (clean, _) = generate_corpus(&cfg(), &stft_cfg()).unwrap();
        for entry in &clean {
            let labels = entry.frame_labels.as_ref().unwrap();
            for class in 0..NUM_CLASSES {
                assert!(labels.contains(&class), "{} missing class {class}", entry.id);
            }
            assert_eq!(labels.len(), stft_cfg().num_frames(entry.waveform.len()));
        }
    }

    /// Band energy measured directly from the signal with a naive DFT,
    /// independent of the crate's STFT.
    fn band_energy(samples: &[f64], sample_rate: f64, lo_hz: f64, hi_hz: f64) -> f64 {
        let n = samples.len();
        let mut energy = 0.0;
        for k in 0..n / 2 {
            let f = k as f64 * sample_rate / n as f64;
            if f < lo_hz || f > hi_hz {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in samples.iter().enumerate() {
                let phase = std::f64::consts::TAU * (k * t) as f64 / n as f64;
                re += x * phase.cos();
                im -= x * phase.sin();
            }
            energy += re * re + im * im;
        }
        energy
    }

    #[test]
    fn voiced_segments_concentrate_energy_below_one_khz() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = cfg();
        for _ in 0..3 {
            let (w, segments) = synth_clean_utterance(&c, &mut rng);
            let voiced = segments.iter().find(|s| s.class == CLASS_VOICED).unwrap();
            // 1024-sample probe from the middle of the segment.
            let mid = (voiced.start + voiced.end) / 2;
            let probe = &w.samples[mid..(mid + 1024).min(voiced.end)];
            let low = band_energy(probe, 16000.0, 0.0, 1000.0);
            let high = band_energy(probe, 16000.0, 4000.0, 8000.0);
            assert!(low > high, "low {low} should dominate high {high}");
        }
    }

    #[test]
    fn unvoiced_segments_tilt_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = cfg();
        let (w, segments) = synth_clean_utterance(&c, &mut rng);
        let seg = segments.iter().find(|s| s.class == CLASS_UNVOICED).unwrap();
        let mid = (seg.start + seg.end) / 2;
        let probe = &w.samples[mid..mid + 1024];
        let low = band_energy(probe, 16000.0, 0.0, 1000.0);
        let high = band_energy(probe, 16000.0, 4000.0, 8000.0);
        assert!(high > 10.0 * low, "high {high} vs low {low}");
    }

    #[test]
    fn generation_is_bit_deterministic_under_a_seed() {
        let (a_clean, a_noise) = generate_corpus(&cfg(), &stft_cfg()).unwrap();
        let (b_clean, b_noise) = generate_corpus(&cfg(), &stft_cfg()).unwrap();
        for (a, b) in a_clean.iter().zip(&b_clean) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.waveform.samples, b.waveform.samples);
            assert_eq!(a.frame_labels, b.frame_labels);
        }
        for (a, b) in a_noise.iter().zip(&b_noise) {
            assert_eq!(a.waveform.samples, b.waveform.samples);
        }
        // Different seed, different corpus.
        let other = SynthConfig { seed: 6, ..cfg() };
        let (c_clean, _) = generate_corpus(&other, &stft_cfg()).unwrap();
        assert_ne!(a_clean[0].waveform.samples, c_clean[0].waveform.samples);
    }

    #[test]
    fn noise_kinds_differ_in_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let white = synth_noise(NoiseKind::White, 2.0, 16000, &mut rng);
        let am = synth_noise(NoiseKind::AmplitudeModulated, 2.0, 16000, &mut rng);
        // Frame RMS variance is much larger for the modulated noise.
        let frame_rms = |w: &Waveform| -> Vec<f64> {
            w.samples
                .chunks(1600)
                .map(|c| (c.iter().map(|s| s * s).sum::<f64>() / c.len() as f64).sqrt())
                .collect()
        };
        let spread = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
        };
        assert!(spread(&frame_rms(&am)) > 10.0 * spread(&frame_rms(&white)));
    }
}
