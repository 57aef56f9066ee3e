//! Time-frequency analysis/synthesis and feature extraction.
//!
//! Provides the STFT/ISTFT pair used by the enhancement pipeline, the
//! log-spectrum and MFCC front ends, and per-utterance mean/variance
//! normalization. All transforms are pure functions; FFT plans are created
//! per call (frame lengths are small and plans are cheap to build).

mod mel;

pub use mel::{mfcc, MelFilterbank};

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Time-domain audio samples with their sample rate.
///
/// Samples are dimensionless amplitudes, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, validating the type invariants (finite samples,
    /// positive sample rate).
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("waveform contains NaN or Inf samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared amplitude over the whole waveform.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

/// Analysis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
}

impl WindowKind {
    /// Window samples (periodic form, suited for overlap-add analysis).
    pub fn samples(&self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
                .collect(),
        }
    }
}

/// STFT analysis configuration shared by the whole feature pipeline.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct StftConfig {
    /// Frame length in samples (even).
    pub frame_len: usize,
    /// Hop between successive frames in samples.
    pub hop: usize,
    pub window: WindowKind,
    /// Magnitudes are floored at this value before taking logs.
    pub magnitude_floor: f64,
    /// Number of triangular mel bands.
    pub n_mels: usize,
    /// Number of cepstral coefficients kept after the DCT.
    pub n_mfcc: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            window: WindowKind::Hann,
            magnitude_floor: 1e-8,
            n_mels: 40,
            n_mfcc: 13,
        }
    }
}

impl StftConfig {
    /// Number of one-sided frequency bins, `frame_len / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Validates the configuration, including the constant-overlap-add
    /// condition for the (window, hop) pair.
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "frame_len must be even and positive, got {}",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::Config(format!(
                "hop must satisfy 0 < hop <= frame_len, got hop={} frame_len={}",
                self.hop, self.frame_len
            )));
        }
        if self.magnitude_floor.is_nan() || self.magnitude_floor <= 0.0 {
            return Err(Error::Config("magnitude_floor must be positive".into()));
        }
        if self.n_mels == 0 || self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(Error::Config(format!(
                "need 0 < n_mfcc <= n_mels, got n_mfcc={} n_mels={}",
                self.n_mfcc, self.n_mels
            )));
        }
        if !cola_holds(&self.window.samples(self.frame_len), self.hop) {
            return Err(Error::Config(format!(
                "window/hop pair is not constant-overlap-add (hop={} of frame_len={})",
                self.hop, self.frame_len
            )));
        }
        Ok(())
    }

    /// Frame count produced by [`stft`] for a signal of `signal_len` samples.
    pub fn num_frames(&self, signal_len: usize) -> usize {
        // Center padding of frame_len/2 on each side; frame t starts at t*hop.
        signal_len / self.hop + 1
    }
}

/// Checks that shifted copies of the window sum to a constant.
fn cola_holds(window: &[f64], hop: usize) -> bool {
    let len = window.len();
    let mut sums = vec![0.0; hop];
    for (n, s) in sums.iter_mut().enumerate() {
        let mut t = 0;
        while n + t * hop < len {
            *s += window[n + t * hop];
            t += 1;
        }
    }
    let first = sums[0];
    if first <= 0.0 {
        return false;
    }
    sums.iter().all(|s| ((s - first) / first).abs() < 1e-8)
}

/// One-sided complex STFT frames plus everything needed to invert them.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// Shape (num_frames, frame_len/2 + 1).
    pub frames: Array2<Complex64>,
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
    /// Length of the analyzed signal; [`istft`] reconstructs exactly this
    /// many samples.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }

    /// Per-bin magnitudes, shape (num_frames, num_bins).
    pub fn magnitudes(&self) -> Array2<f64> {
        self.frames.mapv(|c| c.norm())
    }
}

/// Short-time Fourier transform with center padding.
///
/// The signal is zero-padded by `frame_len / 2` on both sides so that frame
/// `t` is centered on sample `t * hop`; [`istft`] undoes the padding and
/// recovers the signal over its original support.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(Error::Data("cannot take the STFT of an empty waveform".into()));
    }
    let len = w.len();
    let frame_len = cfg.frame_len;
    let pad = frame_len / 2;
    let num_frames = cfg.num_frames(len);
    let num_bins = cfg.num_bins();
    let window = cfg.window.samples(frame_len);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(frame_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];

    let mut frames = Array2::zeros((num_frames, num_bins));
    for t in 0..num_frames {
        let start = t * cfg.hop; // position in the padded timeline
        for (n, b) in buf.iter_mut().enumerate() {
            let padded_idx = start + n;
            let sample = if padded_idx >= pad && padded_idx - pad < len {
                w.samples[padded_idx - pad]
            } else {
                0.0
            };
            *b = Complex64::new(sample * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (f, &b) in frames.row_mut(t).iter_mut().zip(buf.iter().take(num_bins)) {
            *f = b;
        }
    }

    Ok(Spectrogram {
        frames,
        frame_len,
        hop: cfg.hop,
        window: cfg.window,
        sample_rate: w.sample_rate,
        signal_len: len,
    })
}

/// Inverse STFT by windowed overlap-add, normalized by the overlap-added
/// squared window so that `istft(stft(w))` reproduces `w`.
pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    if s.hop == 0 || s.hop > s.frame_len || !s.frame_len.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "invalid spectrogram geometry: hop={} frame_len={}",
            s.hop, s.frame_len
        )));
    }
    let window = s.window.samples(s.frame_len);
    if !cola_holds(&window, s.hop) {
        return Err(Error::Config(
            "spectrogram was produced with a non-constant-overlap-add window/hop pair".into(),
        ));
    }
    let frame_len = s.frame_len;
    let num_bins = s.frames.ncols();
    if num_bins != frame_len / 2 + 1 {
        return Err(Error::Dimension(format!(
            "spectrogram has {} bins, expected {}",
            num_bins,
            frame_len / 2 + 1
        )));
    }
    let pad = frame_len / 2;
    let padded_len = (s.num_frames().saturating_sub(1)) * s.hop + frame_len;

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(frame_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];

    let mut num = vec![0.0; padded_len];
    let mut den = vec![0.0; padded_len];
    for t in 0..s.num_frames() {
        // Rebuild the full spectrum from the one-sided half (hermitian).
        for (b, &f) in buf.iter_mut().zip(s.frames.row(t)) {
            *b = f;
        }
        for k in 1..frame_len / 2 {
            buf[frame_len - k] = s.frames[[t, k]].conj();
        }
        ifft.process(&mut buf);
        let start = t * s.hop;
        for n in 0..frame_len {
            // rustfft's inverse is unnormalized; scale by 1/frame_len.
            let sample = buf[n].re / frame_len as f64;
            num[start + n] += window[n] * sample;
            den[start + n] += window[n] * window[n];
        }
    }

    let mut samples = Vec::with_capacity(s.signal_len);
    for i in 0..s.signal_len {
        let d = den[pad + i];
        if d <= 1e-12 {
            return Err(Error::Config(
                "overlap-add window coverage vanishes inside the signal support".into(),
            ));
        }
        samples.push(num[pad + i] / d);
    }
    Ok(Waveform { samples, sample_rate: s.sample_rate })
}

/// Natural-log magnitude spectra, floored at `magnitude_floor`.
///
/// Returns shape (num_frames, num_bins).
pub fn log_spectrum(s: &Spectrogram, cfg: &StftConfig) -> Array2<f64> {
    s.frames.mapv(|c| c.norm().max(cfg.magnitude_floor).ln())
}

/// Per-utterance, per-coordinate mean/variance normalization.
///
/// Every column of `frames` (a frequency bin or cepstral coefficient) is
/// shifted to zero mean and scaled to unit variance over the utterance.
/// Columns whose variance is below 1e-12 are centered only.
pub fn cmvn(frames: &Array2<f64>) -> Result<Array2<f64>> {
    let n = frames.nrows();
    if n < 2 {
        return Err(Error::Data(format!(
            "normalization needs at least 2 frames, got {n}"
        )));
    }
    let mut out = frames.clone();
    for mut col in out.columns_mut() {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        if var < 1e-12 {
            col.mapv_inplace(|v| v - mean);
        } else {
            let std = var.sqrt();
            col.mapv_inplace(|v| (v - mean) / std);
        }
    }
    Ok(out)
}

/// Stacks `context` frames on each side of every frame, replicating edge
/// frames, turning (F, D) features into (F, (2*context+1)*D).
pub fn stack_context(frames: &Array2<f64>, context: usize) -> Array2<f64> {
    let (num_frames, dim) = frames.dim();
    let width = 2 * context + 1;
    let mut out = Array2::zeros((num_frames, width * dim));
    for t in 0..num_frames {
        for (slot, offset) in (-(context as isize)..=context as isize).enumerate() {
            let src = (t as isize + offset).clamp(0, num_frames as isize - 1) as usize;
            out.row_mut(t)
                .slice_mut(ndarray::s![slot * dim..(slot + 1) * dim])
                .assign(&frames.row(src));
        }
    }
    out
}

/// Deterministic 64-bit FNV-1a hash of the feature-defining configuration.
///
/// Models and datasets both record this hash; mixing artifacts produced
/// under different configurations is refused.
pub fn feature_hash(cfg: &StftConfig, sample_rate: u32, context: usize) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&(cfg.frame_len as u64).to_le_bytes());
    eat(&(cfg.hop as u64).to_le_bytes());
    eat(match cfg.window {
        WindowKind::Hann => b"hann",
    });
    eat(&cfg.magnitude_floor.to_le_bytes());
    eat(&(cfg.n_mels as u64).to_le_bytes());
    eat(&(cfg.n_mfcc as u64).to_le_bytes());
    eat(&(sample_rate as u64).to_le_bytes());
    eat(&(context as u64).to_le_bytes());
    h
}

/// Column means and variances, used by tests and reports.
pub fn column_stats(frames: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = frames.nrows() as f64;
    let mean = frames.sum_axis(ndarray::Axis(0)) / n;
    let mut var = Array1::zeros(frames.ncols());
    for row in frames.rows() {
        for (j, v) in row.iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    (mean, var / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> StftConfig {
        StftConfig { frame_len: 64, hop: 32, ..StftConfig::default() }
    }

    fn random_waveform(rng: &mut ChaCha8Rng, len: usize) -> Waveform {
        let samples = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        Waveform { samples, sample_rate: 16000 }
    }

    /// Independent oracle: DFT of the windowed frame computed directly from
    /// the definition.
    fn dft_oracle(frame: &[f64]) -> Vec<Complex64> {
        let len = frame.len();
        (0..len / 2 + 1)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (n, &x) in frame.iter().enumerate() {
                    let phase = -2.0 * std::f64::consts::PI * (k * n) as f64 / len as f64;
                    acc += Complex64::new(phase.cos(), phase.sin()) * x;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn stft_matches_direct_dft_and_concentrates_sinusoid_energy() {
        let cfg = small_cfg();
        let fs = 16000.0;
        let k0 = 8usize;
        let freq = k0 as f64 * fs / cfg.frame_len as f64;
        let len = 4 * cfg.frame_len;
        let samples: Vec<f64> =
            (0..len).map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / fs).sin()).collect();
        let w = Waveform { samples: samples.clone(), sample_rate: 16000 };
        let spec = stft(&w, &cfg).unwrap();

        // Interior frame, fully inside the signal.
        let t = 4;
        let pad = cfg.frame_len / 2;
        let start = t * cfg.hop;
        let window = cfg.window.samples(cfg.frame_len);
        let frame: Vec<f64> = (0..cfg.frame_len)
            .map(|n| samples[start + n - pad] * window[n])
            .collect();
        let oracle = dft_oracle(&frame);
        for (k, o) in oracle.iter().enumerate() {
            let d = (spec.frames[[t, k]] - o).norm();
            assert!(d < 1e-9, "bin {k}: fft={} oracle={o}", spec.frames[[t, k]]);
        }

        // A bin-centered sinusoid through a Hann window occupies exactly the
        // three-bin main lobe; its center bin dominates.
        let total: f64 = (0..cfg.num_bins()).map(|k| spec.frames[[t, k]].norm_sqr()).sum();
        let lobe: f64 = (k0 - 1..=k0 + 1).map(|k| spec.frames[[t, k]].norm_sqr()).sum();
        assert!(lobe / total >= 0.99, "main-lobe fraction {}", lobe / total);
        let argmax = (0..cfg.num_bins())
            .max_by(|&a, &b| {
                spec.frames[[t, a]].norm_sqr().total_cmp(&spec.frames[[t, b]].norm_sqr())
            })
            .unwrap();
        assert_eq!(argmax, k0);
    }

    #[test]
    fn stft_of_zero_waveform_is_zero() {
        let cfg = small_cfg();
        let w = Waveform { samples: vec![0.0; 500], sample_rate: 16000 };
        let spec = stft(&w, &cfg).unwrap();
        assert!(spec.frames.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn stft_of_centered_impulse_is_flat_at_window_peak() {
        let cfg = small_cfg();
        // Frame t is centered on sample t*hop; put the impulse there.
        let t = 3;
        let mut samples = vec![0.0; 400];
        samples[t * cfg.hop] = 1.0;
        let w = Waveform { samples, sample_rate: 16000 };
        let spec = stft(&w, &cfg).unwrap();
        // Shifted-impulse DFT has |X[k]| = w[center] for every k.
        let peak = cfg.window.samples(cfg.frame_len)[cfg.frame_len / 2];
        for k in 0..cfg.num_bins() {
            let mag = spec.frames[[t, k]].norm();
            assert!((mag - peak).abs() < 1e-12, "bin {k}: {mag} vs {peak}");
        }
    }

    #[test]
    fn stft_rejects_empty_waveform_and_bad_config() {
        let cfg = small_cfg();
        let empty = Waveform { samples: vec![], sample_rate: 16000 };
        assert!(matches!(stft(&empty, &cfg), Err(Error::Data(_))));

        let bad = StftConfig { hop: 0, ..small_cfg() };
        let w = Waveform { samples: vec![0.0; 100], sample_rate: 16000 };
        assert!(matches!(stft(&w, &bad), Err(Error::Config(_))));

        // hop=48 of 64 breaks constant overlap-add for a Hann window.
        let non_cola = StftConfig { hop: 48, ..small_cfg() };
        assert!(matches!(stft(&w, &non_cola), Err(Error::Config(_))));
    }

    #[test]
    fn istft_round_trip_recovers_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(frame_len, hop) in &[(64usize, 32usize), (64, 16), (128, 64), (512, 256)] {
            let cfg = StftConfig { frame_len, hop, ..StftConfig::default() };
            for &len in &[50usize, 333, 1000, 4097] {
                let w = random_waveform(&mut rng, len);
                let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
                assert_eq!(back.len(), w.len());
                let peak = w.samples.iter().fold(0.0f64, |a, &s| a.max(s.abs()));
                let max_err = w
                    .samples
                    .iter()
                    .zip(&back.samples)
                    .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                assert!(
                    max_err < 1e-6 * peak.max(1e-12),
                    "round trip err {max_err} (len={len}, L={frame_len}, hop={hop})"
                );
            }
        }
    }

    #[test]
    fn istft_is_linear_and_maps_zero_to_zero() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_waveform(&mut rng, 777);
        let mut spec = stft(&w, &cfg).unwrap();
        spec.frames.mapv_inplace(|c| c * 2.0);
        let doubled = istft(&spec).unwrap();
        for (x, y) in w.samples.iter().zip(&doubled.samples) {
            assert!((2.0 * x - y).abs() < 1e-6);
        }

        spec.frames.fill(Complex64::new(0.0, 0.0));
        let zero = istft(&spec).unwrap();
        assert!(zero.samples.iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn parseval_energy_tracks_stationary_signal() {
        let cfg = StftConfig { frame_len: 256, hop: 64, ..StftConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_waveform(&mut rng, 64000);
        let spec = stft(&w, &cfg).unwrap();
        // Two-sided spectral energy per frame = frame_len * windowed energy.
        let mut spectral = 0.0;
        for t in 0..spec.num_frames() {
            for k in 0..spec.num_bins() {
                let e = spec.frames[[t, k]].norm_sqr();
                let two_sided = if k == 0 || k == cfg.frame_len / 2 { 1.0 } else { 2.0 };
                spectral += two_sided * e;
            }
        }
        spectral /= cfg.frame_len as f64;
        let window = cfg.window.samples(cfg.frame_len);
        let coverage: f64 = window.iter().map(|v| v * v).sum::<f64>() / cfg.hop as f64;
        let signal_energy: f64 = w.samples.iter().map(|s| s * s).sum();
        let expected = signal_energy * coverage;
        assert!(
            (spectral - expected).abs() / expected < 0.01,
            "spectral {spectral} vs expected {expected}"
        );
    }

    #[test]
    fn log_spectrum_applies_floor_and_log() {
        let cfg = small_cfg();
        let mut spec = stft(&Waveform { samples: vec![0.1; 300], sample_rate: 16000 }, &cfg).unwrap();

        spec.frames.fill(Complex64::new(std::f64::consts::E, 0.0));
        let ls = log_spectrum(&spec, &cfg);
        assert!(ls.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        spec.frames.fill(Complex64::new(1.0, 0.0));
        let ls = log_spectrum(&spec, &cfg);
        assert!(ls.iter().all(|&v| v.abs() < 1e-12));

        spec.frames.fill(Complex64::new(0.0, 0.0));
        let ls = log_spectrum(&spec, &cfg);
        let floor = cfg.magnitude_floor.ln();
        assert!(ls.iter().all(|&v| (v - floor).abs() < 1e-12));
    }

    #[test]
    fn log_spectrum_is_monotone_in_magnitude() {
        let cfg = small_cfg();
        let mk = |mag: f64| {
            let mut spec =
                stft(&Waveform { samples: vec![0.1; 300], sample_rate: 16000 }, &cfg).unwrap();
            spec.frames.fill(Complex64::new(mag, 0.0));
            log_spectrum(&spec, &cfg)[[0, 0]]
        };
        let floor = cfg.magnitude_floor.ln();
        let mut prev = mk(0.0);
        assert!((prev - floor).abs() < 1e-12);
        for mag in [1e-9, 1e-6, 1e-3, 0.1, 1.0, 10.0] {
            let cur = mk(mag);
            assert!(cur >= prev && cur >= floor);
            prev = cur;
        }
    }

    #[test]
    fn cmvn_two_frame_example() {
        let frames = ndarray::arr2(&[[0.0], [2.0]]);
        let out = cmvn(&frames).unwrap();
        assert!((out[[0, 0]] + 1.0).abs() < 1e-12);
        assert!((out[[1, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cmvn_centers_constant_columns_and_rejects_single_frame() {
        let frames = ndarray::arr2(&[[5.0, 1.0], [5.0, 3.0], [5.0, 5.0]]);
        let out = cmvn(&frames).unwrap();
        for t in 0..3 {
            assert_eq!(out[[t, 0]], 0.0);
        }
        assert!(matches!(cmvn(&ndarray::arr2(&[[1.0, 2.0]])), Err(Error::Data(_))));
    }

    #[test]
    fn cmvn_output_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames = Array2::from_shape_fn((40, 6), |_| rng.random_range(-3.0..9.0));
        let out = cmvn(&frames).unwrap();
        let (mean, var) = column_stats(&out);
        for j in 0..6 {
            assert!(mean[j].abs() < 1e-9, "col {j} mean {}", mean[j]);
            assert!((var[j] - 1.0).abs() < 1e-9, "col {j} var {}", var[j]);
        }
    }

    #[test]
    fn stack_context_replicates_edges() {
        let frames = ndarray::arr2(&[[1.0], [2.0], [3.0]]);
        let stacked = stack_context(&frames, 1);
        assert_eq!(stacked.ncols(), 3);
        assert_eq!(stacked.row(0).to_vec(), vec![1.0, 1.0, 2.0]);
        assert_eq!(stacked.row(1).to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(stacked.row(2).to_vec(), vec![2.0, 3.0, 3.0]);
    }

    #[test]
    fn feature_hash_changes_with_config() {
        let cfg = StftConfig::default();
        let h = feature_hash(&cfg, 16000, 4);
        assert_eq!(h, feature_hash(&cfg, 16000, 4));
        let other = StftConfig { hop: 128, ..cfg.clone() };
        assert_ne!(h, feature_hash(&other, 16000, 4));
        assert_ne!(h, feature_hash(&cfg, 8000, 4));
        assert_ne!(h, feature_hash(&cfg, 16000, 3));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn round_trip_is_exact_for_any_signal(
                samples in proptest::collection::vec(-1.0f64..1.0, 40..2500),
                hop_div in 1usize..3,
            ) {
                let cfg = StftConfig {
                    frame_len: 64,
                    hop: 32 / hop_div,
                    ..StftConfig::default()
                };
                let w = Waveform { samples, sample_rate: 16000 };
                let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
                let peak = w.samples.iter().fold(0.0f64, |a, &s| a.max(s.abs()));
                for (x, y) in w.samples.iter().zip(&back.samples) {
                    prop_assert!((x - y).abs() < 1e-6 * peak.max(1e-9));
                }
            }

            #[test]
            fn cmvn_always_normalizes_non_degenerate_columns(
                rows in proptest::collection::vec(
                    proptest::collection::vec(-100.0f64..100.0, 5),
                    3..40,
                ),
            ) {
                let n = rows.len();
                let frames = Array2::from_shape_fn((n, 5), |(i, j)| rows[i][j]);
                let out = cmvn(&frames).unwrap();
                let (mean, var) = column_stats(&out);
                let (_, var_in) = column_stats(&frames);
                for j in 0..5 {
                    prop_assert!(mean[j].abs() < 1e-9);
                    if var_in[j] >= 1e-12 {
                        prop_assert!((var[j] - 1.0).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
