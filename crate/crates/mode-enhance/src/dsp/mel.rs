//! Mel filterbank and cepstral coefficient extraction.
//!
//! Pipeline per frame: power spectrum -> triangular mel filterbank ->
//! floored natural log -> orthonormal DCT-II, keeping the first `n_mfcc`
//! coefficients.

use ndarray::Array2;

use super::{Spectrogram, StftConfig};
use crate::error::{Error, Result};

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank spanning [0, sample_rate/2].
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Shape (n_mels, num_bins).
    pub weights: Array2<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, frame_len: usize, sample_rate: u32) -> Self {
        let num_bins = frame_len / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();

        let mut weights = Array2::zeros((n_mels, num_bins));
        for j in 0..n_mels {
            let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
            for k in 0..num_bins {
                let f = k as f64 * sample_rate as f64 / frame_len as f64;
                let w = if f <= lo || f >= hi {
                    0.0
                } else if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                weights[[j, k]] = w;
            }
        }
        Self { weights }
    }

    /// Mel band energies for one power-spectrum frame.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Orthonormal DCT-II of `input`, keeping the first `keep` coefficients.
fn dct2_ortho(input: &[f64], keep: usize) -> Vec<f64> {
    let n = input.len();
    (0..keep)
        .map(|i| {
            let scale = if i == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            let sum: f64 = input
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    x * (std::f64::consts::PI * i as f64 * (2 * j + 1) as f64 / (2 * n) as f64)
                        .cos()
                })
                .sum();
            scale * sum
        })
        .collect()
}

/// Mel-frequency cepstral coefficients for every frame of a spectrogram.
///
/// Returns shape (num_frames, n_mfcc). Mel energies are floored at
/// `magnitude_floor^2` (a power floor) before the log.
pub fn mfcc(s: &Spectrogram, cfg: &StftConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if s.num_bins() != cfg.num_bins() {
        return Err(Error::Dimension(format!(
            "spectrogram has {} bins but config expects {}",
            s.num_bins(),
            cfg.num_bins()
        )));
    }
    let bank = MelFilterbank::new(cfg.n_mels, cfg.frame_len, s.sample_rate);
    let power_floor = cfg.magnitude_floor * cfg.magnitude_floor;
    let mut out = Array2::zeros((s.num_frames(), cfg.n_mfcc));
    for (t, frame) in s.frames.rows().into_iter().enumerate() {
        let power: Vec<f64> = frame.iter().map(|c| c.norm_sqr()).collect();
        let log_mel: Vec<f64> =
            bank.apply(&power).into_iter().map(|e| e.max(power_floor).ln()).collect();
        let coeffs = dct2_ortho(&log_mel, cfg.n_mfcc);
        for (i, c) in coeffs.into_iter().enumerate() {
            out[[t, i]] = c;
        }
    }
    Ok(out)
}
