//! Ideal-ratio-mask targets and mask-based spectral enhancement.
//!
//! Masks are per-bin gains in [0, 1]. Enhancement either multiplies the
//! noisy spectrum by the mask directly (hard rule) or applies the bounded
//! exponential attenuation `exp(-(1 - rho) * beta)` (soft rule), which
//! limits the attenuation of any bin to `exp(-beta)` and thereby curbs
//! musical-noise artifacts.

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

/// A sequence of per-bin masks, shape (num_frames, num_bins), values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub values: Array2<f64>,
}

impl Mask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Data("mask values must lie in [0, 1]".into()));
        }
        Ok(Self { values })
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.values.row(t)
    }
}

/// Enhancement parameters: soft-attenuation strength and mask exponent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EnhanceConfig {
    /// Soft-attenuation strength; the per-bin gain is bounded below by
    /// `exp(-beta)`.
    pub beta: f64,
    /// Mask exponent (0, 1].
    pub gamma: f64,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        // ln 10 bounds the attenuation at exactly 20 dB.
        Self { beta: std::f64::consts::LN_10, gamma: 0.5 }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 || self.gamma > 1.0 {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Ideal ratio mask for one frame: `(|s|^2 / (|s|^2 + |n|^2))^gamma`.
///
/// Bins where both spectra vanish are treated as noise-dominant silence and
/// mapped to 0.
pub fn compute_irm_frame(
    clean: ArrayView1<'_, Complex64>,
    noise: ArrayView1<'_, Complex64>,
    gamma: f64,
) -> Result<Array1<f64>> {
    if clean.len() != noise.len() {
        return Err(Error::Dimension(format!(
            "clean frame has {} bins, noise frame has {}",
            clean.len(),
            noise.len()
        )));
    }
    Ok(Array1::from_iter(clean.iter().zip(noise.iter()).map(|(s, n)| {
        let sp = s.norm_sqr();
        let np = n.norm_sqr();
        if sp == 0.0 {
            0.0
        } else {
            (sp / (sp + np)).powf(gamma)
        }
    })))
}

/// Ideal ratio mask for every frame of a clean/noise spectrogram pair.
pub fn compute_irm(clean: &Spectrogram, noise: &Spectrogram, gamma: f64) -> Result<Mask> {
    if clean.frames.dim() != noise.frames.dim() {
        return Err(Error::Dimension(format!(
            "clean spectrogram is {:?}, noise spectrogram is {:?}",
            clean.frames.dim(),
            noise.frames.dim()
        )));
    }
    let mut values = Array2::zeros(clean.frames.dim());
    for t in 0..clean.num_frames() {
        let row = compute_irm_frame(clean.frames.row(t), noise.frames.row(t), gamma)?;
        values.row_mut(t).assign(&row);
    }
    Mask::new(values)
}

fn check_shapes(noisy: &Spectrogram, mask: &Mask) -> Result<()> {
    if noisy.frames.dim() != mask.values.dim() {
        return Err(Error::Dimension(format!(
            "spectrogram is {:?} but mask is {:?}",
            noisy.frames.dim(),
            mask.values.dim()
        )));
    }
    Ok(())
}

/// Hard masking: scale each complex bin by its mask value (phase preserved).
pub fn hard_enhance(noisy: &Spectrogram, mask: &Mask) -> Result<Spectrogram> {
    check_shapes(noisy, mask)?;
    let mut out = noisy.clone();
    out.frames.zip_mut_with(&mask.values, |c, &rho| *c *= rho);
    Ok(out)
}

/// Soft attenuation: scale each complex bin by `exp(-(1 - rho) * beta)`.
///
/// The gain is 1 where the mask is 1 and never drops below `exp(-beta)`.
pub fn soft_enhance(noisy: &Spectrogram, mask: &Mask, beta: f64) -> Result<Spectrogram> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    check_shapes(noisy, mask)?;
    let mut out = noisy.clone();
    out.frames.zip_mut_with(&mask.values, |c, &rho| *c *= (-(1.0 - rho) * beta).exp());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig, Waveform};
    use ndarray::arr1;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn noisy_spec() -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples = (0..1200).map(|_| rng.random_range(-0.5..0.5)).collect();
        let cfg = StftConfig { frame_len: 64, hop: 32, ..StftConfig::default() };
        stft(&Waveform { samples, sample_rate: 16000 }, &cfg).unwrap()
    }

    fn complex_frame(values: &[(f64, f64)]) -> Array1<Complex64> {
        Array1::from_iter(values.iter().map(|&(re, im)| Complex64::new(re, im)))
    }

    #[test]
    fn irm_equal_power_is_sqrt_half() {
        let clean = complex_frame(&[(1.0, 0.0), (0.0, 2.0), (-3.0, 0.0)]);
        let noise = complex_frame(&[(0.0, 1.0), (2.0, 0.0), (3.0, 0.0)]);
        let irm = compute_irm_frame(clean.view(), noise.view(), 0.5).unwrap();
        for &v in irm.iter() {
            assert!((v - 0.5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn irm_degenerate_frames() {
        let clean = complex_frame(&[(1.0, 0.0), (0.5, 0.5)]);
        let zero = complex_frame(&[(0.0, 0.0), (0.0, 0.0)]);
        let ones = compute_irm_frame(clean.view(), zero.view(), 0.5).unwrap();
        assert!(ones.iter().all(|&v| v == 1.0));
        let zeros = compute_irm_frame(zero.view(), clean.view(), 0.5).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
        // Both zero: treated as silence, mask 0.
        let silent = compute_irm_frame(zero.view(), zero.view(), 0.5).unwrap();
        assert!(silent.iter().all(|&v| v == 0.0));

        let short = complex_frame(&[(1.0, 0.0)]);
        assert!(compute_irm_frame(clean.view(), short.view(), 0.5).is_err());
    }

    #[test]
    fn irm_is_bounded_monotone_and_matches_snr_form() {
        let gamma = 0.5;
        let noise_mag = 0.7;
        let mut prev = -1.0;
        for i in 0..50 {
            let s_mag = i as f64 * 0.1;
            let clean = complex_frame(&[(s_mag, 0.0)]);
            let noise = complex_frame(&[(0.0, noise_mag)]);
            let v = compute_irm_frame(clean.view(), noise.view(), gamma).unwrap()[0];
            assert!((0.0..=1.0).contains(&v));
            assert!(v >= prev, "not monotone at {s_mag}");
            let xi = (s_mag * s_mag) / (noise_mag * noise_mag);
            let expected = (xi / (1.0 + xi)).sqrt();
            assert!((v - expected).abs() < 1e-12);
            prev = v;
        }
    }

    #[test]
    fn hard_enhance_identity_zero_and_half() {
        let spec = noisy_spec();
        let dims = spec.frames.dim();

        let ones = Mask::new(Array2::ones(dims)).unwrap();
        let out = hard_enhance(&spec, &ones).unwrap();
        assert_eq!(out.frames, spec.frames);

        let zeros = Mask::new(Array2::zeros(dims)).unwrap();
        let out = hard_enhance(&spec, &zeros).unwrap();
        assert!(out.frames.iter().all(|c| c.norm() == 0.0));

        let half = Mask::new(Array2::from_elem(dims, 0.5)).unwrap();
        let out = hard_enhance(&spec, &half).unwrap();
        for (a, b) in spec.frames.iter().zip(out.frames.iter()) {
            assert!((b.norm() - 0.5 * a.norm()).abs() < 1e-12);
            if a.norm() > 0.0 {
                // Phase preserved: the ratio is a nonnegative real.
                let ratio = b / a;
                assert!(ratio.im.abs() < 1e-12 && ratio.re >= 0.0);
            }
        }
    }

    #[test]
    fn soft_enhance_gains() {
        let spec = noisy_spec();
        let dims = spec.frames.dim();
        let beta = std::f64::consts::LN_10;

        // Mask 1 leaves the spectrum bit-identical.
        let ones = Mask::new(Array2::ones(dims)).unwrap();
        let out = soft_enhance(&spec, &ones, beta).unwrap();
        assert_eq!(out.frames, spec.frames);

        // Mask 0 attenuates by exactly 20 dB.
        let zeros = Mask::new(Array2::zeros(dims)).unwrap();
        let out = soft_enhance(&spec, &zeros, beta).unwrap();
        for (a, b) in spec.frames.iter().zip(out.frames.iter()) {
            if a.norm() > 0.0 {
                let gain_db = 20.0 * (b.norm() / a.norm()).log10();
                assert!((gain_db + 20.0).abs() < 1e-9, "gain {gain_db} dB");
            }
        }

        // Mask 0.5 gives gain 10^(-1/2).
        let half = Mask::new(Array2::from_elem(dims, 0.5)).unwrap();
        let out = soft_enhance(&spec, &half, beta).unwrap();
        let expected = 10f64.powf(-0.5);
        for (a, b) in spec.frames.iter().zip(out.frames.iter()) {
            assert!((b.norm() - expected * a.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_enhance_gain_is_bounded_and_phase_preserving() {
        let spec = noisy_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let beta = 1.7;
        let mask =
            Mask::new(Array2::from_shape_fn(spec.frames.dim(), |_| rng.random_range(0.0..=1.0)))
                .unwrap();
        let out = soft_enhance(&spec, &mask, beta).unwrap();
        let floor = (-beta).exp();
        for (a, b) in spec.frames.iter().zip(out.frames.iter()) {
            if a.norm() > 0.0 {
                let gain = b.norm() / a.norm();
                assert!(gain >= floor - 1e-12 && gain <= 1.0 + 1e-12, "gain {gain}");
                let ratio = b / a;
                assert!(ratio.im.abs() < 1e-9 * ratio.re.abs().max(1e-12));
                assert!(ratio.re >= 0.0);
            }
        }
    }

    #[test]
    fn enhancement_rejects_shape_mismatch_and_bad_mask() {
        let spec = noisy_spec();
        let wrong = Mask::new(Array2::ones((3, 3))).unwrap();
        assert!(hard_enhance(&spec, &wrong).is_err());
        assert!(soft_enhance(&spec, &wrong, 1.0).is_err());
        assert!(Mask::new(ndarray::arr2(&[[1.2]])).is_err());
        assert!(Mask::new(ndarray::arr2(&[[-0.1]])).is_err());
        let _ = arr1(&[0.0]);
    }

    #[test]
    fn enhance_config_validation() {
        assert!(EnhanceConfig::default().validate().is_ok());
        assert!(EnhanceConfig { beta: 0.0, gamma: 0.5 }.validate().is_err());
        assert!(EnhanceConfig { beta: 1.0, gamma: 0.0 }.validate().is_err());
        assert!(EnhanceConfig { beta: 1.0, gamma: 1.5 }.validate().is_err());
    }
}
