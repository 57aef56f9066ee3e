//! WAV reader/writer for mono 16-bit PCM.
//!
//! Samples map to [-1, 1) as `s / 32768`; the writer rounds `x * 32768` and
//! clamps, so integer sample values survive a read/write round trip exactly.

use std::io::Write;
use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

/// Reads a mono 16-bit PCM WAV file. Any other encoding is rejected with a
/// descriptive error; the sample rate is returned as stored (callers enforce
/// their expected rate).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_wav(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(Error::Format("chunk extends past end of file".into()));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format("fmt chunk too small".into()));
                }
                let body = &bytes[body_start..body_end];
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {}
        }
        // Chunks are padded to even length.
        pos = body_end + (size & 1);
    }
    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(Error::Format(format!("unsupported audio format {format}, need PCM (1)")));
    }
    if channels != 1 {
        return Err(Error::Format(format!("{channels} channels, only mono is supported")));
    }
    if bits != 16 {
        return Err(Error::Format(format!("{bits}-bit samples, only 16-bit PCM is supported")));
    }
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::Format("data chunk has an odd byte count".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / SCALE)
        .collect();
    Waveform::new(samples, sample_rate)
}

/// Writes a mono 16-bit PCM WAV file. Samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, waveform: &Waveform) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(&encode_wav(waveform))?;
    Ok(())
}

pub fn encode_wav(waveform: &Waveform) -> Vec<u8> {
    let num_samples = waveform.len() as u32;
    let data_len = num_samples * 2;
    let riff_len = 4 + (8 + 16) + (8 + data_len);
    let mut out = Vec::with_capacity(8 + riff_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_len.to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&waveform.sample_rate.to_le_bytes());
    out.extend_from_slice(&(waveform.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &waveform.samples {
        let q = (s * SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Convenience for callers that must insist on a specific rate.
pub fn read_wav_expecting(path: &Path, expected_rate: u32) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate != expected_rate {
        return Err(Error::Data(format!(
            "{} is sampled at {} Hz, expected {expected_rate} Hz (resampling is not supported)",
            path.display(),
            w.sample_rate
        )));
    }
    Ok(w)
}
