//! Versioned binary container for trained artifacts.
//!
//! Every artifact file starts with the same header (magic bytes, format
//! version, artifact kind) followed by a kind-specific payload built from
//! the little-endian primitives below. The exact layout is documented in
//! `docs/model-format.md`; round-tripping any artifact is bit-exact.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::{Activation, BatchNorm, Layer, Mlp};

pub const MAGIC: &[u8; 8] = b"MODEART\0";
pub const FORMAT_VERSION: u32 = 1;

/// Payload discriminator stored in the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    ModeModel,
    Autoencoder,
    Clustering,
    FeatureSet,
}

impl ArtifactKind {
    fn code(self) -> u32 {
        match self {
            ArtifactKind::ModeModel => 1,
            ArtifactKind::Autoencoder => 2,
            ArtifactKind::Clustering => 3,
            ArtifactKind::FeatureSet => 4,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            1 => ArtifactKind::ModeModel,
            2 => ArtifactKind::Autoencoder,
            3 => ArtifactKind::Clustering,
            4 => ArtifactKind::FeatureSet,
            other => return Err(Error::Format(format!("unknown artifact kind {other}"))),
        })
    }
}

pub fn write_header<W: Write>(w: &mut W, kind: ArtifactKind) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, kind.code())?;
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R, expected: ArtifactKind) -> Result<()> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic bytes: not a model artifact file".into()));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "artifact format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let kind = ArtifactKind::from_code(get_u32(r)?)?;
    if kind != expected {
        return Err(Error::Format(format!(
            "artifact holds a {kind:?}, expected a {expected:?}"
        )));
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("unexpected end of file (truncated artifact)".into())
        } else {
            Error::Io(e)
        }
    })
}

pub fn put_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub fn get_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

pub fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn put_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn get_string<R: Read>(r: &mut R) -> Result<String> {
    let len = get_u64(r)? as usize;
    if len > (1 << 24) {
        return Err(Error::Format(format!("unreasonable string length {len}")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not valid UTF-8".into()))
}

pub fn put_f64_slice<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    put_u64(w, values.len() as u64)?;
    for &v in values {
        put_f64(w, v)?;
    }
    Ok(())
}

pub fn get_f64_vec<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let len = get_u64(r)? as usize;
    if len > (1 << 32) {
        return Err(Error::Format(format!("unreasonable vector length {len}")));
    }
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(get_f64(r)?);
    }
    Ok(out)
}

pub fn put_array1<W: Write>(w: &mut W, a: &Array1<f64>) -> Result<()> {
    put_f64_slice(w, a.as_slice().expect("owned arrays are contiguous"))
}

pub fn get_array1<R: Read>(r: &mut R) -> Result<Array1<f64>> {
    Ok(Array1::from_vec(get_f64_vec(r)?))
}

pub fn put_array2<W: Write>(w: &mut W, a: &Array2<f64>) -> Result<()> {
    put_u64(w, a.nrows() as u64)?;
    put_u64(w, a.ncols() as u64)?;
    for &v in a.iter() {
        put_f64(w, v)?;
    }
    Ok(())
}

pub fn get_array2<R: Read>(r: &mut R) -> Result<Array2<f64>> {
    let rows = get_u64(r)? as usize;
    let cols = get_u64(r)? as usize;
    if rows.saturating_mul(cols) > (1 << 32) {
        return Err(Error::Format(format!("unreasonable array shape {rows}x{cols}")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(get_f64(r)?);
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Format(format!("array shape mismatch: {e}")))
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Linear => 0,
        Activation::Relu => 1,
        Activation::Sigmoid => 2,
        Activation::Softmax => 3,
    }
}

fn activation_from_code(code: u8) -> Result<Activation> {
    Ok(match code {
        0 => Activation::Linear,
        1 => Activation::Relu,
        2 => Activation::Sigmoid,
        3 => Activation::Softmax,
        other => return Err(Error::Format(format!("unknown activation code {other}"))),
    })
}

/// Writes one network block (not a standalone file; no header).
pub fn put_mlp<W: Write>(w: &mut W, mlp: &Mlp<f64>) -> Result<()> {
    put_u32(w, mlp.layers.len() as u32)?;
    for layer in &mlp.layers {
        put_u64(w, layer.input_dim() as u64)?;
        put_u64(w, layer.output_dim() as u64)?;
        put_u8(w, activation_code(layer.activation))?;
        put_u8(w, layer.batchnorm.is_some() as u8)?;
        for &v in layer.weights.iter() {
            put_f64(w, v)?;
        }
        put_array1(w, &layer.bias)?;
        if let Some(bn) = &layer.batchnorm {
            put_array1(w, &bn.gamma)?;
            put_array1(w, &bn.beta)?;
            put_array1(w, &bn.running_mean)?;
            put_array1(w, &bn.running_var)?;
            put_f64(w, bn.momentum)?;
            put_f64(w, bn.epsilon)?;
        }
    }
    Ok(())
}

/// Reads one network block written by [`put_mlp`].
pub fn get_mlp<R: Read>(r: &mut R) -> Result<Mlp<f64>> {
    let n_layers = get_u32(r)? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(Error::Format(format!("unreasonable layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = get_u64(r)? as usize;
        let out_dim = get_u64(r)? as usize;
        if in_dim == 0 || out_dim == 0 || in_dim.saturating_mul(out_dim) > (1 << 32) {
            return Err(Error::Format(format!("unreasonable layer shape {in_dim}x{out_dim}")));
        }
        let activation = activation_from_code(get_u8(r)?)?;
        let has_bn = get_u8(r)? != 0;
        let mut data = Vec::with_capacity(in_dim * out_dim);
        for _ in 0..in_dim * out_dim {
            data.push(get_f64(r)?);
        }
        let weights = Array2::from_shape_vec((in_dim, out_dim), data)
            .map_err(|e| Error::Format(format!("weight shape mismatch: {e}")))?;
        let bias = get_array1(r)?;
        let batchnorm = if has_bn {
            let gamma = get_array1(r)?;
            let beta = get_array1(r)?;
            let running_mean = get_array1(r)?;
            let running_var = get_array1(r)?;
            let momentum = get_f64(r)?;
            let epsilon = get_f64(r)?;
            Some(BatchNorm { gamma, beta, running_mean, running_var, momentum, epsilon })
        } else {
            None
        };
        layers.push(Layer { weights, bias, batchnorm, activation });
    }
    Mlp::from_layers(layers)
}
