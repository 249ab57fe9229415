//! Raw complex baseband files: interleaved `f32` I/Q, little-endian.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn encode_f32le(samples: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_f32le(bytes: &[u8]) -> Result<Vec<Complex64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Framing(format!("{} bytes is not a whole number of I/Q pairs", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect())
}

pub fn write_samples(samples: &[Complex64], path: &Path) -> Result<()> {
    std::fs::write(path, encode_f32le(samples)).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Vec<Complex64>> {
    decode_f32le(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
