//! Welch power spectral density estimation.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Minimum number of averaged segments.
pub const MIN_SEGMENTS: usize = 8;

/// Two-sided PSD estimate, frequencies ascending from `-f_s/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub freqs_hz: Vec<f64>,
    /// Power per Hz (sample power taken as mW).
    pub density: Vec<f64>,
    pub resolution_bw_hz: f64,
    pub segments: usize,
}

impl PsdEstimate {
    pub fn dbm_per_mhz(&self) -> Vec<f64> {
        self.density.iter().map(|&d| density_to_dbm_per_mhz(d)).collect()
    }

    /// Mean density over `[lo, hi]` Hz.
    pub fn mean_in(&self, lo: f64, hi: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .freqs_hz
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, d)| *d)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_offset(path, 0.0)
    }

    /// Write with frequencies shifted by `carrier_hz`.
    pub fn write_csv_offset(&self, path: &Path, carrier_hz: f64) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(w, "frequency_hz,dbm_per_mhz").map_err(io)?;
        for (f, d) in self.freqs_hz.iter().zip(self.dbm_per_mhz()) {
            writeln!(w, "{},{}", f + carrier_hz, d).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub fn density_to_dbm_per_mhz(density_per_hz: f64) -> f64 {
    10.0 * (density_per_hz * 1e6).max(1e-300).log10()
}

pub fn dbm_per_mhz_to_density(dbm_per_mhz: f64) -> f64 {
    10f64.powf(dbm_per_mhz / 10.0) / 1e6
}

/// Welch estimate with a Hann window and 50% overlap. The segment length is
/// the smallest power of two whose bin spacing does not exceed
/// `resolution_bw_hz`.
pub fn measure_psd(samples: &[Complex64], sample_rate_hz: f64, resolution_bw_hz: f64) -> Result<PsdEstimate> {
    if !(resolution_bw_hz > 0.0 && sample_rate_hz > 0.0) {
        return Err(Error::domain("resolution bandwidth and sample rate must be positive"));
    }
    let ratio = (sample_rate_hz / resolution_bw_hz).max(2.0);
    let nseg = 1usize << (ratio.log2() - 1e-9).ceil() as u32;
    let hop = nseg / 2;
    if samples.len() < nseg {
        return Err(Error::Estimation(format!("{} samples shorter than one {nseg}-point segment", samples.len())));
    }
    let segments = (samples.len() - nseg) / hop + 1;
    if segments < MIN_SEGMENTS {
        return Err(Error::Estimation(format!("only {segments} segments of {nseg} samples; need {MIN_SEGMENTS}")));
    }
    let window: Vec<f64> = (0..nseg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nseg as f64).cos())
        .collect();
    let wpow: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(nseg);
    let mut acc = vec![0.0; nseg];
    let mut buf = vec![Complex64::new(0.0, 0.0); nseg];
    for s in 0..segments {
        let seg = &samples[s * hop..s * hop + nseg];
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = x * w;
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let scale = 1.0 / (segments as f64 * wpow * sample_rate_hz);
    let df = sample_rate_hz / nseg as f64;
    let half = nseg / 2;
    let mut freqs_hz = Vec::with_capacity(nseg);
    let mut density = Vec::with_capacity(nseg);
    for i in 0..nseg {
        let bin = (i + half) % nseg;
        freqs_hz.push((i as f64 - half as f64) * df);
        density.push(acc[bin] * scale);
    }
    Ok(PsdEstimate { freqs_hz, density, resolution_bw_hz: df, segments })
}
