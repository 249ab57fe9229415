//! Multipath channel surrogate and additive white Gaussian noise.
//!
//! The tap-delay line has an exponentially decaying power-delay profile with
//! independent complex Gaussian taps; the LOS profile adds a deterministic
//! first tap set by the Rician K-factor. Impairments are applied in the
//! fixed order channel → interference → noise.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// NLOS target RMS delay spread.
pub const NLOS_RMS_DELAY_S: f64 = 25e-9;
pub const NLOS_TAPS: usize = 64;
/// LOS scattered-part decay constant.
pub const LOS_RMS_DELAY_S: f64 = 10e-9;
pub const LOS_TAPS: usize = 32;
pub const LOS_K_FACTOR_DB: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    taps: Vec<Complex64>,
    sample_rate_hz: f64,
    los_k_factor_db: Option<f64>,
}

impl ChannelRealization {
    /// Build from arbitrary taps, normalised to unit power gain.
    pub fn from_taps(taps: Vec<Complex64>, sample_rate_hz: f64, los_k_factor_db: Option<f64>) -> Result<Self> {
        let p: f64 = taps.iter().map(|c| c.norm_sqr()).sum();
        if taps.is_empty() || !(p > 0.0) || !p.is_finite() {
            return Err(Error::domain("channel needs at least one finite non-zero tap"));
        }
        let g = 1.0 / p.sqrt();
        Ok(Self { taps: taps.into_iter().map(|c| c * g).collect(), sample_rate_hz, los_k_factor_db })
    }

    pub fn identity(sample_rate_hz: f64) -> Self {
        Self { taps: vec![Complex64::new(1.0, 0.0)], sample_rate_hz, los_k_factor_db: None }
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn los_k_factor_db(&self) -> Option<f64> {
        self.los_k_factor_db
    }

    /// RMS delay spread of this realisation's power-delay profile.
    pub fn rms_delay_spread_s(&self) -> f64 {
        let p: Vec<f64> = self.taps.iter().map(|c| c.norm_sqr()).collect();
        let tot: f64 = p.iter().sum();
        let mean = p.iter().enumerate().map(|(t, w)| t as f64 * w).sum::<f64>() / tot;
        let var = p.iter().enumerate().map(|(t, w)| (t as f64 - mean).powi(2) * w).sum::<f64>() / tot;
        var.sqrt() / self.sample_rate_hz
    }

    /// Save as `delay_samples,real,imag`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["delay_samples", "real", "imag"]).map_err(|e| csv_err(path, e))?;
        for (d, c) in self.taps.iter().enumerate() {
            w.serialize((d, c.re, c.im)).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Load an externally generated tap file. Missing delays are zero taps;
    /// the result is renormalised to unit power gain.
    pub fn load_csv(path: &Path, sample_rate_hz: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for rec in r.deserialize() {
            rows.push(rec.map_err(|e| csv_err(path, e))?);
        }
        let len = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let mut taps = vec![Complex64::new(0.0, 0.0); len];
        for (d, re, im) in rows {
            taps[d] += Complex64::new(re, im);
        }
        Self::from_taps(taps, sample_rate_hz, None).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelProfile {
    /// Single unit tap.
    Awgn,
    Los,
    Nlos,
}

impl std::str::FromStr for ChannelProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" | "flat" | "identity" => Ok(Self::Awgn),
            "los" => Ok(Self::Los),
            "nlos" => Ok(Self::Nlos),
            _ => Err(Error::config(format!("unknown channel profile '{s}'"))),
        }
    }
}

/// Tap-delay-line parameters at a given sample rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileParams {
    pub num_taps: usize,
    /// Power decay constant in samples.
    pub decay_samples: f64,
    pub k_factor_db: Option<f64>,
}

impl ChannelProfile {
    pub fn params(self, sample_rate_hz: f64) -> ProfileParams {
        match self {
            Self::Awgn => ProfileParams { num_taps: 1, decay_samples: 1.0, k_factor_db: None },
            Self::Nlos => ProfileParams {
                num_taps: NLOS_TAPS,
                decay_samples: NLOS_RMS_DELAY_S * sample_rate_hz,
                k_factor_db: None,
            },
            Self::Los => ProfileParams {
                num_taps: LOS_TAPS,
                decay_samples: LOS_RMS_DELAY_S * sample_rate_hz,
                k_factor_db: Some(LOS_K_FACTOR_DB),
            },
        }
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Draw taps whose expected power follows the profile (total expected gain
/// one), without per-draw normalisation.
pub fn draw_unnormalized<R: Rng + ?Sized>(params: &ProfileParams, rng: &mut R) -> Vec<Complex64> {
    if params.num_taps <= 1 {
        return vec![Complex64::new(1.0, 0.0)];
    }
    let pdp: Vec<f64> = (0..params.num_taps).map(|t| (-(t as f64) / params.decay_samples).exp()).collect();
    let total: f64 = pdp.iter().sum();
    let (los_power, scatter_power) = match params.k_factor_db {
        Some(k_db) => {
            let k = 10f64.powf(k_db / 10.0);
            (k / (k + 1.0), 1.0 / (k + 1.0))
        }
        None => (0.0, 1.0),
    };
    let mut taps: Vec<Complex64> = pdp.iter().map(|p| complex_gaussian(rng, scatter_power * p / total)).collect();
    taps[0] += Complex64::new(los_power.sqrt(), 0.0);
    taps
}

pub fn draw_channel<R: Rng + ?Sized>(profile: ChannelProfile, sample_rate_hz: f64, rng: &mut R) -> ChannelRealization {
    let params = profile.params(sample_rate_hz);
    let taps = draw_unnormalized(&params, rng);
    ChannelRealization::from_taps(taps, sample_rate_hz, params.k_factor_db)
        .unwrap_or_else(|_| ChannelRealization::identity(sample_rate_hz))
}

/// Full linear convolution (`len(x) + len(c) − 1` samples).
pub fn apply_channel(samples: &[Complex64], channel: &ChannelRealization) -> Vec<Complex64> {
    let c = channel.taps();
    if samples.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Complex64::new(0.0, 0.0); samples.len() + c.len() - 1];
    for (d, &tap) in c.iter().enumerate() {
        if tap == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (o, &x) in out[d..].iter_mut().zip(samples) {
            *o += x * tap;
        }
    }
    out
}

/// Noise variance for a target SNR; zero for `+∞`.
pub fn noise_variance(snr_db: f64, signal_power_ref: f64) -> Result<f64> {
    if !(signal_power_ref > 0.0) {
        return Err(Error::domain("signal power reference must be positive"));
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if snr_db.is_nan() {
        return Err(Error::domain("SNR is NaN"));
    }
    Ok(signal_power_ref / 10f64.powf(snr_db / 10.0))
}

/// Add circular complex Gaussian noise in place; returns its variance.
pub fn add_awgn<R: Rng + ?Sized>(samples: &mut [Complex64], snr_db: f64, signal_power_ref: f64, rng: &mut R) -> Result<f64> {
    let var = noise_variance(snr_db, signal_power_ref)?;
    add_noise_variance(samples, var, rng);
    Ok(var)
}

pub fn add_noise_variance<R: Rng + ?Sized>(samples: &mut [Complex64], variance: f64, rng: &mut R) {
    if variance > 0.0 {
        for s in samples.iter_mut() {
            *s += complex_gaussian(rng, variance);
        }
    }
}
