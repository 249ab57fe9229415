//! Channel state: per-tone channel gains, per-band noise-plus-interference
//! power and per-band SNR.
//!
//! Units are those of the analysis grid: white noise of per-sample variance
//! `σ²` gives every bin variance `σ²`, and a flat interferer of PSD `ψ`
//! (power per Hz) adds `ψ·f_s` to each bin it covers.

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::interference::InterfererTruth;
use crate::numerology::{SmtConfig, StreamMap};
use crate::prototype::{tone_bin, BandResponse};
use crate::rx::analysis::SubbandFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateSource {
    Oracle,
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    bands: Vec<usize>,
    c_bins: Vec<Vec<Complex64>>,
    sigma2: Vec<f64>,
    snr: Vec<f64>,
    source: StateSource,
}

impl ChannelState {
    pub fn new(
        bands: Vec<usize>,
        c_bins: Vec<Vec<Complex64>>,
        sigma2: Vec<f64>,
        snr: Vec<f64>,
        source: StateSource,
    ) -> Result<Self> {
        if c_bins.len() != bands.len() || sigma2.len() != bands.len() || snr.len() != bands.len() {
            return Err(Error::Dimension("channel state vectors differ in band count".into()));
        }
        if let Some(s) = sigma2.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::domain(format!("band noise power must be positive and finite, got {s}")));
        }
        if c_bins.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::domain("channel gains must be finite"));
        }
        Ok(Self { bands, c_bins, sigma2, snr, source })
    }

    /// Oracle state from known channel taps and band noise powers. Per-band
    /// SNRs follow from the matched-filter responses and the per-tone
    /// symbol energy of `map`.
    pub fn oracle(
        config: &SmtConfig,
        channel: &ChannelRealization,
        sigma2: Vec<f64>,
        responses: &[BandResponse],
        map: &StreamMap,
    ) -> Result<Self> {
        let bands = config.active_subcarriers().to_vec();
        let c_bins = channel_bins(config, channel);
        let e_tone = 2.0 * map.symbol_energy_per_band();
        let snr = band_snr(responses, &c_bins, &sigma2, e_tone)?;
        Self::new(bands, c_bins, sigma2, snr, StateSource::Oracle)
    }

    pub fn bands(&self) -> &[usize] {
        &self.bands
    }

    pub fn c_bins(&self) -> &[Vec<Complex64>] {
        &self.c_bins
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn snr(&self) -> &[f64] {
        &self.snr
    }

    pub fn source(&self) -> StateSource {
        self.source
    }

    pub fn band_position(&self, k: usize) -> Option<usize> {
        self.bands.binary_search(&k).ok()
    }

    pub fn with_source(mut self, source: StateSource) -> Self {
        self.source = source;
        self
    }
}

/// Channel frequency response at every active band's tone bins.
pub fn channel_bins(config: &SmtConfig, channel: &ChannelRealization) -> Vec<Vec<Complex64>> {
    let n = config.fc_block_len();
    let l = config.bins_per_band();
    config
        .active_subcarriers()
        .iter()
        .map(|&k| {
            (0..l)
                .map(|t| {
                    let bin = tone_bin(config, k, t);
                    channel
                        .taps()
                        .iter()
                        .enumerate()
                        .map(|(d, c)| c * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * ((bin * d) % n) as f64 / n as f64))
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// `SNR_l = E_tone · (2/L_sub) Σ_n |h c|² / σ²_l`.
pub fn band_snr(responses: &[BandResponse], c_bins: &[Vec<Complex64>], sigma2: &[f64], e_tone: f64) -> Result<Vec<f64>> {
    if responses.len() != c_bins.len() || sigma2.len() != c_bins.len() {
        return Err(Error::Dimension("responses, gains and noise powers differ in band count".into()));
    }
    responses
        .iter()
        .zip(c_bins)
        .zip(sigma2)
        .map(|((h, c), s2)| {
            if h.gains.len() != c.len() {
                return Err(Error::Dimension("tone count mismatch".into()));
            }
            let p: f64 = h.gains.iter().zip(c).map(|(h, c)| (h * c).norm_sqr()).sum();
            Ok(e_tone * 2.0 * p / c.len() as f64 / s2)
        })
        .collect()
}

/// Where the band noise powers come from.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSource<'a> {
    /// Closed form from the generator: per-sample noise variance plus the
    /// interferers' band overlap.
    Oracle { noise_var: f64, interferers: &'a [InterfererTruth] },
    /// Robust estimate from a signal-free measurement frame.
    Estimated { measurement: Option<&'a SubbandFrame> },
}

/// Per-band noise-plus-interference power for every active band.
pub fn estimate_band_noise(config: &SmtConfig, source: NoiseSource<'_>) -> Result<Vec<f64>> {
    match source {
        NoiseSource::Oracle { noise_var, interferers } => {
            if !(noise_var >= 0.0) {
                return Err(Error::domain("noise variance must be non-negative"));
            }
            let fs = config.sample_rate_hz();
            let band_width = 2.0 * config.subcarrier_spacing_hz();
            Ok(config
                .active_subcarriers()
                .iter()
                .map(|&k| {
                    let fk = config.subcarrier_freq_hz(k);
                    noise_var
                        + interferers
                            .iter()
                            .map(|i| {
                                let ov = circular_overlap(fk - band_width / 2.0, fk + band_width / 2.0, i.center_hz - i.bandwidth_hz / 2.0, i.center_hz + i.bandwidth_hz / 2.0, fs);
                                ov / band_width * i.psd_per_hz * fs
                            })
                            .sum::<f64>()
                })
                .collect())
        }
        NoiseSource::Estimated { measurement } => {
            let frame = measurement.ok_or_else(|| Error::Estimation("no signal-free measurement segment".into()))?;
            if frame.num_blocks() == 0 {
                return Err(Error::Estimation("measurement segment has no blocks".into()));
            }
            let c = exp_median_constant(frame.span());
            Ok((0..frame.bands().len())
                .map(|pos| {
                    (0..frame.num_blocks())
                        .map(|b| {
                            let mut p: Vec<f64> = frame.tones(b, pos).iter().map(|v| v.norm_sqr()).collect();
                            median(&mut p) / c
                        })
                        .sum::<f64>()
                        / frame.num_blocks() as f64
                })
                .collect())
        }
    }
}

/// Expected sample median of `n` unit-mean exponential variables; tends to
/// `ln 2` for large `n`.
fn exp_median_constant(n: usize) -> f64 {
    // E[X_(k)] = Σ_{i=n−k+1}^{n} 1/i for the k-th smallest.
    let order = |k: usize| ((n - k + 1)..=n).map(|i| 1.0 / i as f64).sum::<f64>();
    if n == 0 {
        std::f64::consts::LN_2
    } else if n % 2 == 1 {
        order(n / 2 + 1)
    } else {
        0.5 * (order(n / 2) + order(n / 2 + 1))
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Overlap length of `[a0, a1]` and `[b0, b1]` on a circle of circumference `period`.
fn circular_overlap(a0: f64, a1: f64, b0: f64, b1: f64, period: f64) -> f64 {
    (-1..=1)
        .map(|w| {
            let s = w as f64 * period;
            ((a1).min(b1 + s) - (a0).max(b0 + s)).max(0.0)
        })
        .sum()
}

/// `x̃′ = x̃ / σ_k`.
pub fn whiten(frame: &SubbandFrame, sigma2: &[f64]) -> Result<SubbandFrame> {
    if sigma2.len() != frame.bands().len() {
        return Err(Error::Dimension("one noise power per band required".into()));
    }
    if let Some(s) = sigma2.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::domain(format!("cannot whiten with band noise power {s}")));
    }
    Ok(frame.map_bands(|pos, tones| {
        let g = 1.0 / sigma2[pos].sqrt();
        tones.iter().map(|v| v * g).collect()
    }))
}

/// `SNR′_m`: arithmetic mean of `SNR_l` over each stream's bands.
pub fn average_stream_snr(state: &ChannelState, map: &StreamMap) -> Result<Vec<f64>> {
    map.streams()
        .iter()
        .map(|set| {
            if set.is_empty() {
                return Err(Error::domain("stream has no bands"));
            }
            let total = set
                .iter()
                .map(|&k| {
                    state.band_position(k).map(|p| state.snr()[p]).ok_or_else(|| Error::Dimension(format!("band {k} missing from channel state")))
                })
                .sum::<Result<f64>>()?;
            Ok(total / set.len() as f64)
        })
        .collect()
}
