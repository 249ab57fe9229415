//! Narrowband interferers: band-limited Gaussian noise at random centres and
//! levels relative to the receiver noise floor.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum shaping-filter stopband attenuation, dB.
pub const STOPBAND_DB: f64 = 60.0;
const DESIGN_ATTEN_DB: f64 = 66.0;
const PASS_EDGE: f64 = 0.7;
const STOP_EDGE: f64 = 1.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfererSpec {
    pub count: usize,
    pub bandwidth_hz: f64,
    /// In-band PSD above the noise PSD, dB, drawn uniformly.
    pub psd_above_noise_db: [f64; 2],
}

impl Default for InterfererSpec {
    fn default() -> Self {
        Self { count: 0, bandwidth_hz: 20e6, psd_above_noise_db: [5.0, 40.0] }
    }
}

impl InterfererSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self, signal_bandwidth_hz: f64) -> Result<()> {
        let [lo, hi] = self.psd_above_noise_db;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::config(format!("interferer level range [{lo}, {hi}] is invalid")));
        }
        if self.count > 0 && !(self.bandwidth_hz > 0.0 && self.bandwidth_hz < signal_bandwidth_hz) {
            return Err(Error::config(format!(
                "interferer bandwidth {} Hz must be in (0, {signal_bandwidth_hz})",
                self.bandwidth_hz
            )));
        }
        Ok(())
    }
}

/// Ground truth for one generated interferer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfererTruth {
    /// Baseband centre frequency.
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    /// In-band PSD relative to noise PSD, dB.
    pub psd_dbr: f64,
    /// In-band PSD, power per Hz.
    pub psd_per_hz: f64,
}

pub fn write_ground_truth_csv(truth: &[InterfererTruth], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })?;
    let err = |e: csv::Error| Error::Parse { path: path.into(), message: e.to_string() };
    w.write_record(["center_hz", "psd_dbr"]).map_err(err)?;
    for t in truth {
        w.serialize((t.center_hz, t.psd_dbr)).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Kaiser-windowed lowpass with unit DC gain for a signal of the given
/// bandwidth at `sample_rate_hz`.
pub fn shaping_filter(bandwidth_hz: f64, sample_rate_hz: f64) -> Vec<f64> {
    let half = bandwidth_hz / 2.0 / sample_rate_hz;
    let transition = 2.0 * PI * (STOP_EDGE - PASS_EDGE) * half;
    let beta = 0.1102 * (DESIGN_ATTEN_DB - 8.7);
    let mut len = ((DESIGN_ATTEN_DB - 8.0) / (2.285 * transition)).ceil() as usize + 1;
    if len % 2 == 0 {
        len += 1;
    }
    let mid = (len / 2) as f64;
    let cutoff = half;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * t).sin() / (PI * t) };
            let r = t / mid;
            sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Draw centre frequencies (uniform over `[-W/2, W/2)`) and levels.
pub fn draw_interferer_params<R: Rng + ?Sized>(
    spec: &InterfererSpec,
    signal_bandwidth_hz: f64,
    noise_psd: f64,
    rng: &mut R,
) -> Vec<InterfererTruth> {
    let [lo, hi] = spec.psd_above_noise_db;
    (0..spec.count)
        .map(|_| {
            let center_hz = (rng.random::<f64>() - 0.5) * signal_bandwidth_hz;
            let psd_dbr = if hi > lo { rng.random_range(lo..hi) } else { lo };
            InterfererTruth {
                center_hz,
                bandwidth_hz: spec.bandwidth_hz,
                psd_dbr,
                psd_per_hz: noise_psd * 10f64.powf(psd_dbr / 10.0),
            }
        })
        .collect()
}

/// Render one interferer of `len` samples.
pub fn render_interferer<R: Rng + ?Sized>(truth: &InterfererTruth, len: usize, sample_rate_hz: f64, rng: &mut R) -> Vec<Complex64> {
    let h = shaping_filter(truth.bandwidth_hz, sample_rate_hz);
    let s = (truth.psd_per_hz * sample_rate_hz / 2.0).sqrt();
    let noise: Vec<Complex64> = (0..len + h.len() - 1)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * s, im * s)
        })
        .collect();
    let step = 2.0 * PI * truth.center_hz / sample_rate_hz;
    (0..len)
        .map(|t| {
            let v: Complex64 = h.iter().rev().zip(&noise[t..t + h.len()]).map(|(a, x)| x * a).sum();
            v * Complex64::from_polar(1.0, step * t as f64)
        })
        .collect()
}

/// Add `spec.count` interferers to `samples` in place. `noise_psd` is the
/// receiver noise PSD (power per Hz) the levels are referenced to.
pub fn add_interferers<R: Rng + ?Sized>(
    samples: &mut [Complex64],
    spec: &InterfererSpec,
    noise_psd: f64,
    sample_rate_hz: f64,
    rng: &mut R,
) -> Result<Vec<InterfererTruth>> {
    spec.validate(sample_rate_hz)?;
    if spec.count > 0 && !(noise_psd > 0.0) {
        return Err(Error::domain("interferer levels need a positive noise PSD reference"));
    }
    let truth = draw_interferer_params(spec, sample_rate_hz, noise_psd, rng);
    for t in &truth {
        let x = render_interferer(t, samples.len(), sample_rate_hz, rng);
        for (s, v) in samples.iter_mut().zip(x) {
            *s += v;
        }
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psd::measure_psd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn filter_gain_db(h: &[f64], f: f64) -> f64 {
        let v: Complex64 = h.iter().enumerate().map(|(t, &a)| Complex64::from_polar(a, -2.0 * PI * f * t as f64)).sum();
        20.0 * v.norm().log10()
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_44).abs() < 1e-11);
    }

    #[test]
    fn stopband_beyond_one_and_a_half_half_bandwidths() {
        let fs = 160e6;
        let h = shaping_filter(20e6, fs);
        let half = 10e6 / fs;
        for i in 0..400 {
            let f = 1.5 * half + (0.5 - 1.5 * half) * i as f64 / 399.0;
            assert!(filter_gain_db(&h, f) < -STOPBAND_DB, "{f}");
        }
        assert!(filter_gain_db(&h, 0.0).abs() < 1e-9);
        assert!(filter_gain_db(&h, 0.5 * half).abs() < 0.05);
    }

    #[test]
    fn zero_count_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![Complex64::new(0.3, 0.1); 100];
        let truth = add_interferers(&mut x, &InterfererSpec::none(), 1.0, 1e8, &mut rng).unwrap();
        assert!(truth.is_empty());
        assert!(x.iter().all(|s| *s == Complex64::new(0.3, 0.1)));
    }

    #[test]
    fn spec_validation() {
        let bad = InterfererSpec { count: 1, bandwidth_hz: 20e6, psd_above_noise_db: [10.0, 5.0] };
        assert!(bad.validate(1e8).is_err());
        let wide = InterfererSpec { count: 1, bandwidth_hz: 2e8, psd_above_noise_db: [5.0, 40.0] };
        assert!(wide.validate(1e8).is_err());
    }

    #[test]
    fn level_and_bandwidth_match_target() {
        let fs = 160e6;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise_psd = 1.0 / fs;
        let spec = InterfererSpec { count: 1, bandwidth_hz: 20e6, psd_above_noise_db: [30.0, 30.0] };
        let mut x = vec![Complex64::new(0.0, 0.0); 1 << 18];
        let truth = add_interferers(&mut x, &spec, noise_psd, fs, &mut rng).unwrap();
        let t = truth[0];
        let psd = measure_psd(&x, fs, fs / 1024.0).unwrap();
        // Shift so the interferer sits at DC and evaluate around it.
        let rel = |f: f64| {
            let d = f - t.center_hz;
            (d + fs / 2.0).rem_euclid(fs) - fs / 2.0
        };
        let inband: Vec<f64> =
            psd.freqs_hz.iter().zip(&psd.density).filter(|(f, _)| rel(**f).abs() < 5e6).map(|(_, d)| *d).collect();
        let mean = inband.iter().sum::<f64>() / inband.len() as f64;
        assert!((10.0 * (mean / t.psd_per_hz).log10()).abs() < 1.0);

        let mut bins: Vec<(f64, f64)> = psd.freqs_hz.iter().map(|&f| rel(f)).zip(psd.density.iter().cloned()).collect();
        bins.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = bins.iter().map(|b| b.1).sum();
        let mut acc = 0.0;
        let lo = bins.iter().find(|b| {
            acc += b.1;
            acc >= 0.005 * total
        });
        acc = 0.0;
        let hi = bins.iter().rev().find(|b| {
            acc += b.1;
            acc >= 0.005 * total
        });
        let bw = hi.unwrap().0 - lo.unwrap().0;
        assert!((bw / 20e6 - 1.0).abs() < 0.15, "{bw}");
    }

    fn kolmogorov_p(d: f64, n: usize) -> f64 {
        let sn = (n as f64).sqrt();
        let lambda = (sn + 0.12 + 0.11 / sn) * d;
        let mut p = 0.0;
        for k in 1..100 {
            let kf = k as f64;
            p += 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn levels_are_uniform_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let spec = InterfererSpec { count: 10_000, ..InterfererSpec::default() };
        let mut levels: Vec<f64> = draw_interferer_params(&spec, 1.6e8, 1.0, &mut rng).iter().map(|t| t.psd_dbr).collect();
        levels.sort_by(f64::total_cmp);
        let n = levels.len();
        let d = levels
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cdf = (v - 5.0) / 35.0;
                (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(kolmogorov_p(d, n) > 0.01, "D = {d}");
        assert!(levels[0] >= 5.0 && levels[n - 1] <= 40.0);
    }
}
