//! Prototype pulse design.
//!
//! The pulse is a frequency-sampled square-root Nyquist design: `κ + 1`
//! samples of its spectrum at spacing `1 / (κT)` define the taps, with the
//! root-raised-cosine magnitudes as the starting point. Transition samples
//! come in power-complementary pairs `H_i² + H_{κ-i}² = 1`, which keeps
//! `|P(f)|²` Nyquist at rate `1/T`; the free pair angles are then refined to
//! minimise energy beyond `±(1 + roll_off) B / 2` plus the
//! intrinsic OQAM lattice interference.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerology::SmtConfig;

/// Design is carried out at this reference subcarrier count and the
/// resulting frequency samples are reused for any `M`.
const DESIGN_REFERENCE_M: usize = 32;

/// Largest acceptable autocorrelation sidelobe at nonzero multiples of `T`.
pub const ISI_FLOOR_DB: f64 = -50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeFilter {
    taps: Vec<f64>,
    overlap_factor: usize,
    roll_off: f64,
    samples_per_symbol: usize,
}

impl PrototypeFilter {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn overlap_factor(&self) -> usize {
        self.overlap_factor
    }

    pub fn roll_off(&self) -> f64 {
        self.roll_off
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.samples_per_symbol
    }

    /// Tap index of the centre of symmetry.
    pub fn center(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    /// Delay from a lattice point to the matched-filter peak (`2 · center`).
    pub fn matched_delay(&self) -> usize {
        self.taps.len() - 1
    }

    /// Unit impulse, used to expose raw DFT slices through the analysis bank.
    pub fn impulse(samples_per_symbol: usize) -> Self {
        Self { taps: vec![1.0], overlap_factor: 0, roll_off: 1.0, samples_per_symbol }
    }

    /// Autocorrelation sidelobe floor at nonzero multiples of `T`, in dB.
    pub fn isi_floor_db(&self) -> f64 {
        let peak: f64 = self.taps.iter().map(|x| x * x).sum();
        let t = self.samples_per_symbol;
        let worst = (1..)
            .map(|m| m * t)
            .take_while(|&lag| lag < self.taps.len())
            .map(|lag| self.taps.iter().zip(&self.taps[lag..]).map(|(a, b)| a * b).sum::<f64>().abs())
            .fold(0.0, f64::max);
        20.0 * (worst / peak).max(1e-300).log10()
    }

    /// N-point DFT of the zero-padded taps.
    pub fn spectrum(&self, n: usize) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = self.taps.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        assert!(buf.len() <= n, "prototype longer than DFT");
        buf.resize(n, Complex64::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        buf
    }
}

/// Matched-filter gains `h_{k,n}` over one band's DFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BandResponse {
    /// Absolute N-point DFT bin of each tone, in FFT tone order.
    pub bins: Vec<usize>,
    pub gains: Vec<Complex64>,
}

/// Signed frequency offset (in bins) of tone `n` within an `l_sub`-bin band.
pub fn tone_offset(n: usize, l_sub: usize) -> isize {
    if n < l_sub / 2 {
        n as isize
    } else {
        n as isize - l_sub as isize
    }
}

/// Absolute DFT bin of tone `n` of band `k`.
pub fn tone_bin(config: &SmtConfig, k: usize, n: usize) -> usize {
    let nn = config.fc_block_len() as isize;
    let centre = (k * config.bins_per_spacing()) as isize;
    (centre + tone_offset(n, config.bins_per_band())).rem_euclid(nn) as usize
}

/// Tone index that folds onto tone `n` after decimation to the symbol rate.
pub fn alias_tone(n: usize, l_sub: usize) -> usize {
    (n + l_sub / 2) % l_sub
}

/// Normalised band response: the prototype DFT scaled by `1/√M` so alias
/// pairs satisfy `|h_n|² + |h_n'|² ≈ 1`.
pub fn freq_response(filter: &PrototypeFilter, config: &SmtConfig, band: usize) -> Result<BandResponse> {
    if !config.is_active(band) {
        return Err(Error::config(format!("band {band} is not active")));
    }
    let spectrum = filter.spectrum(config.fc_block_len());
    Ok(band_response_from_spectrum(&spectrum, filter, config, band))
}

pub(crate) fn band_response_from_spectrum(
    spectrum: &[Complex64],
    filter: &PrototypeFilter,
    config: &SmtConfig,
    band: usize,
) -> BandResponse {
    let n = spectrum.len();
    let l_sub = config.bins_per_band();
    let scale = 1.0 / (filter.samples_per_symbol() as f64).sqrt();
    let bins = (0..l_sub).map(|t| tone_bin(config, band, t)).collect();
    let gains = (0..l_sub)
        .map(|t| spectrum[tone_offset(t, l_sub).rem_euclid(n as isize) as usize] * scale)
        .collect();
    BandResponse { bins, gains }
}

/// Design a unit-energy, symmetric square-root Nyquist prototype of
/// `overlap_factor · M + 1` taps.
pub fn design_prototype(config: &SmtConfig, overlap_factor: usize, roll_off: f64) -> Result<PrototypeFilter> {
    if overlap_factor < 3 {
        return Err(Error::domain(format!("overlap factor must be >= 3, got {overlap_factor}")));
    }
    if !(roll_off > 0.0 && roll_off <= 1.0) {
        return Err(Error::domain(format!("roll-off must be in (0, 1], got {roll_off}")));
    }
    let samples = optimise_frequency_samples(overlap_factor, roll_off);
    let filter = PrototypeFilter {
        taps: taps_from_samples(&samples, config.samples_per_symbol()),
        overlap_factor,
        roll_off,
        samples_per_symbol: config.samples_per_symbol(),
    };
    let isi = filter.isi_floor_db();
    if isi > ISI_FLOOR_DB {
        return Err(Error::Design { reason: "autocorrelation sidelobes above the ISI floor".into(), isi_db: isi });
    }
    Ok(filter)
}

fn raised_cosine(f: f64, beta: f64) -> f64 {
    let f = f.abs();
    let lo = (1.0 - beta) / 2.0;
    let hi = (1.0 + beta) / 2.0;
    if f <= lo {
        1.0
    } else if f >= hi {
        0.0
    } else {
        0.5 * (1.0 + (PI / beta * (f - lo)).cos())
    }
}

/// Frequency samples `H_0..=H_κ` from the pair angles of the free transition samples.
fn samples_from_angles(kappa: usize, roll_off: f64, angles: &[f64]) -> Vec<f64> {
    let mut h: Vec<f64> = (0..=kappa).map(|i| raised_cosine(i as f64 / kappa as f64, roll_off).sqrt()).collect();
    for (slot, &theta) in free_pairs(kappa, roll_off).iter().zip(angles) {
        h[*slot] = theta.cos();
        h[kappa - *slot] = theta.sin();
    }
    if kappa % 2 == 0 {
        h[kappa / 2] = FRAC_1_SQRT_2;
    }
    h
}

/// Lower member of each power-complementary pair inside the transition band.
fn free_pairs(kappa: usize, roll_off: f64) -> Vec<usize> {
    (1..kappa.div_ceil(2))
        .filter(|&i| {
            let f = i as f64 / kappa as f64;
            f > (1.0 - roll_off) / 2.0 && f < (1.0 + roll_off) / 2.0
        })
        .collect()
}

fn taps_from_samples(h: &[f64], m: usize) -> Vec<f64> {
    let kappa = h.len() - 1;
    let len = kappa * m + 1;
    let period = (kappa * m) as f64;
    let mut taps: Vec<f64> = (0..len)
        .map(|t| {
            let phase = 2.0 * PI * t as f64 / period;
            h[0] + 2.0
                * h.iter()
                    .enumerate()
                    .skip(1)
                    .map(|(i, &hi)| if i % 2 == 0 { hi } else { -hi } * (phase * i as f64).cos())
                    .sum::<f64>()
        })
        .collect();
    let energy: f64 = taps.iter().map(|x| x * x).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|x| *x /= norm);
    // enforce exact symmetry against rounding in the cosine sums
    for i in 0..len / 2 {
        let avg = 0.5 * (taps[i] + taps[len - 1 - i]);
        taps[i] = avg;
        taps[len - 1 - i] = avg;
    }
    taps
}

fn out_of_band_fraction(taps: &[f64], m: usize, roll_off: f64) -> f64 {
    let n = 16 * m;
    let mut buf: Vec<Complex64> = taps.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let edge = (1.0 + roll_off) / 2.0 * (n / m) as f64;
    let total: f64 = buf.iter().map(|c| c.norm_sqr()).sum();
    let outside: f64 = buf
        .iter()
        .enumerate()
        .filter(|(b, _)| {
            let f = if *b < n / 2 { *b as f64 } else { *b as f64 - n as f64 };
            f.abs() >= edge
        })
        .map(|(_, c)| c.norm_sqr())
        .sum();
    outside / total
}

/// Energy of the real-part interference a lattice point receives from its
/// time/frequency neighbours.
pub(crate) fn intrinsic_interference(taps: &[f64], m: usize, kappa: usize) -> f64 {
    let len = taps.len() as isize;
    let hop = (m / 2) as isize;
    let span = 2 * kappa as isize;
    let mut total = 0.0;
    for dk in -2isize..=2 {
        for dn in -span..=span {
            if dk == 0 && dn == 0 {
                continue;
            }
            let shift = dn * hop;
            let (lo, hi) = (shift.max(0), (len + shift).min(len));
            let mut acc = Complex64::new(0.0, 0.0);
            for t in lo..hi {
                let w = 2.0 * PI * (dk * t) as f64 / m as f64;
                acc += Complex64::from_polar(taps[t as usize] * taps[(t - shift) as usize], w);
            }
            let rot = Complex64::i().powi(((dk + dn).rem_euclid(4)) as i32);
            total += (acc * rot).re.powi(2);
        }
    }
    total
}

fn design_cost(kappa: usize, roll_off: f64, angles: &[f64]) -> f64 {
    let m = DESIGN_REFERENCE_M;
    let taps = taps_from_samples(&samples_from_angles(kappa, roll_off, angles), m);
    out_of_band_fraction(&taps, m, roll_off) + intrinsic_interference(&taps, m, kappa)
}

fn optimise_frequency_samples(kappa: usize, roll_off: f64) -> Vec<f64> {
    let pairs = free_pairs(kappa, roll_off);
    let mut angles: Vec<f64> = pairs
        .iter()
        .map(|&i| raised_cosine(i as f64 / kappa as f64, roll_off).sqrt().clamp(0.0, 1.0).acos())
        .collect();
    // cyclic coordinate descent with golden-section line searches
    for _sweep in 0..4 {
        for p in 0..angles.len() {
            let (mut a, mut b) = ((angles[p] - 0.3).max(0.0), (angles[p] + 0.3).min(PI / 4.0));
            let g = (5f64.sqrt() - 1.0) / 2.0;
            let eval = |x: f64, angles: &mut Vec<f64>| {
                angles[p] = x;
                design_cost(kappa, roll_off, angles)
            };
            let mut c = b - g * (b - a);
            let mut d = a + g * (b - a);
            let mut fc = eval(c, &mut angles);
            let mut fd = eval(d, &mut angles);
            for _ in 0..40 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - g * (b - a);
                    fc = eval(c, &mut angles);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + g * (b - a);
                    fd = eval(d, &mut angles);
                }
            }
            angles[p] = 0.5 * (a + b);
        }
    }
    samples_from_angles(kappa, roll_off, &angles)
}
