//! Joint multi-band MMSE equalizer taps and combining.
//!
//! For stream `m` with bands `S_m`, tone `n` and its alias `n′`:
//!
//! ```text
//! D_n     = Σ_{l∈S_m} ( |h_{l,n} c_{l,n}|² + |h_{l,n′} c_{l,n′}|² ) / σ²_l + 1/SNR′_m
//! raw      w_{k,n} = h_{k,n} c*_{k,n} / σ²_k / D_n
//! whitened w_{k,n} = h_{k,n} c*_{k,n} / σ_k  / D_n      (applied to x̃/σ_k)
//! per-band w_{k,n} = h c* / σ²_k / ( (|h_n c_n|² + |h_n′ c_n′|²)/σ²_k + 1/SNR_k )
//! ```
//!
//! The per-band form equalizes every band on its own; its outputs are then
//! scaled to unit gain and averaged across the stream.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerology::StreamMap;
use crate::prototype::{alias_tone, BandResponse};
use crate::rx::analysis::SubbandFrame;
use crate::rx::state::{average_stream_snr, ChannelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TapForm {
    Raw,
    Whitened,
    PerBand,
}

impl TapForm {
    pub fn name(self) -> &'static str {
        match self {
            TapForm::Raw => "joint",
            TapForm::Whitened => "joint-whitened",
            TapForm::PerBand => "perband",
        }
    }
}

impl std::fmt::Display for TapForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TapForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" | "raw" => Ok(Self::Raw),
            "joint-whitened" | "whitened" => Ok(Self::Whitened),
            "perband" | "per-band" => Ok(Self::PerBand),
            _ => Err(Error::config(format!("unknown equalizer form '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerTapSet {
    form: TapForm,
    l_sub: usize,
    bands: Vec<usize>,
    taps: Vec<Vec<Complex64>>,
    band_gain: Vec<f64>,
    stream_snr: Vec<f64>,
}

impl EqualizerTapSet {
    pub fn form(&self) -> TapForm {
        self.form
    }

    pub fn bands(&self) -> &[usize] {
        &self.bands
    }

    /// Taps of the band at storage position `pos`.
    pub fn taps(&self, pos: usize) -> &[Complex64] {
        &self.taps[pos]
    }

    pub fn band_gain(&self, pos: usize) -> f64 {
        self.band_gain[pos]
    }

    pub fn stream_snr(&self) -> &[f64] {
        &self.stream_snr
    }

    pub fn band_position(&self, k: usize) -> Option<usize> {
        self.bands.binary_search(&k).ok()
    }

    /// Dump as `band,tone,real,imag,form`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(w, "band,tone,real,imag,form").map_err(io)?;
        for (k, taps) in self.bands.iter().zip(&self.taps) {
            for (n, t) in taps.iter().enumerate() {
                writeln!(w, "{k},{n},{},{},{}", t.re, t.im, self.form).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

fn positions(state: &ChannelState, set: &[usize]) -> Result<Vec<usize>> {
    set.iter()
        .map(|&k| state.band_position(k).ok_or_else(|| Error::Dimension(format!("band {k} missing from channel state"))))
        .collect()
}

/// Compute equalizer taps for every band of every stream. `responses` is
/// aligned with `state.bands()`.
pub fn compute_taps(state: &ChannelState, responses: &[BandResponse], map: &StreamMap, form: TapForm) -> Result<EqualizerTapSet> {
    let nb = state.bands().len();
    if responses.len() != nb {
        return Err(Error::Dimension(format!("{} band responses for {nb} bands", responses.len())));
    }
    let l_sub = state.c_bins().first().map(Vec::len).unwrap_or(0);
    if l_sub == 0 || l_sub % 2 != 0 {
        return Err(Error::Dimension("channel state needs an even, nonzero tone count".into()));
    }
    if responses.iter().zip(state.c_bins()).any(|(h, c)| h.gains.len() != l_sub || c.len() != l_sub) {
        return Err(Error::Dimension("tone counts differ between responses and channel state".into()));
    }
    let stream_snr = average_stream_snr(state, map)?;
    let sigma2 = state.sigma2();
    // |h c|² / σ² per band and tone.
    let q: Vec<Vec<f64>> = responses
        .iter()
        .zip(state.c_bins())
        .zip(sigma2)
        .map(|((h, c), s2)| h.gains.iter().zip(c).map(|(h, c)| (h * c).norm_sqr() / s2).collect())
        .collect();
    let mut taps = vec![vec![Complex64::new(0.0, 0.0); l_sub]; nb];
    let mut band_gain = vec![1.0; nb];
    let l = map.spread_factor() as f64;
    for (set, &snr_m) in map.streams().iter().zip(&stream_snr) {
        let pos = positions(state, set)?;
        let joint_den: Option<Vec<f64>> = match form {
            TapForm::Raw | TapForm::Whitened => {
                if !(snr_m > 0.0) || !snr_m.is_finite() {
                    return Err(Error::domain(format!("stream SNR must be positive and finite, got {snr_m}")));
                }
                Some(
                    (0..l_sub)
                        .map(|n| {
                            let na = alias_tone(n, l_sub);
                            pos.iter().map(|&p| q[p][n] + q[p][na]).sum::<f64>() + 1.0 / snr_m
                        })
                        .collect(),
                )
            }
            TapForm::PerBand => None,
        };
        for &p in &pos {
            let s2 = sigma2[p];
            let num_scale = match form {
                TapForm::Whitened => 1.0 / s2.sqrt(),
                _ => 1.0 / s2,
            };
            let snr_k = state.snr()[p];
            if form == TapForm::PerBand && (!(snr_k > 0.0) || !snr_k.is_finite()) {
                return Err(Error::domain(format!("band SNR must be positive and finite, got {snr_k}")));
            }
            let h = &responses[p].gains;
            let c = &state.c_bins()[p];
            for n in 0..l_sub {
                let den = match &joint_den {
                    Some(d) => d[n],
                    None => q[p][n] + q[p][alias_tone(n, l_sub)] + 1.0 / snr_k,
                };
                taps[p][n] = h[n] * c[n].conj() * (num_scale / den);
            }
            if form == TapForm::PerBand {
                let beta: f64 = (0..l_sub).map(|n| (taps[p][n] * h[n].conj() * c[n]).re).sum::<f64>() * 2.0 / l_sub as f64;
                if !(beta > 0.0) {
                    return Err(Error::domain("band has no usable gain"));
                }
                band_gain[p] = 1.0 / (l * beta);
            }
        }
    }
    if taps.iter().flatten().any(|t| !t.re.is_finite() || !t.im.is_finite()) {
        return Err(Error::domain("non-finite equalizer tap"));
    }
    Ok(EqualizerTapSet { form, l_sub, bands: state.bands().to_vec(), taps, band_gain, stream_snr })
}

/// `j^e`.
pub(crate) fn jpow(e: i64) -> Complex64 {
    match e.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

fn check_dims(frame: &SubbandFrame, taps: &EqualizerTapSet) -> Result<()> {
    if frame.span() != taps.l_sub {
        return Err(Error::Dimension(format!("frame has {} tones per band, taps {}", frame.span(), taps.l_sub)));
    }
    Ok(())
}

/// Weighted, rotated tones of band `k` for one block.
fn band_contribution<'a>(frame: &'a SubbandFrame, taps: &'a EqualizerTapSet, k: usize, k_ref: usize, block: usize) -> Result<impl Iterator<Item = Complex64> + 'a> {
    let fp = frame.band_position(k).ok_or_else(|| Error::Dimension(format!("band {k} not in frame")))?;
    let tp = taps.band_position(k).ok_or_else(|| Error::Dimension(format!("band {k} has no taps")))?;
    let rot = jpow(k_ref as i64 - k as i64) * taps.band_gain[tp];
    Ok(frame.tones(block, fp).iter().zip(&taps.taps[tp]).map(move |(x, w)| x * w * rot))
}

/// `ỹ_{m,n} = Σ_{k∈S_m} w_{k,n} x̃_{k,n}` per stream and block, with each
/// band rotated onto the lattice phase of the stream's first band.
pub fn equalize_combine(frame: &SubbandFrame, taps: &EqualizerTapSet, map: &StreamMap) -> Result<Vec<Vec<Vec<Complex64>>>> {
    check_dims(frame, taps)?;
    map.streams()
        .iter()
        .map(|set| {
            let k_ref = set[0];
            (0..frame.num_blocks())
                .map(|b| {
                    let mut acc = vec![Complex64::new(0.0, 0.0); taps.l_sub];
                    for &k in set {
                        for (a, v) in acc.iter_mut().zip(band_contribution(frame, taps, k, k_ref, b)?) {
                            *a += v;
                        }
                    }
                    Ok(acc)
                })
                .collect()
        })
        .collect()
}

/// Per-band equalized tones, kept separate for multicode despreading:
/// `[stream][branch][block][tone]`.
pub fn equalize_branches(frame: &SubbandFrame, taps: &EqualizerTapSet, map: &StreamMap) -> Result<Vec<Vec<Vec<Vec<Complex64>>>>> {
    check_dims(frame, taps)?;
    map.streams()
        .iter()
        .map(|set| {
            let k_ref = set[0];
            set.iter()
                .map(|&k| (0..frame.num_blocks()).map(|b| Ok(band_contribution(frame, taps, k, k_ref, b)?.collect())).collect())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerology::{partition_streams, SmtConfig};
    use crate::prototype::design_prototype;
    use crate::rx::band_responses;
    use crate::rx::state::{whiten, StateSource};
    use crate::rx::analysis::overlap_save_analyze;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cplx(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn random_state(rng: &mut ChaCha8Rng, bands: usize, l_sub: usize) -> (ChannelState, Vec<BandResponse>) {
        let c: Vec<Vec<Complex64>> = (0..bands).map(|_| (0..l_sub).map(|_| cplx(rng)).collect()).collect();
        let h: Vec<BandResponse> = (0..bands)
            .map(|_| BandResponse { bins: (0..l_sub).collect(), gains: (0..l_sub).map(|_| cplx(rng)).collect() })
            .collect();
        let s2: Vec<f64> = (0..bands).map(|_| rng.random_range(0.1..5.0)).collect();
        let snr: Vec<f64> = (0..bands).map(|_| rng.random_range(0.01..10.0)).collect();
        (ChannelState::new((0..bands).collect(), c, s2, snr, StateSource::Oracle).unwrap(), h)
    }

    #[test]
    fn single_band_joint_equals_per_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SmtConfig::new(4e6, 4).unwrap();
        let map = partition_streams(&cfg, 4).unwrap();
        for _ in 0..200 {
            let (st, h) = random_state(&mut rng, 4, 16);
            let a = compute_taps(&st, &h, &map, TapForm::Raw).unwrap();
            let b = compute_taps(&st, &h, &map, TapForm::PerBand).unwrap();
            for p in 0..4 {
                for (x, y) in a.taps(p).iter().zip(b.taps(p)) {
                    assert!((x - y).norm() <= 1e-15 * x.norm().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn flat_four_band_example() {
        let cfg = SmtConfig::new(4e6, 4).unwrap();
        let map = partition_streams(&cfg, 1).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let st = ChannelState::new((0..4).collect(), vec![vec![one; 8]; 4], vec![1.0; 4], vec![1e300; 4], StateSource::Oracle).unwrap();
        let h = vec![BandResponse { bins: (0..8).collect(), gains: vec![one; 8] }; 4];
        let t = compute_taps(&st, &h, &map, TapForm::Raw).unwrap();
        for p in 0..4 {
            assert!(t.taps(p).iter().all(|w| (w - 0.125).norm() < 1e-15));
        }
    }

    #[test]
    fn whitened_taps_differ_by_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SmtConfig::new(8e6, 8).unwrap();
        let map = partition_streams(&cfg, 2).unwrap();
        let (st, h) = random_state(&mut rng, 8, 16);
        let raw = compute_taps(&st, &h, &map, TapForm::Raw).unwrap();
        let wht = compute_taps(&st, &h, &map, TapForm::Whitened).unwrap();
        for p in 0..8 {
            let s = st.sigma2()[p].sqrt();
            for (r, w) in raw.taps(p).iter().zip(wht.taps(p)) {
                assert!((r * s - w).norm() < 1e-12 * w.norm());
            }
        }
    }

    #[test]
    fn dual_path_combining_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SmtConfig::new(16e6, 16).unwrap();
        let f = design_prototype(&cfg, 4, 1.0).unwrap();
        let map = partition_streams(&cfg, 4).unwrap();
        let x: Vec<Complex64> = (0..2000).map(|_| cplx(&mut rng)).collect();
        let frame = overlap_save_analyze(&x, &cfg, &f).unwrap();
        let h = band_responses(&f, &cfg);
        let c: Vec<Vec<Complex64>> = (0..16).map(|_| (0..32).map(|_| cplx(&mut rng)).collect()).collect();
        let s2: Vec<f64> = (0..16).map(|_| rng.random_range(0.1..5.0)).collect();
        let st = ChannelState::new((0..16).collect(), c, s2.clone(), vec![2.0; 16], StateSource::Oracle).unwrap();
        let raw = equalize_combine(&frame, &compute_taps(&st, &h, &map, TapForm::Raw).unwrap(), &map).unwrap();
        let white = whiten(&frame, &s2).unwrap();
        let wht = equalize_combine(&white, &compute_taps(&st, &h, &map, TapForm::Whitened).unwrap(), &map).unwrap();
        for (a, b) in raw.iter().flatten().flatten().zip(wht.iter().flatten().flatten()) {
            assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
        }
    }

    #[test]
    fn interference_acts_as_fade() {
        let cfg = SmtConfig::new(8e6, 8).unwrap();
        let map = partition_streams(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (st, h) = random_state(&mut rng, 8, 16);
        let mut s2 = vec![1.0; 8];
        let clean = ChannelState::new((0..8).collect(), st.c_bins().to_vec(), s2.clone(), vec![1.0; 8], StateSource::Oracle).unwrap();
        s2[3] = 1e3;
        let hit = ChannelState::new((0..8).collect(), st.c_bins().to_vec(), s2, vec![1.0; 8], StateSource::Oracle).unwrap();
        let a = compute_taps(&clean, &h, &map, TapForm::Raw).unwrap();
        let b = compute_taps(&hit, &h, &map, TapForm::Raw).unwrap();
        let e = |t: &EqualizerTapSet, p: usize| t.taps(p).iter().map(|w| w.norm_sqr()).sum::<f64>();
        let drop_hit = 10.0 * (e(&a, 3) / e(&b, 3)).log10();
        let drop_clean = 10.0 * (e(&a, 0) / e(&b, 0)).log10();
        assert!(drop_hit - drop_clean >= 25.0, "{drop_hit} {drop_clean}");
    }

    #[test]
    fn zero_frame_and_identity_combine() {
        let cfg = SmtConfig::new(8e6, 8).unwrap().with_active(vec![2]).unwrap();
        let f = design_prototype(&SmtConfig::new(8e6, 8).unwrap(), 4, 1.0).unwrap();
        let map = partition_streams(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Complex64> = (0..600).map(|_| cplx(&mut rng)).collect();
        let frame = overlap_save_analyze(&x, &cfg, &f).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let taps = EqualizerTapSet {
            form: TapForm::Raw,
            l_sub: 32,
            bands: vec![2],
            taps: vec![vec![one; 32]],
            band_gain: vec![1.0],
            stream_snr: vec![1.0],
        };
        let y = equalize_combine(&frame, &taps, &map).unwrap();
        for b in 0..frame.num_blocks() {
            assert_eq!(y[0][b], frame.tones(b, 0));
        }
        let z = overlap_save_analyze(&vec![Complex64::new(0.0, 0.0); 600], &cfg, &f).unwrap();
        assert!(equalize_combine(&z, &taps, &map).unwrap().iter().flatten().flatten().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = SmtConfig::new(4e6, 4).unwrap();
        let map = partition_streams(&cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (st, h) = random_state(&mut rng, 4, 8);
        let zero_snr = ChannelState::new((0..4).collect(), st.c_bins().to_vec(), vec![1.0; 4], vec![0.0; 4], StateSource::Oracle).unwrap();
        assert!(matches!(compute_taps(&zero_snr, &h, &map, TapForm::Raw), Err(Error::Domain(_))));
        assert!(compute_taps(&st, &h[..3], &map, TapForm::Raw).is_err());
    }
}
