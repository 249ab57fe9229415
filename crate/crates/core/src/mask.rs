//! Regulatory UWB spectral masks, compliance checks and subcarrier
//! activation planning.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerology::SmtConfig;
use crate::psd::PsdEstimate;

const BUILTIN_MASKS: &str = include_str!("../data/masks.csv");

/// Finest resolution bandwidth at which limits are specified.
pub const MAX_RBW_HZ: f64 = 1e6;

/// Default extra back-off between the planned level and the transmitted
/// level, absorbing PSD estimator variance.
pub const MEASUREMENT_BACKOFF_DB: f64 = 0.5;

/// Guard around each subcarrier, in resolution bandwidths, covering the
/// main lobe and first sidelobes of the Hann-windowed measurement.
pub const PLANNER_RBW_GUARD: f64 = 3.0;

/// Default fraction of subcarriers the planner must keep active.
pub const DEFAULT_MIN_ACTIVE_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "FCC_USA")]
    Fcc,
    #[serde(rename = "ECC_Europe")]
    Ecc,
    #[serde(rename = "Japan")]
    Japan,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Fcc, Region::Ecc, Region::Japan];

    pub fn name(self) -> &'static str {
        match self {
            Region::Fcc => "FCC_USA",
            Region::Ecc => "ECC_Europe",
            Region::Japan => "Japan",
        }
    }

    /// Carrier frequency used for the shipped closed-loop checks.
    pub fn default_carrier_hz(self) -> f64 {
        match self {
            Region::Fcc => 6.5e9,
            Region::Ecc => 7.25e9,
            Region::Japan => 8.75e9,
        }
    }
}

impl std::str::FromStr for Region {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fcc" | "fcc_usa" | "usa" => Ok(Region::Fcc),
            "ecc" | "ecc_europe" | "europe" => Ok(Region::Ecc),
            "japan" | "jp" => Ok(Region::Japan),
            _ => Err(Error::config(format!("unknown mask region '{s}'"))),
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSegment {
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub limit_dbm_per_mhz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMask {
    region: Region,
    segments: Vec<MaskSegment>,
    source: String,
}

#[derive(Debug, Deserialize)]
struct MaskRow {
    f_low_mhz: f64,
    f_high_mhz: f64,
    limit_dbm_per_mhz: f64,
    region: Region,
    #[serde(default)]
    note: Option<String>,
}

impl SpectralMask {
    pub fn new(region: Region, mut segments: Vec<MaskSegment>, source: impl Into<String>) -> Result<Self> {
        segments.sort_by(|a, b| a.f_low_hz.total_cmp(&b.f_low_hz));
        if segments.is_empty() {
            return Err(Error::config(format!("{region} mask has no segments")));
        }
        for s in &segments {
            if !(s.f_low_hz < s.f_high_hz) || !s.limit_dbm_per_mhz.is_finite() {
                return Err(Error::config(format!("{region} mask segment {s:?} is invalid")));
            }
        }
        if let Some(w) = segments.windows(2).find(|w| w[1].f_low_hz < w[0].f_high_hz) {
            return Err(Error::config(format!("{region} mask segments overlap at {} Hz", w[1].f_low_hz)));
        }
        Ok(Self { region, segments, source: source.into() })
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn segments(&self) -> &[MaskSegment] {
        &self.segments
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Shipped table for `region`.
    pub fn builtin(region: Region) -> Self {
        parse_masks(BUILTIN_MASKS, "builtin")
            .expect("shipped mask table parses")
            .into_iter()
            .find(|m| m.region == region)
            .expect("every region is shipped")
    }

    /// Same mask with segment `index` split at `at_hz`.
    pub fn split_segment(&self, index: usize, at_hz: f64) -> Result<Self> {
        let s = *self.segments.get(index).ok_or_else(|| Error::domain("segment index out of range"))?;
        if !(at_hz > s.f_low_hz && at_hz < s.f_high_hz) {
            return Err(Error::domain("split point outside segment"));
        }
        let mut segs = self.segments.clone();
        segs[index].f_high_hz = at_hz;
        segs.insert(index + 1, MaskSegment { f_low_hz: at_hz, ..s });
        Self::new(self.region, segs, self.source.clone())
    }
}

/// Parse a mask table (`f_low_mhz,f_high_mhz,limit_dbm_per_mhz,region[,note]`).
pub fn parse_masks(text: &str, source: &str) -> Result<Vec<SpectralMask>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let mut per: Vec<(Region, Vec<MaskSegment>, Vec<String>)> = Vec::new();
    for row in rdr.deserialize::<MaskRow>() {
        let row = row.map_err(|e| Error::Parse { path: source.into(), message: e.to_string() })?;
        let seg = MaskSegment {
            f_low_hz: row.f_low_mhz * 1e6,
            f_high_hz: row.f_high_mhz * 1e6,
            limit_dbm_per_mhz: row.limit_dbm_per_mhz,
        };
        match per.iter_mut().find(|p| p.0 == row.region) {
            Some(p) => {
                p.1.push(seg);
                p.2.extend(row.note.filter(|n| !n.is_empty()));
            }
            None => per.push((row.region, vec![seg], row.note.filter(|n| !n.is_empty()).into_iter().collect())),
        }
    }
    per.into_iter()
        .map(|(r, segs, notes)| SpectralMask::new(r, segs, format!("{source}: {}", notes.join("; "))))
        .collect()
}

pub fn load_masks(path: &Path) -> Result<Vec<SpectralMask>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_masks(&text, &path.display().to_string())
}

/// Write masks as `f_low_mhz,f_high_mhz,limit_dbm_per_mhz,region`.
pub fn write_masks_csv(masks: &[SpectralMask], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "f_low_mhz,f_high_mhz,limit_dbm_per_mhz,region").map_err(io)?;
    for m in masks {
        for s in m.segments() {
            writeln!(w, "{},{},{},{}", s.f_low_hz / 1e6, s.f_high_hz / 1e6, s.limit_dbm_per_mhz, m.region()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Piecewise-constant lookup over half-open `[f_low, f_high)` segments.
pub fn mask_limit(mask: &SpectralMask, freq_hz: f64) -> Result<f64> {
    let segs = mask.segments();
    let i = segs.partition_point(|s| s.f_low_hz <= freq_hz);
    if i > 0 && freq_hz < segs[i - 1].f_high_hz {
        Ok(segs[i - 1].limit_dbm_per_mhz)
    } else {
        Err(Error::Coverage { region: mask.region().name().into(), freq_hz })
    }
}

/// Lowest limit over `[lo, hi]`; errors if any part is uncovered.
pub fn min_limit_over(mask: &SpectralMask, lo: f64, hi: f64) -> Result<f64> {
    let mut f = lo;
    let mut worst = f64::INFINITY;
    loop {
        let lim = mask_limit(mask, f)?;
        worst = worst.min(lim);
        let seg = mask.segments().iter().find(|s| s.f_low_hz <= f && f < s.f_high_hz).expect("covered");
        if seg.f_high_hz > hi {
            return Ok(worst);
        }
        f = seg.f_high_hz;
        if f == hi {
            return Ok(worst.min(mask_limit(mask, f)?));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplianceReport {
    pub region: Region,
    pub margin_db: f64,
    pub pass: bool,
    /// Smallest `limit − psd` over measured frequencies, dB.
    pub min_headroom_db: f64,
    pub worst_freq_hz: f64,
    /// `psd − (limit − margin)` at the worst frequency; positive means fail.
    pub worst_excess_db: f64,
    /// All-zero input.
    pub degenerate: bool,
    #[serde(skip)]
    pub rows: Vec<(f64, f64, f64)>,
}

impl ComplianceReport {
    pub fn summary(&self) -> String {
        format!(
            "{} mask, margin {:.1} dB: {} (worst {:.3} MHz, excess {:+.2} dB, headroom {:.2} dB){}",
            self.region,
            self.margin_db,
            if self.pass { "PASS" } else { "FAIL" },
            self.worst_freq_hz / 1e6,
            self.worst_excess_db,
            self.min_headroom_db,
            if self.degenerate { " [degenerate: silent input]" } else { "" }
        )
    }

    /// `frequency_hz,psd_dbm_per_mhz,limit_dbm_per_mhz`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(w, "frequency_hz,psd_dbm_per_mhz,limit_dbm_per_mhz").map_err(io)?;
        for (f, p, l) in &self.rows {
            writeln!(w, "{f},{p},{l}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Compare a baseband PSD shifted to `carrier_hz` against `mask`.
pub fn check_compliance(psd: &PsdEstimate, carrier_hz: f64, mask: &SpectralMask, margin_db: f64) -> Result<ComplianceReport> {
    if psd.resolution_bw_hz > MAX_RBW_HZ * (1.0 + 1e-9) {
        return Err(Error::Measurement(format!(
            "resolution bandwidth {:.0} Hz exceeds {:.0} Hz",
            psd.resolution_bw_hz, MAX_RBW_HZ
        )));
    }
    let mut worst = (f64::NAN, f64::NEG_INFINITY);
    let mut headroom = f64::INFINITY;
    let mut rows = Vec::with_capacity(psd.freqs_hz.len());
    for (f, p) in psd.freqs_hz.iter().zip(psd.dbm_per_mhz()) {
        let rf = f + carrier_hz;
        let lim = mask_limit(mask, rf)?;
        let excess = p - (lim - margin_db);
        if excess > worst.1 {
            worst = (rf, excess);
        }
        headroom = headroom.min(lim - p);
        rows.push((rf, p, lim));
    }
    Ok(ComplianceReport {
        region: mask.region(),
        margin_db,
        pass: worst.1 <= 0.0,
        min_headroom_db: headroom,
        worst_freq_hz: worst.0,
        worst_excess_db: worst.1,
        degenerate: psd.density.iter().all(|d| *d == 0.0),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivationPlan {
    pub region: Region,
    pub carrier_hz: f64,
    pub active: Vec<usize>,
    /// Allowed transmit PSD level (lowest limit over the active region minus margin).
    pub level_dbm_per_mhz: f64,
    pub margin_db: f64,
}

/// Fold a baseband interval onto `[-fs/2, fs/2)`; the sampled spectrum is
/// periodic, so energy past one band edge shows up at the other.
fn wrap_interval(lo: f64, hi: f64, fs: f64) -> Vec<(f64, f64)> {
    let half = fs / 2.0;
    if hi - lo >= fs {
        return vec![(-half, half)];
    }
    let mut out = vec![(lo.max(-half), hi.min(half))];
    if hi > half {
        out.push((-half, hi - fs));
    }
    if lo < -half {
        out.push((lo + fs, half));
    }
    out
}

/// Choose the highest PSD level that keeps at least `min_active_fraction`
/// of the configured subcarriers active; a subcarrier stays active only if
/// the mask allows that level over `±(1.5 B + 3 RBW)` around its centre,
/// taken circularly over the sampled band.
pub fn plan_active_set(
    mask: &SpectralMask,
    config: &SmtConfig,
    carrier_hz: f64,
    margin_db: f64,
    min_active_fraction: f64,
) -> Result<ActivationPlan> {
    let b = config.subcarrier_spacing_hz();
    let fs = config.sample_rate_hz();
    let guard = 1.5 * b + PLANNER_RBW_GUARD * MAX_RBW_HZ;
    let candidates = config.active_subcarriers();
    let limits: Vec<Option<f64>> = candidates
        .iter()
        .map(|&k| {
            let f = config.subcarrier_freq_hz(k);
            wrap_interval(f - guard, f + guard, fs)
                .into_iter()
                .map(|(lo, hi)| min_limit_over(mask, carrier_hz + lo, carrier_hz + hi).ok())
                .try_fold(f64::INFINITY, |acc, l| l.map(|l| acc.min(l)))
        })
        .collect();
    if limits.iter().all(Option::is_none) {
        return Err(Error::Planning(format!(
            "band around {:.3} GHz lies outside the {} mask",
            carrier_hz / 1e9,
            mask.region()
        )));
    }
    let mut levels: Vec<f64> = limits.iter().flatten().copied().collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let need = ((min_active_fraction.clamp(0.0, 1.0) * candidates.len() as f64).ceil() as usize).max(1);
    for level in levels {
        let active: Vec<usize> = candidates
            .iter()
            .zip(&limits)
            .filter(|(_, l)| l.is_some_and(|l| l >= level))
            .map(|(&k, _)| k)
            .collect();
        if active.len() >= need {
            return Ok(ActivationPlan {
                region: mask.region(),
                carrier_hz,
                active,
                level_dbm_per_mhz: level - margin_db,
                margin_db,
            });
        }
    }
    Err(Error::Planning(format!("no level keeps {need} of {} subcarriers inside the mask", candidates.len())))
}
