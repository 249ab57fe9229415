//! Monte-Carlo BER sweeps and PSD / mask reports.
//!
//! Every trial derives its own random stream from `(seed, snr index, trial
//! index)`, so results do not depend on how trials are spread over worker
//! threads. Trials run in fixed-size batches; after each batch the sweep
//! stops once every equalizer form has collected `min_errors` bit errors or
//! the trial cap is hit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{add_noise_variance, apply_channel, draw_channel, noise_variance, ChannelProfile, ChannelRealization};
use crate::error::{Error, Result};
use crate::interference::{add_interferers, render_interferer, InterfererSpec, InterfererTruth};
use crate::mask::{check_compliance, plan_active_set, ActivationPlan, ComplianceReport, Region, SpectralMask};
use crate::numerology::{preset, LinkConfigFile, SmtConfig, SpreadingMode, StreamLayout, StreamMap};
use crate::oqam::{map_bits, oqam_stagger, synthesize, OqamFrame};
use crate::prototype::{design_prototype, PrototypeFilter};
use crate::psd::{measure_psd, PsdEstimate};
use crate::rx::{estimate_band_noise, Detection, EqualizerTapSet, NoiseSource, Receiver, StateSource, TapForm};

pub const DEFAULT_MIN_ERRORS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub link: LinkConfigFile,
    pub channel: ChannelProfile,
    pub interferers: InterfererSpec,
    /// Receiver-input SNR points, dB (signal power over noise variance).
    pub snr_db: Vec<f64>,
    pub max_trials: usize,
    pub min_errors: u64,
    /// QAM symbols per stream in each trial.
    pub symbols_per_trial: usize,
    pub forms: Vec<TapForm>,
    pub seed: u64,
    pub noise_source: StateSource,
    pub overlap_factor: usize,
    pub roll_off: f64,
    /// Trials per parallel batch; fixed so results are independent of the
    /// worker count.
    pub batch_size: usize,
}

impl ExperimentSpec {
    pub fn from_preset(name: &str) -> Result<Self> {
        let link = preset(name)?;
        Ok(Self {
            name: name.to_string(),
            link,
            channel: ChannelProfile::Awgn,
            interferers: InterfererSpec::none(),
            snr_db: vec![0.0],
            max_trials: 200,
            min_errors: DEFAULT_MIN_ERRORS,
            symbols_per_trial: 64,
            forms: vec![TapForm::Raw, TapForm::PerBand],
            seed: 1,
            noise_source: StateSource::Oracle,
            overlap_factor: 4,
            roll_off: 1.0,
            batch_size: 16,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_trials == 0 {
            return Err(Error::config("trial cap must be at least 1"));
        }
        if self.snr_db.is_empty() {
            return Err(Error::config("SNR list is empty"));
        }
        if self.snr_db.iter().any(|s| s.is_nan()) {
            return Err(Error::config("SNR list contains NaN"));
        }
        if self.interferers.count > 0 && self.snr_db.iter().any(|s| s.is_infinite()) {
            return Err(Error::config("interferer levels are relative to the noise floor; infinite SNR needs zero interferers"));
        }
        if self.forms.is_empty() {
            return Err(Error::config("no equalizer forms selected"));
        }
        if self.symbols_per_trial == 0 || self.batch_size == 0 {
            return Err(Error::config("symbols per trial and batch size must be positive"));
        }
        self.interferers.validate(self.link.bandwidth_hz)
    }
}

/// Transmitter and receiver built from a link configuration.
pub struct LinkSetup {
    pub config: SmtConfig,
    pub map: StreamMap,
    pub filter: PrototypeFilter,
    pub receiver: Receiver,
}

impl LinkSetup {
    pub fn new(link: &LinkConfigFile, overlap_factor: usize, roll_off: f64) -> Result<Self> {
        let (config, map) = link.build().map_err(|e| e.in_stage("config"))?;
        let filter = design_prototype(&config, overlap_factor, roll_off).map_err(|e| e.in_stage("prototype"))?;
        let receiver = Receiver::new(&config, &map, &filter).map_err(|e| e.in_stage("receiver"))?;
        Ok(Self { config, map, filter, receiver })
    }

    pub fn bits_per_trial(&self, symbols: usize) -> usize {
        symbols * 2 * self.map.bits_per_slot() * self.map.num_streams()
    }

    pub fn signal_power(&self) -> f64 {
        self.map.nominal_signal_power(&self.config)
    }

    pub fn transmit(&self, bits: &[u8]) -> Result<(OqamFrame, Vec<Complex64>)> {
        let payload = map_bits(bits, &self.map)?;
        let frame = oqam_stagger(&payload, &self.map, self.config.num_subcarriers())?;
        let samples = synthesize(&frame, &self.filter, &self.config)?;
        Ok((frame, samples))
    }
}

/// Random stream for one trial.
pub fn trial_rng(seed: u64, snr_index: usize, trial: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((snr_index as u64) << 40) | trial as u64);
    rng
}

/// Everything one trial produced, before error counting.
pub struct TrialRun {
    pub bits: Vec<u8>,
    pub channel: ChannelRealization,
    pub interferers: Vec<InterfererTruth>,
    pub noise_var: f64,
    pub received: Vec<Complex64>,
    pub taps: Vec<EqualizerTapSet>,
    pub detections: Vec<(TapForm, Detection)>,
}

/// Run one paired trial: every form sees the same received samples.
pub fn run_trial(setup: &LinkSetup, spec: &ExperimentSpec, snr_db: f64, rng: &mut ChaCha20Rng) -> Result<TrialRun> {
    let fs = setup.config.sample_rate_hz();
    let nbits = setup.bits_per_trial(spec.symbols_per_trial);
    let bits: Vec<u8> = (0..nbits).map(|_| rng.random_range(0..2u8)).collect();
    let channel = draw_channel(spec.channel, fs, rng);
    let (frame, tx) = setup.transmit(&bits).map_err(|e| e.in_stage("transmit"))?;
    let p_ref = setup.signal_power();
    let noise_var = noise_variance(snr_db, p_ref).map_err(|e| e.in_stage("channel"))?;
    let mut rx = apply_channel(&tx, &channel);
    let interferers = add_interferers(&mut rx, &spec.interferers, noise_var / fs, fs, rng).map_err(|e| e.in_stage("interference"))?;
    add_noise_variance(&mut rx, noise_var, rng);

    let sigma2 = match spec.noise_source {
        StateSource::Oracle => estimate_band_noise(&setup.config, NoiseSource::Oracle { noise_var, interferers: &interferers }),
        StateSource::Estimated => {
            let len = 8 * setup.config.fc_block_advance() + setup.config.fc_block_len();
            let mut seg = vec![Complex64::new(0.0, 0.0); len];
            for t in &interferers {
                for (s, v) in seg.iter_mut().zip(render_interferer(t, len, fs, rng)) {
                    *s += v;
                }
            }
            add_noise_variance(&mut seg, noise_var, rng);
            let meas = setup.receiver.analyze(&seg, len / setup.config.half_symbol_hop());
            estimate_band_noise(&setup.config, NoiseSource::Estimated { measurement: Some(&meas) })
        }
    }
    .map_err(|e| e.in_stage("noise estimation"))?;
    // Keep the state well-posed at infinite SNR.
    let floor = p_ref * 1e-12;
    let sigma2: Vec<f64> = sigma2.into_iter().map(|s| s.max(floor)).collect();
    let state = setup
        .receiver
        .oracle_state(&channel, sigma2)
        .map_err(|e| e.in_stage("channel state"))?
        .with_source(spec.noise_source);

    let slots = frame.num_slots();
    let sub = setup.receiver.analyze(&rx, slots);
    let mut taps = Vec::with_capacity(spec.forms.len());
    let mut detections = Vec::with_capacity(spec.forms.len());
    for &form in &spec.forms {
        let t = setup.receiver.taps(&state, form).map_err(|e| e.in_stage("equalizer"))?;
        let input = setup.receiver.equalizer_input(&sub, &state, form).map_err(|e| e.in_stage("equalizer"))?;
        let det = setup.receiver.detect(&input, &t, slots).map_err(|e| e.in_stage("detection"))?;
        taps.push(t);
        detections.push((form, det));
    }
    Ok(TrialRun { bits, channel, interferers, noise_var, received: rx, taps, detections })
}

fn count_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64 + a.len().abs_diff(b.len()) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub form: TapForm,
    pub bits: u64,
    pub errors: u64,
    pub trials: usize,
    /// Fewer than the target error count was observed.
    pub censored: bool,
}

impl BerPoint {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }

    /// Wilson score 95% interval.
    pub fn ci95(&self) -> (f64, f64) {
        binomial_ci95(self.errors, self.bits)
    }
}

pub fn binomial_ci95(errors: u64, bits: u64) -> (f64, f64) {
    if bits == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = bits as f64;
    let p = errors as f64 / n;
    let den = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / den;
    let lo = if errors == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if errors == bits { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerTable {
    pub seed: u64,
    pub points: Vec<BerPoint>,
}

impl BerTable {
    pub fn point(&self, snr_db: f64, form: TapForm) -> Option<&BerPoint> {
        self.points.iter().find(|p| p.snr_db == snr_db && p.form == form)
    }

    /// CSV body: `snr_db,form,ber,bits,errors,seed`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("snr_db,form,ber,bits,errors,seed\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{},{},{}\n", p.snr_db, p.form, p.ber(), p.bits, p.errors, self.seed));
        }
        s
    }

    /// Parse a CSV written by [`BerTable::to_csv`]. Trial counts and
    /// censoring are not part of the CSV and are reconstructed as unknown.
    pub fn from_csv(text: &str, min_errors: u64) -> Result<Self> {
        let parse_err = |m: String| Error::Parse { path: PathBuf::from("<ber csv>"), message: m };
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut seed = None;
        let mut points = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            let get = |i: usize| rec.get(i).ok_or_else(|| parse_err(format!("missing column {i}")));
            let snr_db: f64 = get(0)?.parse().map_err(|e| parse_err(format!("{e}")))?;
            let form: TapForm = get(1)?.parse()?;
            let bits: u64 = get(3)?.parse().map_err(|e| parse_err(format!("{e}")))?;
            let errors: u64 = get(4)?.parse().map_err(|e| parse_err(format!("{e}")))?;
            let s: u64 = get(5)?.parse().map_err(|e| parse_err(format!("{e}")))?;
            seed = Some(s);
            points.push(BerPoint { snr_db, form, bits, errors, trials: 0, censored: errors < min_errors });
        }
        Ok(Self { seed: seed.unwrap_or(0), points })
    }
}

/// Sweep all SNR points. Runs on the current rayon pool.
pub fn run_ber_sweep(spec: &ExperimentSpec) -> Result<BerTable> {
    spec.validate()?;
    let setup = LinkSetup::new(&spec.link, spec.overlap_factor, spec.roll_off)?;
    let mut points = Vec::new();
    for (si, &snr) in spec.snr_db.iter().enumerate() {
        let nf = spec.forms.len();
        let mut errors = vec![0u64; nf];
        let mut bits = vec![0u64; nf];
        let mut trials = 0;
        while trials < spec.max_trials && errors.iter().any(|&e| e < spec.min_errors) {
            let end = (trials + spec.batch_size).min(spec.max_trials);
            let batch: Vec<Vec<(u64, u64)>> = (trials..end)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(spec.seed, si, t);
                    let run = run_trial(&setup, spec, snr, &mut rng)?;
                    Ok(run
                        .detections
                        .iter()
                        .map(|(_, d)| (count_errors(&run.bits, &d.bits), run.bits.len() as u64))
                        .collect())
                })
                .collect::<Result<_>>()?;
            for per_form in batch {
                for (i, (e, b)) in per_form.into_iter().enumerate() {
                    errors[i] += e;
                    bits[i] += b;
                }
            }
            trials = end;
        }
        for (i, &form) in spec.forms.iter().enumerate() {
            points.push(BerPoint {
                snr_db: snr,
                form,
                bits: bits[i],
                errors: errors[i],
                trials,
                censored: errors[i] < spec.min_errors,
            });
        }
    }
    Ok(BerTable { seed: spec.seed, points })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub wall_time_s: f64,
    pub threads: usize,
    pub spec: &'a ExperimentSpec,
    pub censored: Vec<(f64, TapForm)>,
}

/// Write `ber.csv` and `manifest.json` into `dir`.
pub fn emit_outputs(table: &BerTable, spec: &ExperimentSpec, wall_time_s: f64, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("ber.csv");
    std::fs::write(&csv_path, table.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: spec.seed,
        wall_time_s,
        threads: rayon::current_num_threads(),
        spec,
        censored: table.points.iter().filter(|p| p.censored).map(|p| (p.snr_db, p.form)).collect(),
    };
    let man_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse { path: man_path.clone(), message: e.to_string() })?;
    std::fs::write(&man_path, json).map_err(|e| Error::io(&man_path, e))?;
    Ok((csv_path, man_path))
}

/// Write the artifacts of one trial: received samples, channel taps,
/// interferer ground truth, equalizer taps and detected bits per form.
pub fn emit_trial(run: &TrialRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::samples::write_samples(&run.received, &dir.join("received.f32"))?;
    run.channel.save_csv(&dir.join("channel_taps.csv"))?;
    crate::interference::write_ground_truth_csv(&run.interferers, &dir.join("interferers.csv"))?;
    std::fs::write(dir.join("tx_bits.bin"), pack_bits(&run.bits)).map_err(|e| Error::io(dir.join("tx_bits.bin"), e))?;
    for (t, (form, det)) in run.taps.iter().zip(&run.detections) {
        t.write_csv(&dir.join(format!("eq_taps_{form}.csv")))?;
        det.write_bits(&dir.join(format!("bits_{form}.bin")))?;
        det.write_soft_csv(&dir.join(format!("soft_{form}.csv")))?;
    }
    Ok(())
}

fn pack_bits(bits: &[u8]) -> Vec<u8> {
    Detection { bits: bits.to_vec(), soft: Vec::new() }.packed_bits()
}

/// Run a sweep and write its outputs.
pub fn run_and_emit(spec: &ExperimentSpec, dir: &Path) -> Result<BerTable> {
    let start = Instant::now();
    let table = run_ber_sweep(spec)?;
    emit_outputs(&table, spec, start.elapsed().as_secs_f64(), dir)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdSpec {
    pub link: LinkConfigFile,
    pub region: Region,
    pub carrier_hz: f64,
    pub margin_db: f64,
    /// Plan the active set from the mask instead of using the link's own.
    pub plan: bool,
    pub min_active_fraction: f64,
    pub backoff_db: f64,
    pub resolution_bw_hz: f64,
    pub symbols: usize,
    pub seed: u64,
    pub overlap_factor: usize,
    pub roll_off: f64,
}

impl PsdSpec {
    pub fn new(link: LinkConfigFile, region: Region) -> Self {
        Self {
            link,
            region,
            carrier_hz: region.default_carrier_hz(),
            margin_db: 1.0,
            plan: true,
            min_active_fraction: crate::mask::DEFAULT_MIN_ACTIVE_FRACTION,
            backoff_db: crate::mask::MEASUREMENT_BACKOFF_DB,
            resolution_bw_hz: 1e6,
            symbols: 2000,
            seed: 1,
            overlap_factor: 4,
            roll_off: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsdReport {
    pub psd: PsdEstimate,
    pub plan: Option<ActivationPlan>,
    pub compliance: ComplianceReport,
    /// Max − min PSD over the interior of the active region, dB.
    pub ripple_db: Option<f64>,
    pub active: Vec<usize>,
    pub tx_level_dbm_per_mhz: f64,
}

/// Synthesize independent symbols on every active subcarrier at the
/// planned level, measure the PSD and check it against the mask.
pub fn run_psd_report(spec: &PsdSpec) -> Result<PsdReport> {
    let (base, _) = spec.link.build().map_err(|e| e.in_stage("config"))?;
    let mask = SpectralMask::builtin(spec.region);
    let (config, plan, level) = if spec.plan {
        let plan = plan_active_set(&mask, &base, spec.carrier_hz, spec.margin_db, spec.min_active_fraction)?;
        let cfg = base.with_active(plan.active.clone())?;
        let level = plan.level_dbm_per_mhz;
        (cfg, Some(plan), level)
    } else {
        let worst = base
            .active_subcarriers()
            .iter()
            .map(|&k| crate::mask::mask_limit(&mask, spec.carrier_hz + base.subcarrier_freq_hz(k)))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        (base.clone(), None, worst - spec.margin_db)
    };
    let tx_level = level - spec.backoff_db;
    let filter = design_prototype(&config, spec.overlap_factor, spec.roll_off).map_err(|e| e.in_stage("prototype"))?;
    let samples = psd_probe_signal(&config, &filter, spec.symbols, tx_level, spec.seed)?;
    let fs = config.sample_rate_hz();
    let min_len = 8 * (fs / spec.resolution_bw_hz).round().max(2.0) as usize;
    let samples = if samples.len() < min_len {
        let mut s = samples;
        s.resize(min_len, Complex64::new(0.0, 0.0));
        s
    } else {
        samples
    };
    let psd = measure_psd(&samples, fs, spec.resolution_bw_hz).map_err(|e| e.in_stage("psd"))?;
    let compliance = check_compliance(&psd, spec.carrier_hz, &mask, spec.margin_db).map_err(|e| e.in_stage("compliance"))?;
    let ripple_db = in_band_ripple_db(&psd, &config);
    Ok(PsdReport { psd, plan, compliance, ripple_db, active: config.active_subcarriers().to_vec(), tx_level_dbm_per_mhz: tx_level })
}

/// Random `±1/√2` symbols on every active subcarrier, scaled so the
/// in-band PSD is `level_dbm_per_mhz`.
pub fn psd_probe_signal(config: &SmtConfig, filter: &PrototypeFilter, symbols: usize, level_dbm_per_mhz: f64, seed: u64) -> Result<Vec<Complex64>> {
    if symbols == 0 {
        return Ok(Vec::new());
    }
    let map = StreamMap::partition(config, config.active_subcarriers().len(), StreamLayout::Interleaved, SpreadingMode::RepetitionQpsk)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let bits: Vec<u8> = (0..symbols * 2 * map.num_streams()).map(|_| rng.random_range(0..2u8)).collect();
    let payload = map_bits(&bits, &map)?;
    let frame = oqam_stagger(&payload, &map, config.num_subcarriers())?;
    let s = synthesize(&frame, filter, config)?;
    // Unit-scale in-band density is 2·E/f_s with E = 1/2 per real symbol.
    let density = crate::psd::dbm_per_mhz_to_density(level_dbm_per_mhz);
    let amp = (density * config.sample_rate_hz()).sqrt();
    Ok(s.into_iter().map(|v| v * amp).collect())
}

/// Ripple over PSD bins whose nearest subcarrier and its two neighbours on
/// each side are active.
pub fn in_band_ripple_db(psd: &PsdEstimate, config: &SmtConfig) -> Option<f64> {
    let b = config.subcarrier_spacing_hz();
    let m = config.num_subcarriers() as isize;
    let vals: Vec<f64> = psd
        .freqs_hz
        .iter()
        .zip(psd.dbm_per_mhz())
        .filter(|(f, _)| {
            let k = (*f / b).round() as isize;
            (-2..=2).all(|d| config.is_active((k + d).rem_euclid(m) as usize))
        })
        .map(|(_, p)| p)
        .collect();
    if vals.is_empty() {
        return None;
    }
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(max - min)
}

/// Write `psd.csv` (RF frequencies), `compliance.csv` and `compliance.txt`.
pub fn emit_psd_report(report: &PsdReport, carrier_hz: f64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report.psd.write_csv_offset(&dir.join("psd.csv"), carrier_hz)?;
    report.compliance.write_csv(&dir.join("compliance.csv"))?;
    let mut text = report.compliance.summary();
    text.push('\n');
    text.push_str(&format!("active subcarriers: {}\n", report.active.len()));
    text.push_str(&format!("transmit level: {:.2} dBm/MHz\n", report.tx_level_dbm_per_mhz));
    if let Some(r) = report.ripple_db {
        text.push_str(&format!("in-band ripple: {r:.3} dB\n"));
    }
    let p = dir.join("compliance.txt");
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
}
