//! C ABI for the fbmc-uwb simulator.
//!
//! Objects are opaque handles created by `*_new`/`*_from_*` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`FbmcStatus`]; the message of the last failure on the calling thread is
//! available from [`fbmc_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fbmc_uwb::channel::ChannelRealization;
use fbmc_uwb::harness::{run_ber_sweep, BerTable, ExperimentSpec, LinkSetup};
use fbmc_uwb::interference::InterfererSpec;
use fbmc_uwb::numerology::{preset, LinkConfigFile};
use fbmc_uwb::rx::TapForm;
use fbmc_uwb::Error;
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Config = 10,
    Domain = 11,
    Design = 12,
    Framing = 13,
    Estimation = 14,
    Dimension = 15,
    Coverage = 16,
    Measurement = 17,
    Planning = 18,
    Io = 19,
    Parse = 20,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbmcForm {
    Joint = 0,
    JointWhitened = 1,
    PerBand = 2,
}

impl From<FbmcForm> for TapForm {
    fn from(f: FbmcForm) -> Self {
        match f {
            FbmcForm::Joint => TapForm::Raw,
            FbmcForm::JointWhitened => TapForm::Whitened,
            FbmcForm::PerBand => TapForm::PerBand,
        }
    }
}

impl From<TapForm> for FbmcForm {
    fn from(f: TapForm) -> Self {
        match f {
            TapForm::Raw => FbmcForm::Joint,
            TapForm::Whitened => FbmcForm::JointWhitened,
            TapForm::PerBand => FbmcForm::PerBand,
        }
    }
}

/// One row of a BER table.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmcBerPoint {
    pub snr_db: f64,
    pub form: FbmcForm,
    pub ber: f64,
    pub bits: u64,
    pub errors: u64,
    /// Nonzero when fewer than the target error count was observed.
    pub censored: u8,
}

/// Sweep parameters; fill with [`fbmc_sweep_params_default`] first.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FbmcSweepParams {
    pub seed: u64,
    pub max_trials: usize,
    pub min_errors: u64,
    pub symbols_per_trial: usize,
    /// 0 = AWGN, 1 = LOS, 2 = NLOS.
    pub channel: u32,
    pub interferers: usize,
    pub interferer_bandwidth_hz: f64,
    pub interferer_level_db: f64,
}

/// Opaque transmitter/receiver pair.
pub struct FbmcLink {
    setup: LinkSetup,
}

/// Opaque BER table.
pub struct FbmcBerTable {
    table: BerTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FbmcStatus {
    match e {
        Error::Domain(_) => FbmcStatus::Domain,
        Error::Config(_) => FbmcStatus::Config,
        Error::Design { .. } => FbmcStatus::Design,
        Error::Framing(_) => FbmcStatus::Framing,
        Error::Estimation(_) => FbmcStatus::Estimation,
        Error::Dimension(_) => FbmcStatus::Dimension,
        Error::Coverage { .. } => FbmcStatus::Coverage,
        Error::Measurement(_) => FbmcStatus::Measurement,
        Error::Planning(_) => FbmcStatus::Planning,
        Error::Stage { source, .. } => status_of(source),
        Error::Io { .. } => FbmcStatus::Io,
        Error::Parse { .. } => FbmcStatus::Parse,
    }
}

enum Fail {
    Status(FbmcStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FbmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FbmcStatus::Ok,
        Ok(Err(Fail::Status(s, m))) => {
            set_error(m);
            s
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FbmcStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(FbmcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail::Status(FbmcStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fbmc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn fbmc_status_str(status: FbmcStatus) -> *const c_char {
    let s: &'static CStr = match status {
        FbmcStatus::Ok => c"ok",
        FbmcStatus::NullPointer => c"null pointer",
        FbmcStatus::InvalidArgument => c"invalid argument",
        FbmcStatus::BufferTooSmall => c"buffer too small",
        FbmcStatus::Config => c"configuration error",
        FbmcStatus::Domain => c"domain error",
        FbmcStatus::Design => c"prototype design failed",
        FbmcStatus::Framing => c"framing error",
        FbmcStatus::Estimation => c"estimation error",
        FbmcStatus::Dimension => c"dimension mismatch",
        FbmcStatus::Coverage => c"outside mask coverage",
        FbmcStatus::Measurement => c"measurement error",
        FbmcStatus::Planning => c"planning error",
        FbmcStatus::Io => c"I/O error",
        FbmcStatus::Parse => c"parse error",
        FbmcStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

fn new_link(file: &LinkConfigFile, out: *mut *mut FbmcLink) -> Result<(), Fail> {
    let setup = LinkSetup::new(file, 4, 1.0)?;
    // SAFETY: caller checked `out` is non-null.
    unsafe { *out = Box::into_raw(Box::new(FbmcLink { setup })) };
    Ok(())
}

/// Build a link from a shipped preset name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbmc_link_from_preset(name: *const c_char, out: *mut *mut FbmcLink) -> FbmcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let file = preset(str_arg(name, "name")?)?;
        new_link(&file, out)
    })
}

/// Build a link from configuration TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbmc_link_from_toml(toml: *const c_char, out: *mut *mut FbmcLink) -> FbmcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let file = LinkConfigFile::parse(str_arg(toml, "toml")?).map_err(|m| Fail::Core(Error::Config(m)))?;
        new_link(&file, out)
    })
}

/// # Safety
/// `link` must come from a `fbmc_link_from_*` call and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fbmc_link_free(link: *mut FbmcLink) {
    if !link.is_null() {
        drop(Box::from_raw(link));
    }
}

/// Number of subcarriers, or 0 for a null handle.
///
/// # Safety
/// `link` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fbmc_link_num_subcarriers(link: *const FbmcLink) -> usize {
    link.as_ref().map_or(0, |l| l.setup.config.num_subcarriers())
}

/// Payload bits carried by `symbols` QAM symbols per stream.
///
/// # Safety
/// `link` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fbmc_link_bits_per_frame(link: *const FbmcLink, symbols: usize) -> usize {
    link.as_ref().map_or(0, |l| l.setup.bits_per_trial(symbols))
}

/// Sample rate in Hz, or 0 for a null handle.
///
/// # Safety
/// `link` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fbmc_link_sample_rate(link: *const FbmcLink) -> f64 {
    link.as_ref().map_or(0.0, |l| l.setup.config.sample_rate_hz())
}

/// Modulate `nbits` bits (one bit per byte, 0 or 1) into interleaved I/Q
/// `float` samples. `*out_len` receives the number of complex samples;
/// when `out_iq` is null or too small only the length is reported.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fbmc_link_transmit(
    link: *const FbmcLink,
    bits: *const u8,
    nbits: usize,
    out_iq: *mut f32,
    capacity: usize,
    out_len: *mut usize,
) -> FbmcStatus {
    guard(|| {
        let link = link.as_ref().ok_or_else(|| null("link"))?;
        if bits.is_null() || out_len.is_null() {
            return Err(null("bits/out_len"));
        }
        let bits = std::slice::from_raw_parts(bits, nbits);
        if bits.iter().any(|&b| b > 1) {
            return Err(invalid("bits must be 0 or 1"));
        }
        let (_, s) = link.setup.transmit(bits)?;
        *out_len = s.len();
        if out_iq.is_null() || capacity < s.len() {
            return Err(Fail::Status(FbmcStatus::BufferTooSmall, format!("{} samples needed", s.len())));
        }
        let out = std::slice::from_raw_parts_mut(out_iq, 2 * s.len());
        for (o, v) in out.chunks_exact_mut(2).zip(&s) {
            o[0] = v.re as f32;
            o[1] = v.im as f32;
        }
        Ok(())
    })
}

/// Demodulate `num_samples` interleaved I/Q samples carrying `symbols` QAM
/// symbols per stream over an ideal channel with per-sample noise variance
/// `noise_var`. Writes `fbmc_link_bits_per_frame(link, symbols)` bits.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fbmc_link_receive(
    link: *const FbmcLink,
    iq: *const f32,
    num_samples: usize,
    symbols: usize,
    noise_var: f64,
    form: FbmcForm,
    out_bits: *mut u8,
    capacity: usize,
) -> FbmcStatus {
    guard(|| {
        let link = link.as_ref().ok_or_else(|| null("link"))?;
        if iq.is_null() || out_bits.is_null() {
            return Err(null("iq/out_bits"));
        }
        if !(noise_var >= 0.0) || symbols == 0 {
            return Err(invalid("need symbols > 0 and noise_var >= 0"));
        }
        let setup = &link.setup;
        let need = setup.bits_per_trial(symbols);
        if capacity < need {
            return Err(Fail::Status(FbmcStatus::BufferTooSmall, format!("{need} bits needed")));
        }
        let raw = std::slice::from_raw_parts(iq, 2 * num_samples);
        let samples: Vec<Complex64> = raw.chunks_exact(2).map(|c| Complex64::new(c[0] as f64, c[1] as f64)).collect();
        let slots = 2 * symbols;
        let frame = setup.receiver.analyze(&samples, slots);
        let fs = setup.config.sample_rate_hz();
        let floor = setup.signal_power() * 1e-12;
        let sigma2 = vec![noise_var.max(floor); setup.config.active_subcarriers().len()];
        let state = setup.receiver.oracle_state(&ChannelRealization::identity(fs), sigma2)?;
        let taps = setup.receiver.taps(&state, form.into())?;
        let input = setup.receiver.equalizer_input(&frame, &state, form.into())?;
        let det = setup.receiver.detect(&input, &taps, slots)?;
        std::slice::from_raw_parts_mut(out_bits, need).copy_from_slice(&det.bits[..need]);
        Ok(())
    })
}

/// Defaults matching the CLI `ber` subcommand.
#[no_mangle]
pub extern "C" fn fbmc_sweep_params_default() -> FbmcSweepParams {
    FbmcSweepParams {
        seed: 1,
        max_trials: 200,
        min_errors: 100,
        symbols_per_trial: 64,
        channel: 2,
        interferers: 0,
        interferer_bandwidth_hz: 20e6,
        interferer_level_db: 30.0,
    }
}

/// Run a BER sweep of the joint and per-band equalizers on a preset.
///
/// # Safety
/// `preset_name` must be a NUL-terminated string, `snr_db` valid for
/// `num_snr` values, `params` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fbmc_ber_sweep(
    preset_name: *const c_char,
    snr_db: *const f64,
    num_snr: usize,
    params: *const FbmcSweepParams,
    out: *mut *mut FbmcBerTable,
) -> FbmcStatus {
    guard(|| {
        if out.is_null() || params.is_null() || snr_db.is_null() {
            return Err(null("out/params/snr_db"));
        }
        *out = ptr::null_mut();
        let p = *params;
        let mut spec = ExperimentSpec::from_preset(str_arg(preset_name, "preset_name")?)?;
        spec.snr_db = std::slice::from_raw_parts(snr_db, num_snr).to_vec();
        spec.seed = p.seed;
        spec.max_trials = p.max_trials;
        spec.min_errors = p.min_errors;
        spec.symbols_per_trial = p.symbols_per_trial;
        spec.channel = match p.channel {
            0 => fbmc_uwb::channel::ChannelProfile::Awgn,
            1 => fbmc_uwb::channel::ChannelProfile::Los,
            2 => fbmc_uwb::channel::ChannelProfile::Nlos,
            c => return Err(invalid(format!("unknown channel profile {c}"))),
        };
        spec.interferers = InterfererSpec {
            count: p.interferers,
            bandwidth_hz: p.interferer_bandwidth_hz,
            psd_above_noise_db: [p.interferer_level_db, p.interferer_level_db],
        };
        let table = run_ber_sweep(&spec)?;
        *out = Box::into_raw(Box::new(FbmcBerTable { table }));
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fbmc_ber_table_len(table: *const FbmcBerTable) -> usize {
    table.as_ref().map_or(0, |t| t.table.points.len())
}

/// # Safety
/// `table` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbmc_ber_table_get(table: *const FbmcBerTable, index: usize, out: *mut FbmcBerPoint) -> FbmcStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = t.table.points.get(index).ok_or_else(|| invalid(format!("index {index} out of range")))?;
        *out = FbmcBerPoint { snr_db: p.snr_db, form: p.form.into(), ber: p.ber(), bits: p.bits, errors: p.errors, censored: p.censored as u8 };
        Ok(())
    })
}

/// Write the table as CSV (`snr_db,form,ber,bits,errors,seed`).
///
/// # Safety
/// `table` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fbmc_ber_table_write_csv(table: *const FbmcBerTable, path: *const c_char) -> FbmcStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        let path = Path::new(str_arg(path, "path")?);
        std::fs::write(path, t.table.to_csv()).map_err(|e| Fail::Core(Error::io(path, e)))
    })
}

/// # Safety
/// `table` must come from [`fbmc_ber_sweep`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fbmc_ber_table_free(table: *mut FbmcBerTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_handles_are_rejected() {
        unsafe {
            assert_eq!(fbmc_link_from_preset(c"desk-los".as_ptr(), ptr::null_mut()), FbmcStatus::NullPointer);
            let mut l = ptr::null_mut();
            assert_eq!(fbmc_link_from_preset(ptr::null(), &mut l), FbmcStatus::NullPointer);
            assert!(l.is_null());
            assert_eq!(fbmc_link_num_subcarriers(ptr::null()), 0);
            fbmc_link_free(ptr::null_mut());
            fbmc_ber_table_free(ptr::null_mut());
        }
    }

    #[test]
    fn unknown_preset_sets_message() {
        let mut l = ptr::null_mut();
        let s = unsafe { fbmc_link_from_preset(c"nope".as_ptr(), &mut l) };
        assert_eq!(s, FbmcStatus::Config);
        let msg = unsafe { CStr::from_ptr(fbmc_last_error()) }.to_str().unwrap();
        assert!(msg.contains("nope"), "{msg}");
    }

    #[test]
    fn status_strings_are_static() {
        let s = unsafe { CStr::from_ptr(fbmc_status_str(FbmcStatus::Framing)) };
        assert_eq!(s.to_str().unwrap(), "framing error");
    }

    #[test]
    fn stage_errors_map_to_inner_status() {
        assert_eq!(status_of(&Error::Framing("x".into()).in_stage("rx")), FbmcStatus::Framing);
    }
}
