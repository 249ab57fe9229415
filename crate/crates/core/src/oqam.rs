//! OQAM staggering, multicode spreading and SMT waveform synthesis.
//!
//! Real symbols `d_{k,n}` sit on a lattice of subcarriers `k` and half-symbol
//! slots `n`. The transmitted signal is
//!
//! ```text
//! s[t] = Σ_k Σ_n d_{k,n} · j^(k+n) · p[t − n·M/2] · exp(j2π k t / M)
//! ```
//!
//! Real parts of QAM symbols go to even slots and imaginary parts to odd
//! slots.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::fwht::{argmax, fwht, hadamard_sign};
use crate::numerology::{SmtConfig, SpreadingMode, StreamMap};
use crate::prototype::PrototypeFilter;

/// Real-valued OQAM symbol lattice, stored slot-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OqamFrame {
    num_subcarriers: usize,
    num_slots: usize,
    data: Vec<f64>,
}

impl OqamFrame {
    pub fn zeros(num_subcarriers: usize, num_slots: usize) -> Self {
        Self { num_subcarriers, num_slots, data: vec![0.0; num_subcarriers * num_slots] }
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn get(&self, k: usize, n: usize) -> f64 {
        self.data[n * self.num_subcarriers + k]
    }

    pub fn set(&mut self, k: usize, n: usize, value: f64) {
        self.data[n * self.num_subcarriers + k] = value;
    }

    /// All subcarrier values of slot `n`.
    pub fn slot(&self, n: usize) -> &[f64] {
        &self.data[n * self.num_subcarriers..(n + 1) * self.num_subcarriers]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|d| d * d).sum()
    }
}

/// `j^(k+n)` lattice phase.
pub fn lattice_phase(k: usize, n: usize) -> Complex64 {
    match (k + n) % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Per-stream symbol sequence handed to the stagger.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamPayload {
    /// Unit-power QAM symbols, one real part and one imaginary part per `T`.
    Qam(Vec<Complex64>),
    /// Walsh row indices for the in-phase and quadrature half of each symbol.
    Walsh(Vec<[usize; 2]>),
}

impl StreamPayload {
    pub fn len(&self) -> usize {
        match self {
            StreamPayload::Qam(s) => s.len(),
            StreamPayload::Walsh(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Spread per-stream symbols onto the OQAM lattice.
pub fn oqam_stagger(payload: &[StreamPayload], map: &StreamMap, num_subcarriers: usize) -> Result<OqamFrame> {
    if payload.len() != map.num_streams() {
        return Err(Error::Framing(format!("{} payload streams for {} data streams", payload.len(), map.num_streams())));
    }
    let symbols = payload.first().map(StreamPayload::len).unwrap_or(0);
    if payload.iter().any(|p| p.len() != symbols) {
        return Err(Error::Framing("streams carry different symbol counts".into()));
    }
    let l = map.spread_factor();
    let mut frame = OqamFrame::zeros(num_subcarriers, 2 * symbols);
    for (set, stream) in map.streams().iter().zip(payload) {
        if let Some(&k) = set.iter().find(|&&k| k >= num_subcarriers) {
            return Err(Error::config(format!("subcarrier {k} outside frame")));
        }
        match (map.mode(), stream) {
            (SpreadingMode::RepetitionQpsk, StreamPayload::Qam(syms)) => {
                for (i, s) in syms.iter().enumerate() {
                    for &k in set {
                        frame.set(k, 2 * i, s.re);
                        frame.set(k, 2 * i + 1, s.im);
                    }
                }
            }
            (SpreadingMode::HadamardMulticode { .. }, StreamPayload::Walsh(rows)) => {
                let amp = 1.0 / (l as f64).sqrt();
                for (i, pair) in rows.iter().enumerate() {
                    for (half, &row) in pair.iter().enumerate() {
                        if row >= l {
                            return Err(Error::Framing(format!("Walsh row {row} out of range for L = {l}")));
                        }
                        for (col, &k) in set.iter().enumerate() {
                            frame.set(k, 2 * i + half, amp * hadamard_sign(row, col));
                        }
                    }
                }
            }
            _ => return Err(Error::Framing("payload kind does not match the spreading mode".into())),
        }
    }
    Ok(frame)
}

/// Inverse of [`oqam_stagger`] for noiseless frames.
pub fn oqam_destagger(frame: &OqamFrame, map: &StreamMap) -> Result<Vec<StreamPayload>> {
    if frame.num_slots() % 2 != 0 {
        return Err(Error::Framing("odd slot count".into()));
    }
    let symbols = frame.num_slots() / 2;
    let out = map
        .streams()
        .iter()
        .map(|set| match map.mode() {
            SpreadingMode::RepetitionQpsk => StreamPayload::Qam(
                (0..symbols)
                    .map(|i| {
                        let avg = |n: usize| set.iter().map(|&k| frame.get(k, n)).sum::<f64>() / set.len() as f64;
                        Complex64::new(avg(2 * i), avg(2 * i + 1))
                    })
                    .collect(),
            ),
            SpreadingMode::HadamardMulticode { .. } => StreamPayload::Walsh(
                (0..symbols)
                    .map(|i| {
                        let row = |n: usize| {
                            let mut v: Vec<f64> = set.iter().map(|&k| frame.get(k, n)).collect();
                            fwht(&mut v);
                            argmax(&v)
                        };
                        [row(2 * i), row(2 * i + 1)]
                    })
                    .collect(),
            ),
        })
        .collect();
    Ok(out)
}

/// Map a bit sequence to per-stream payloads.
///
/// Bits are consumed QAM-symbol-major: for each symbol index, each stream
/// takes its in-phase bits and then its quadrature bits (MSB first for Walsh
/// row indices). A `0` bit maps to a positive QPSK component.
pub fn map_bits(bits: &[u8], map: &StreamMap) -> Result<Vec<StreamPayload>> {
    let per_symbol = 2 * map.bits_per_slot() * map.num_streams();
    if bits.len() % per_symbol != 0 {
        return Err(Error::Framing(format!("{} bits is not a multiple of {per_symbol}", bits.len())));
    }
    let symbols = bits.len() / per_symbol;
    let mut it = bits.iter().copied();
    match map.mode() {
        SpreadingMode::RepetitionQpsk => {
            let mut streams = vec![Vec::with_capacity(symbols); map.num_streams()];
            for _ in 0..symbols {
                for s in streams.iter_mut() {
                    let re = bit_level(it.next().unwrap());
                    let im = bit_level(it.next().unwrap());
                    s.push(Complex64::new(re, im));
                }
            }
            Ok(streams.into_iter().map(StreamPayload::Qam).collect())
        }
        SpreadingMode::HadamardMulticode { bits_per_symbol } => {
            let mut streams = vec![Vec::with_capacity(symbols); map.num_streams()];
            let mut take = || (0..bits_per_symbol).fold(0usize, |acc, _| (acc << 1) | it.next().unwrap() as usize);
            for _ in 0..symbols {
                for s in streams.iter_mut() {
                    let re = take();
                    let im = take();
                    s.push([re, im]);
                }
            }
            Ok(streams.into_iter().map(StreamPayload::Walsh).collect())
        }
    }
}

fn bit_level(bit: u8) -> f64 {
    if bit == 0 {
        FRAC_1_SQRT_2
    } else {
        -FRAC_1_SQRT_2
    }
}

/// Number of complex samples produced for a frame of `num_slots` slots.
pub fn synthesized_len(num_slots: usize, filter: &PrototypeFilter, config: &SmtConfig) -> usize {
    if num_slots == 0 {
        0
    } else {
        (num_slots - 1) * config.half_symbol_hop() + filter.len()
    }
}

fn check_frame(frame: &OqamFrame, config: &SmtConfig) -> Result<()> {
    if frame.num_subcarriers() != config.num_subcarriers() {
        return Err(Error::config("frame subcarrier count differs from configuration"));
    }
    for n in 0..frame.num_slots() {
        if let Some(k) = frame.slot(n).iter().enumerate().position(|(k, &d)| d != 0.0 && !config.is_active(k)) {
            return Err(Error::config(format!("inactive subcarrier {k} carries a symbol in slot {n}")));
        }
    }
    Ok(())
}

/// Polyphase synthesis: one `M`-point IDFT per slot followed by pulse
/// windowing and overlap-add at the half-symbol hop.
pub fn synthesize(frame: &OqamFrame, filter: &PrototypeFilter, config: &SmtConfig) -> Result<Vec<Complex64>> {
    check_frame(frame, config)?;
    let m = config.num_subcarriers();
    let hop = config.half_symbol_hop();
    let p = filter.taps();
    let mut out = vec![Complex64::new(0.0, 0.0); synthesized_len(frame.num_slots(), filter, config)];
    let ifft = FftPlanner::new().plan_fft_inverse(m);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    for n in 0..frame.num_slots() {
        let slot = frame.slot(n);
        if slot.iter().all(|&d| d == 0.0) {
            continue;
        }
        for (k, b) in buf.iter_mut().enumerate() {
            *b = lattice_phase(k, n) * slot[k];
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = n * hop;
        for (tau, &pt) in p.iter().enumerate() {
            let t = start + tau;
            out[t] += buf[t % m] * pt;
        }
    }
    Ok(out)
}

/// Direct evaluation of the synthesis sum. `O(K · slots · len(p))`; the
/// reference [`synthesize`] must match.
pub fn synthesize_reference(frame: &OqamFrame, filter: &PrototypeFilter, config: &SmtConfig) -> Result<Vec<Complex64>> {
    check_frame(frame, config)?;
    let m = config.num_subcarriers();
    let hop = config.half_symbol_hop();
    let p = filter.taps();
    let mut out = vec![Complex64::new(0.0, 0.0); synthesized_len(frame.num_slots(), filter, config)];
    for n in 0..frame.num_slots() {
        for k in 0..m {
            let d = frame.get(k, n);
            if d == 0.0 {
                continue;
            }
            let a = lattice_phase(k, n) * d;
            for (tau, &pt) in p.iter().enumerate() {
                let t = n * hop + tau;
                let carrier = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * ((k * t) % m) as f64 / m as f64);
                out[t] += a * carrier * pt;
            }
        }
    }
    Ok(out)
}
