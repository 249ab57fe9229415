//! Subband demodulation, despreading and bit decisions.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fwht::{argmax, fwht};
use crate::numerology::{SmtConfig, SpreadingMode, StreamMap};
use crate::prototype::PrototypeFilter;
use crate::rx::analysis::{OutputGrid, ToneSynthesizer};
use crate::rx::equalizer::jpow;

/// Turns equalized tone blocks into real OQAM symbol estimates.
pub struct Demodulator {
    synth: ToneSynthesizer,
    delay_slots: usize,
}

impl Demodulator {
    pub fn new(config: &SmtConfig, grid: OutputGrid, filter: &PrototypeFilter) -> Result<Self> {
        let hop = config.half_symbol_hop();
        if filter.matched_delay() % hop != 0 {
            return Err(Error::Framing(format!("matched delay {} is not a multiple of {hop}", filter.matched_delay())));
        }
        Ok(Self { synth: ToneSynthesizer::new(config, grid), delay_slots: filter.matched_delay() / hop })
    }

    /// Slots of latency between a lattice point and its output sample.
    pub fn delay_slots(&self) -> usize {
        self.delay_slots
    }

    /// `d̂_n = Re{ j^{−(k_ref+n)} z[n + delay] }` for `n < num_slots`.
    pub fn real_symbols(&self, blocks: &[Vec<Complex64>], k_ref: usize, num_slots: usize) -> Result<Vec<f64>> {
        let z = self.synth.run(blocks)?;
        if z.len() < self.delay_slots + num_slots {
            return Err(Error::Framing(format!(
                "{} subband samples cannot cover {num_slots} slots after a delay of {}",
                z.len(),
                self.delay_slots
            )));
        }
        Ok((0..num_slots).map(|n| (jpow(-((k_ref + n) as i64)) * z[n + self.delay_slots]).re).collect())
    }
}

/// Real symbol estimates per stream.
pub fn subband_demod(
    stream_tones: &[Vec<Vec<Complex64>>],
    map: &StreamMap,
    demod: &Demodulator,
    num_slots: usize,
) -> Result<Vec<Vec<f64>>> {
    if stream_tones.len() != map.num_streams() {
        return Err(Error::Dimension("one tone sequence per stream required".into()));
    }
    stream_tones.iter().zip(map.streams()).map(|(t, set)| demod.real_symbols(t, set[0], num_slots)).collect()
}

/// Symbol estimates handed to the detector.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamEstimates {
    /// One combined real sequence per stream (repetition spreading).
    Combined(Vec<Vec<f64>>),
    /// One real sequence per band of each stream (multicode):
    /// `[stream][branch][slot]`.
    Branches(Vec<Vec<Vec<f64>>>),
}

impl StreamEstimates {
    pub fn num_slots(&self) -> usize {
        match self {
            StreamEstimates::Combined(s) => s.first().map(Vec::len).unwrap_or(0),
            StreamEstimates::Branches(s) => s.first().and_then(|b| b.first()).map(Vec::len).unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftMetric {
    pub stream: usize,
    pub slot: usize,
    /// Real estimate (repetition) or winning Walsh correlation (multicode).
    pub value: f64,
    /// Sign bit (repetition) or Walsh row index (multicode).
    pub decision: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Detection {
    pub bits: Vec<u8>,
    pub soft: Vec<SoftMetric>,
}

impl Detection {
    /// Bits packed MSB first; the final byte is zero-padded.
    pub fn packed_bits(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i))))
            .collect()
    }

    pub fn write_bits(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.packed_bits()).map_err(|e| Error::io(path, e))
    }

    pub fn write_soft_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        writeln!(w, "stream,slot,value,decision").map_err(io)?;
        for s in &self.soft {
            writeln!(w, "{},{},{},{}", s.stream, s.slot, s.value, s.decision).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Hard decisions, emitted in the same order `map_bits` consumes bits.
pub fn detect(estimates: &StreamEstimates, map: &StreamMap) -> Result<Detection> {
    let slots = estimates.num_slots();
    if slots % 2 != 0 {
        return Err(Error::Framing("odd slot count".into()));
    }
    let m_count = map.num_streams();
    let mut soft = Vec::with_capacity(m_count * slots);
    // decisions[stream][slot]
    let decisions: Vec<Vec<usize>> = match (estimates, map.mode()) {
        (StreamEstimates::Combined(s), SpreadingMode::RepetitionQpsk) => {
            if s.len() != m_count {
                return Err(Error::Dimension("estimate count differs from stream count".into()));
            }
            s.iter()
                .enumerate()
                .map(|(m, seq)| {
                    seq.iter()
                        .enumerate()
                        .map(|(n, &v)| {
                            let d = usize::from(v < 0.0);
                            soft.push(SoftMetric { stream: m, slot: n, value: v, decision: d });
                            d
                        })
                        .collect()
                })
                .collect()
        }
        (StreamEstimates::Branches(s), SpreadingMode::HadamardMulticode { .. }) => {
            if s.len() != m_count {
                return Err(Error::Dimension("estimate count differs from stream count".into()));
            }
            let l = map.spread_factor();
            s.iter()
                .enumerate()
                .map(|(m, branches)| {
                    if branches.len() != l {
                        return Err(Error::Dimension(format!("{} branches for spread factor {l}", branches.len())));
                    }
                    let mut v = vec![0.0; l];
                    Ok((0..slots)
                        .map(|n| {
                            for (x, b) in v.iter_mut().zip(branches) {
                                *x = b[n];
                            }
                            fwht(&mut v);
                            let row = argmax(&v);
                            soft.push(SoftMetric { stream: m, slot: n, value: v[row], decision: row });
                            row
                        })
                        .collect())
                })
                .collect::<Result<_>>()?
        }
        _ => return Err(Error::Framing("estimate layout does not match the spreading mode".into())),
    };
    let per_slot = map.bits_per_slot();
    let mut bits = Vec::with_capacity(slots * m_count * per_slot);
    for i in 0..slots / 2 {
        for d in &decisions {
            for half in 0..2 {
                let v = d[2 * i + half];
                for b in (0..per_slot).rev() {
                    bits.push(((v >> b) & 1) as u8);
                }
            }
        }
    }
    Ok(Detection { bits, soft })
}
