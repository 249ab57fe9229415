//! System numerology, stream partitioning and rate/gain arithmetic.
//!
//! A total bandwidth `W` is split into `M` subcarrier bands of width
//! `B = W / M`. Complex baseband runs at the critical rate `W`, so one QAM
//! symbol period `T = 1 / B` spans exactly `M` samples and the OQAM lattice
//! advances in half-symbol hops of `M / 2` samples.
//!
//! Active subcarriers are partitioned into parallel data streams. Each
//! stream is spread over `L` subcarriers, for a processing gain of
//! `10 log10 L` dB.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global numerology shared by every stage of the link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmtConfig {
    total_bandwidth_hz: f64,
    num_subcarriers: usize,
    fc_block_len: usize,
    fc_overlap_len: usize,
    active: Vec<usize>,
}

impl SmtConfig {
    /// Build a configuration with every subcarrier active and the default
    /// fast-convolution sizing (`N = 16 M`, `N_o = N / 2`).
    pub fn new(total_bandwidth_hz: f64, num_subcarriers: usize) -> Result<Self> {
        let n = 16 * num_subcarriers;
        Self::with_blocks(total_bandwidth_hz, num_subcarriers, n, n / 2, (0..num_subcarriers).collect())
    }

    pub fn with_blocks(
        total_bandwidth_hz: f64,
        num_subcarriers: usize,
        fc_block_len: usize,
        fc_overlap_len: usize,
        mut active: Vec<usize>,
    ) -> Result<Self> {
        if !(total_bandwidth_hz.is_finite() && total_bandwidth_hz > 0.0) {
            return Err(Error::config(format!("bandwidth must be positive, got {total_bandwidth_hz}")));
        }
        let m = num_subcarriers;
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::config(format!("subcarrier count must be a power of two >= 2, got {m}")));
        }
        let n = fc_block_len;
        if !n.is_power_of_two() || n < 2 * m {
            return Err(Error::config(format!(
                "block length {n} must be a power of two and at least twice the subcarrier count {m}"
            )));
        }
        let hop = m / 2;
        if fc_overlap_len == 0 || fc_overlap_len >= n {
            return Err(Error::config(format!("overlap {fc_overlap_len} must lie in (0, {n})")));
        }
        if (n - fc_overlap_len) % hop != 0 {
            return Err(Error::config(format!(
                "block advance {} is not a multiple of the subband hop {hop}",
                n - fc_overlap_len
            )));
        }
        active.sort_unstable();
        active.dedup();
        if active.is_empty() {
            return Err(Error::config("no active subcarriers"));
        }
        if let Some(&k) = active.iter().find(|&&k| k >= m) {
            return Err(Error::config(format!("active subcarrier {k} outside [0, {m})")));
        }
        Ok(Self { total_bandwidth_hz, num_subcarriers: m, fc_block_len: n, fc_overlap_len, active })
    }

    /// Same numerology with a different active set.
    pub fn with_active(&self, active: Vec<usize>) -> Result<Self> {
        Self::with_blocks(self.total_bandwidth_hz, self.num_subcarriers, self.fc_block_len, self.fc_overlap_len, active)
    }

    pub fn total_bandwidth_hz(&self) -> f64 {
        self.total_bandwidth_hz
    }

    /// Complex baseband sample rate; equal to `W` at critical sampling.
    pub fn sample_rate_hz(&self) -> f64 {
        self.total_bandwidth_hz
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn subcarrier_spacing_hz(&self) -> f64 {
        self.total_bandwidth_hz / self.num_subcarriers as f64
    }

    pub fn qam_symbol_period_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz()
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.num_subcarriers
    }

    /// Samples between adjacent OQAM lattice points (`T / 2`).
    pub fn half_symbol_hop(&self) -> usize {
        self.num_subcarriers / 2
    }

    pub fn fc_block_len(&self) -> usize {
        self.fc_block_len
    }

    pub fn fc_overlap_len(&self) -> usize {
        self.fc_overlap_len
    }

    /// Fresh input samples consumed per overlap-save block.
    pub fn fc_block_advance(&self) -> usize {
        self.fc_block_len - self.fc_overlap_len
    }

    /// DFT bins per subcarrier band (`2N / M`): each band spans `2B`.
    pub fn bins_per_band(&self) -> usize {
        2 * self.fc_block_len / self.num_subcarriers
    }

    /// DFT bins per subcarrier spacing `B`.
    pub fn bins_per_spacing(&self) -> usize {
        self.fc_block_len / self.num_subcarriers
    }

    pub fn active_subcarriers(&self) -> &[usize] {
        &self.active
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.active.binary_search(&k).is_ok()
    }

    /// Baseband centre frequency of subcarrier `k`, wrapped into `[-W/2, W/2)`.
    pub fn subcarrier_freq_hz(&self, k: usize) -> f64 {
        let m = self.num_subcarriers as i64;
        let mut k = k as i64 % m;
        if k >= m / 2 {
            k -= m;
        }
        k as f64 * self.subcarrier_spacing_hz()
    }
}

/// How data symbols are spread over a stream's subcarriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpreadingMode {
    /// Each OQAM real symbol is repeated on every subcarrier of the stream.
    RepetitionQpsk,
    /// `bits_per_symbol = log2 L` bits pick one Walsh-Hadamard row per
    /// half-symbol slot.
    HadamardMulticode { bits_per_symbol: u32 },
}

/// Ordering of active subcarriers into streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamLayout {
    /// Stream `m` owns the active subcarriers at positions `≡ m mod K`.
    #[default]
    Interleaved,
    /// Stream `m` owns a contiguous run of active subcarriers.
    Contiguous,
}

/// Partition of the active subcarriers into equally sized data streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMap {
    streams: Vec<Vec<usize>>,
    mode: SpreadingMode,
}

impl StreamMap {
    pub fn new(streams: Vec<Vec<usize>>, mode: SpreadingMode) -> Result<Self> {
        let l = streams.first().map(Vec::len).unwrap_or(0);
        if l == 0 {
            return Err(Error::config("stream map needs at least one non-empty stream"));
        }
        if streams.iter().any(|s| s.len() != l) {
            return Err(Error::config("all streams must have the same spread factor"));
        }
        if let SpreadingMode::HadamardMulticode { bits_per_symbol } = mode {
            if !l.is_power_of_two() || 1usize << bits_per_symbol != l {
                return Err(Error::config(format!(
                    "Hadamard multicode needs L = 2^bits, got L = {l}, bits = {bits_per_symbol}"
                )));
            }
        }
        let mut seen: Vec<usize> = streams.iter().flatten().copied().collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("streams overlap"));
        }
        Ok(Self { streams, mode })
    }

    pub fn partition(
        config: &SmtConfig,
        num_streams: usize,
        layout: StreamLayout,
        mode: SpreadingMode,
    ) -> Result<Self> {
        let active = config.active_subcarriers();
        if num_streams == 0 || active.len() % num_streams != 0 {
            return Err(Error::config(format!(
                "{num_streams} streams do not divide {} active subcarriers",
                active.len()
            )));
        }
        let l = active.len() / num_streams;
        let streams = (0..num_streams)
            .map(|m| match layout {
                StreamLayout::Interleaved => active.iter().skip(m).step_by(num_streams).copied().collect(),
                StreamLayout::Contiguous => active[m * l..(m + 1) * l].to_vec(),
            })
            .collect();
        Self::new(streams, mode)
    }

    /// Hadamard multicode over a single stream with every active subcarrier.
    pub fn multicode(config: &SmtConfig, num_streams: usize) -> Result<Self> {
        let l = config.active_subcarriers().len() / num_streams.max(1);
        if !l.is_power_of_two() {
            return Err(Error::config(format!("spread factor {l} is not a power of two")));
        }
        Self::partition(
            config,
            num_streams,
            StreamLayout::Interleaved,
            SpreadingMode::HadamardMulticode { bits_per_symbol: l.trailing_zeros() },
        )
    }

    pub fn streams(&self) -> &[Vec<usize>] {
        &self.streams
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn spread_factor(&self) -> usize {
        self.streams[0].len()
    }

    pub fn mode(&self) -> SpreadingMode {
        self.mode
    }

    /// Bits carried by one stream in one half-symbol slot.
    pub fn bits_per_slot(&self) -> usize {
        match self.mode {
            SpreadingMode::RepetitionQpsk => 1,
            SpreadingMode::HadamardMulticode { bits_per_symbol } => bits_per_symbol as usize,
        }
    }

    /// Mean squared real symbol value placed on each subcarrier.
    pub fn symbol_energy_per_band(&self) -> f64 {
        match self.mode {
            SpreadingMode::RepetitionQpsk => 0.5,
            SpreadingMode::HadamardMulticode { .. } => 1.0 / self.spread_factor() as f64,
        }
    }

    /// Check that the map covers exactly the active set of `config`.
    pub fn validate_against(&self, config: &SmtConfig) -> Result<()> {
        let mut all: Vec<usize> = self.streams.iter().flatten().copied().collect();
        all.sort_unstable();
        if all != config.active_subcarriers() {
            return Err(Error::config("stream map does not cover the active subcarrier set"));
        }
        Ok(())
    }

    /// Average transmit power per complex sample for unit-energy pulses.
    pub fn nominal_signal_power(&self, config: &SmtConfig) -> f64 {
        let bands = self.streams.len() * self.spread_factor();
        2.0 * self.symbol_energy_per_band() * bands as f64 / config.num_subcarriers() as f64
    }
}

/// Processing gain of spreading over `spread_factor` subcarriers, in dB.
pub fn processing_gain_db(spread_factor: usize) -> Result<f64> {
    if spread_factor < 1 {
        return Err(Error::domain("spread factor must be at least 1"));
    }
    Ok(10.0 * (spread_factor as f64).log10())
}

/// Uncoded bit rate of a configuration in bits per second.
pub fn raw_bit_rate_bps(config: &SmtConfig, map: &StreamMap) -> Result<f64> {
    map.validate_against(config)?;
    let bits_per_t = match map.mode() {
        SpreadingMode::RepetitionQpsk => 2.0,
        SpreadingMode::HadamardMulticode { bits_per_symbol } => 2.0 * bits_per_symbol as f64,
    };
    Ok(map.num_streams() as f64 * bits_per_t / config.qam_symbol_period_s())
}

/// Interleaved repetition partition of the active set into `num_streams`.
pub fn partition_streams(config: &SmtConfig, num_streams: usize) -> Result<StreamMap> {
    StreamMap::partition(config, num_streams, StreamLayout::Interleaved, SpreadingMode::RepetitionQpsk)
}

/// On-disk configuration in TOML key-value form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfigFile {
    pub bandwidth_hz: f64,
    pub subcarriers: usize,
    #[serde(default)]
    pub block_len: Option<usize>,
    #[serde(default)]
    pub overlap_len: Option<usize>,
    /// Explicit active set; all subcarriers when absent.
    #[serde(default)]
    pub active: Option<Vec<usize>>,
    pub streams: usize,
    pub mode: ModeName,
    #[serde(default)]
    pub layout: StreamLayout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Repetition,
    Hadamard,
}

impl LinkConfigFile {
    pub fn build(&self) -> Result<(SmtConfig, StreamMap)> {
        let m = self.subcarriers;
        let n = self.block_len.unwrap_or(16 * m);
        let no = self.overlap_len.unwrap_or(n / 2);
        let active = self.active.clone().unwrap_or_else(|| (0..m).collect());
        let config = SmtConfig::with_blocks(self.bandwidth_hz, m, n, no, active)?;
        let l = config.active_subcarriers().len() / self.streams.max(1);
        let mode = match self.mode {
            ModeName::Repetition => SpreadingMode::RepetitionQpsk,
            ModeName::Hadamard => SpreadingMode::HadamardMulticode { bits_per_symbol: l.trailing_zeros() },
        };
        let map = StreamMap::partition(&config, self.streams, self.layout, mode)?;
        Ok((config, map))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|message| Error::Parse { path: path.to_path_buf(), message })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

const PRESETS: &[(&str, &str)] = &[
    ("table1-los", include_str!("../data/presets/table1-los.toml")),
    ("table1-nlos", include_str!("../data/presets/table1-nlos.toml")),
    ("desk-los", include_str!("../data/presets/desk-los.toml")),
    ("desk-nlos", include_str!("../data/presets/desk-nlos.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Look up a shipped preset by name.
pub fn preset(name: &str) -> Result<LinkConfigFile> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::config(format!("unknown preset '{name}'")))?;
    LinkConfigFile::parse(text).map_err(|message| Error::Parse { path: format!("<preset {name}>").into(), message })
}
