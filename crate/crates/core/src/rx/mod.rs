//! Fast-convolution SMT receiver: analysis, noise estimation, joint MMSE
//! equalization, demodulation and detection.

pub mod analysis;
pub mod demod;
pub mod equalizer;
pub mod state;

use std::borrow::Cow;

use num_complex::Complex64;

pub use analysis::{overlap_save_analyze, AnalysisSpan, Analyzer, SubbandFrame};
pub use demod::{detect, subband_demod, Demodulator, Detection, StreamEstimates};
pub use equalizer::{compute_taps, equalize_branches, equalize_combine, EqualizerTapSet, TapForm};
pub use state::{average_stream_snr, estimate_band_noise, whiten, ChannelState, NoiseSource, StateSource};

use crate::channel::ChannelRealization;
use crate::error::Result;
use crate::numerology::{SmtConfig, SpreadingMode, StreamMap};
use crate::prototype::{band_response_from_spectrum, BandResponse, PrototypeFilter};

/// Matched-filter responses of every active band, in configuration order.
pub fn band_responses(filter: &PrototypeFilter, config: &SmtConfig) -> Vec<BandResponse> {
    let spectrum = filter.spectrum(config.fc_block_len());
    config
        .active_subcarriers()
        .iter()
        .map(|&k| band_response_from_spectrum(&spectrum, filter, config, k))
        .collect()
}

/// A configured receiver chain.
pub struct Receiver {
    config: SmtConfig,
    map: StreamMap,
    responses: Vec<BandResponse>,
    analyzer: Analyzer,
    demod: Demodulator,
}

impl Receiver {
    pub fn new(config: &SmtConfig, map: &StreamMap, filter: &PrototypeFilter) -> Result<Self> {
        map.validate_against(config)?;
        let analyzer = Analyzer::new(config, filter, AnalysisSpan::Band)?;
        let grid = analysis::OutputGrid {
            l_sub: config.bins_per_band(),
            first: analysis::analysis_lead(config, filter)? / config.half_symbol_hop(),
            per_block: config.fc_block_advance() / config.half_symbol_hop(),
        };
        Ok(Self {
            config: config.clone(),
            map: map.clone(),
            responses: band_responses(filter, config),
            analyzer,
            demod: Demodulator::new(config, grid, filter)?,
        })
    }

    pub fn config(&self) -> &SmtConfig {
        &self.config
    }

    pub fn map(&self) -> &StreamMap {
        &self.map
    }

    pub fn responses(&self) -> &[BandResponse] {
        &self.responses
    }

    /// Blocks needed to recover `num_slots` half-symbol slots.
    pub fn blocks_for_slots(&self, num_slots: usize) -> usize {
        self.analyzer.blocks_for_outputs(num_slots + self.demod.delay_slots())
    }

    pub fn analyze(&self, samples: &[Complex64], num_slots: usize) -> SubbandFrame {
        self.analyzer.analyze_blocks(samples, self.blocks_for_slots(num_slots))
    }

    pub fn oracle_state(&self, channel: &ChannelRealization, sigma2: Vec<f64>) -> Result<ChannelState> {
        ChannelState::oracle(&self.config, channel, sigma2, &self.responses, &self.map)
    }

    pub fn taps(&self, state: &ChannelState, form: TapForm) -> Result<EqualizerTapSet> {
        compute_taps(state, &self.responses, &self.map, form)
    }

    /// Frame the given tap form expects: whitened taps act on `x̃/σ_k`.
    pub fn equalizer_input<'a>(&self, frame: &'a SubbandFrame, state: &ChannelState, form: TapForm) -> Result<Cow<'a, SubbandFrame>> {
        match form {
            TapForm::Whitened => Ok(Cow::Owned(whiten(frame, state.sigma2())?)),
            _ => Ok(Cow::Borrowed(frame)),
        }
    }

    /// Equalize, combine (or keep branches for multicode) and demodulate.
    pub fn estimates(&self, frame: &SubbandFrame, taps: &EqualizerTapSet, num_slots: usize) -> Result<StreamEstimates> {
        match self.map.mode() {
            SpreadingMode::RepetitionQpsk => {
                let y = equalize_combine(frame, taps, &self.map)?;
                Ok(StreamEstimates::Combined(subband_demod(&y, &self.map, &self.demod, num_slots)?))
            }
            SpreadingMode::HadamardMulticode { .. } => {
                let y = equalize_branches(frame, taps, &self.map)?;
                let est = y
                    .iter()
                    .zip(self.map.streams())
                    .map(|(branches, set)| branches.iter().map(|b| self.demod.real_symbols(b, set[0], num_slots)).collect())
                    .collect::<Result<_>>()?;
                Ok(StreamEstimates::Branches(est))
            }
        }
    }

    pub fn detect(&self, frame: &SubbandFrame, taps: &EqualizerTapSet, num_slots: usize) -> Result<Detection> {
        detect(&self.estimates(frame, taps, num_slots)?, &self.map)
    }
}
