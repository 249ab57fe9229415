//! Overlap-save analysis filter bank.
//!
//! The input is cut into `N`-sample blocks advancing by `N − N_o`. Each block
//! is transformed once; every active band then takes its bins around
//! `k·N/M`. Block `b` starts at `b·(N − N_o) − lead`, so the samples kept
//! after filtering sit in the middle of the block, away from both circular
//! wrap regions (the causal prototype on the left, anti-causal channel
//! matching on the right).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numerology::SmtConfig;
use crate::prototype::{tone_offset, PrototypeFilter};

/// How many bins each band keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisSpan {
    /// `2N/M` bins, twice the subcarrier spacing.
    Band,
    /// All `N` bins, re-centred on the band. Decimation then folds every
    /// bin, which makes the path exact for any filter.
    Full,
}

/// Frequency-domain receiver grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandFrame {
    config: SmtConfig,
    bands: Vec<usize>,
    span: usize,
    lead: usize,
    blocks: Vec<Vec<Complex64>>,
}

impl SubbandFrame {
    pub fn config(&self) -> &SmtConfig {
        &self.config
    }

    /// Active band indices, in storage order.
    pub fn bands(&self) -> &[usize] {
        &self.bands
    }

    /// Bins per band per block.
    pub fn span(&self) -> usize {
        self.span
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn band_position(&self, k: usize) -> Option<usize> {
        self.bands.binary_search(&k).ok()
    }

    pub fn tones(&self, block: usize, pos: usize) -> &[Complex64] {
        &self.blocks[block][pos * self.span..(pos + 1) * self.span]
    }

    pub fn tones_mut(&mut self, block: usize, pos: usize) -> &mut [Complex64] {
        let s = self.span;
        &mut self.blocks[block][pos * s..(pos + 1) * s]
    }

    /// First input sample of block `b` (may be negative; the input is
    /// zero-padded).
    pub fn block_start(&self, b: usize) -> isize {
        (b * self.config.fc_block_advance()) as isize - self.lead as isize
    }

    pub fn lead(&self) -> usize {
        self.lead
    }

    pub fn grid(&self) -> OutputGrid {
        let hop = self.config.half_symbol_hop();
        OutputGrid {
            l_sub: self.config.bins_per_band(),
            first: self.lead / hop,
            per_block: self.config.fc_block_advance() / hop,
        }
    }

    pub(crate) fn map_bands<F>(&self, mut f: F) -> Self
    where
        F: FnMut(usize, &[Complex64]) -> Vec<Complex64>,
    {
        let blocks = self
            .blocks
            .iter()
            .map(|blk| {
                let mut out = Vec::with_capacity(blk.len());
                for (pos, chunk) in blk.chunks(self.span).enumerate() {
                    out.extend(f(pos, chunk));
                }
                out
            })
            .collect();
        Self { blocks, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Self {
        Self { config: self.config.clone(), bands: self.bands.clone(), span: self.span, lead: self.lead, blocks: Vec::new() }
    }
}

/// Which small-IDFT outputs of each block are kept, and where they land on
/// the global half-symbol grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputGrid {
    pub l_sub: usize,
    /// First kept output index within a block.
    pub first: usize,
    /// Outputs kept per block.
    pub per_block: usize,
}

/// Block lead: the overlap is split so that the causal prototype tail and
/// the anti-causal margin both fit, rounded to the half-symbol hop.
pub fn analysis_lead(config: &SmtConfig, filter: &PrototypeFilter) -> Result<usize> {
    let hop = config.half_symbol_hop();
    let overlap = config.fc_overlap_len();
    let tail = filter.len() - 1;
    if overlap < tail {
        return Err(Error::config(format!("overlap {overlap} shorter than prototype span {tail}")));
    }
    let lead = hop * (((overlap + tail) as f64 / 2.0 / hop as f64).round() as usize);
    Ok(lead.clamp(tail.div_ceil(hop) * hop, overlap))
}

/// Reusable analysis plan.
pub struct Analyzer {
    config: SmtConfig,
    span: usize,
    lead: usize,
    fft: Arc<dyn Fft<f64>>,
    offsets: Vec<isize>,
}

impl Analyzer {
    pub fn new(config: &SmtConfig, filter: &PrototypeFilter, span: AnalysisSpan) -> Result<Self> {
        if filter.samples_per_symbol() != config.samples_per_symbol() {
            return Err(Error::config("prototype designed for a different subcarrier count"));
        }
        let n = config.fc_block_len();
        let span = match span {
            AnalysisSpan::Band => config.bins_per_band(),
            AnalysisSpan::Full => n,
        };
        let offsets = (0..span).map(|t| tone_offset(t, span)).collect();
        Ok(Self {
            config: config.clone(),
            span,
            lead: analysis_lead(config, filter)?,
            fft: FftPlanner::new().plan_fft_forward(n),
            offsets,
        })
    }

    /// Blocks needed to produce `outputs` half-symbol-spaced samples.
    pub fn blocks_for_outputs(&self, outputs: usize) -> usize {
        outputs.div_ceil(self.config.fc_block_advance() / self.config.half_symbol_hop())
    }

    /// Analyse enough blocks to cover every half-symbol instant of the input.
    pub fn analyze(&self, samples: &[Complex64]) -> SubbandFrame {
        let outputs = samples.len().div_ceil(self.config.half_symbol_hop());
        self.analyze_blocks(samples, self.blocks_for_outputs(outputs))
    }

    pub fn analyze_blocks(&self, samples: &[Complex64], num_blocks: usize) -> SubbandFrame {
        let n = self.config.fc_block_len();
        let m = self.config.num_subcarriers() as isize;
        let spacing = self.config.bins_per_spacing() as isize;
        let bands = self.config.active_subcarriers().to_vec();
        let scale = 1.0 / (n as f64).sqrt();
        let mut frame = SubbandFrame {
            config: self.config.clone(),
            bands,
            span: self.span,
            lead: self.lead,
            blocks: Vec::with_capacity(num_blocks),
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for b in 0..num_blocks {
            let start = frame.block_start(b);
            for (u, v) in buf.iter_mut().enumerate() {
                let t = start + u as isize;
                *v = if t >= 0 && (t as usize) < samples.len() { samples[t as usize] } else { Complex64::new(0.0, 0.0) };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let mut out = Vec::with_capacity(frame.bands.len() * self.span);
            for &k in &frame.bands {
                // Undo the block-start phase of the band's carrier.
                let phase = Complex64::from_polar(
                    scale,
                    -2.0 * std::f64::consts::PI * ((k as isize * start).rem_euclid(m)) as f64 / m as f64,
                );
                let centre = k as isize * spacing;
                out.extend(self.offsets.iter().map(|&o| buf[(centre + o).rem_euclid(n as isize) as usize] * phase));
            }
            frame.blocks.push(out);
        }
        frame
    }
}

/// Analyse `samples` with the band-limited span.
pub fn overlap_save_analyze(samples: &[Complex64], config: &SmtConfig, filter: &PrototypeFilter) -> Result<SubbandFrame> {
    if samples.len() < config.fc_block_len() {
        return Err(Error::Framing(format!(
            "{} samples shorter than one {}-sample block",
            samples.len(),
            config.fc_block_len()
        )));
    }
    Ok(Analyzer::new(config, filter, AnalysisSpan::Band)?.analyze(samples))
}

/// Scale from band tones to time-domain subband samples:
/// `z = 2·√(N/M) · IDFT_{L_sub}` (with `1/L_sub` in the IDFT).
pub fn demod_gain(config: &SmtConfig) -> f64 {
    2.0 * (config.fc_block_len() as f64 / config.num_subcarriers() as f64).sqrt()
}

/// Converts per-block tone vectors into the global half-symbol-spaced
/// subband sequence.
pub struct ToneSynthesizer {
    grid: OutputGrid,
    ifft: Arc<dyn Fft<f64>>,
    gain: f64,
}

impl ToneSynthesizer {
    pub fn new(config: &SmtConfig, grid: OutputGrid) -> Self {
        Self {
            grid,
            ifft: FftPlanner::new().plan_fft_inverse(grid.l_sub),
            gain: demod_gain(config) / grid.l_sub as f64,
        }
    }

    /// Fold tones modulo `L_sub`, inverse transform and keep the valid
    /// window. `blocks[b]` may have any length that is a multiple of `L_sub`.
    pub fn run(&self, blocks: &[Vec<Complex64>]) -> Result<Vec<Complex64>> {
        let l = self.grid.l_sub;
        let mut out = Vec::with_capacity(blocks.len() * self.grid.per_block);
        let mut buf = vec![Complex64::new(0.0, 0.0); l];
        for blk in blocks {
            if blk.is_empty() || blk.len() % l != 0 {
                return Err(Error::Framing(format!("block of {} tones does not fold onto {l}", blk.len())));
            }
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (t, v) in blk.iter().enumerate() {
                buf[t % l] += v;
            }
            self.ifft.process(&mut buf);
            out.extend(buf[self.grid.first..self.grid.first + self.grid.per_block].iter().map(|v| v * self.gain));
        }
        Ok(out)
    }
}

/// Matched-filter every band with the prototype and decimate to the
/// half-symbol rate, purely through the analysis grid. Output `z[k][j]` is
/// the band-`k` filter output at sample `j·M/2`.
pub fn filter_and_decimate(frame: &SubbandFrame, filter: &PrototypeFilter) -> Result<Vec<Vec<Complex64>>> {
    let config = frame.config();
    let n = config.fc_block_len();
    let spectrum = filter.spectrum(n);
    let scale = 1.0 / (config.samples_per_symbol() as f64).sqrt();
    let h: Vec<Complex64> =
        (0..frame.span()).map(|t| spectrum[tone_offset(t, frame.span()).rem_euclid(n as isize) as usize] * scale).collect();
    let synth = ToneSynthesizer::new(config, frame.grid());
    (0..frame.bands().len())
        .map(|pos| {
            let blocks: Vec<Vec<Complex64>> = (0..frame.num_blocks())
                .map(|b| frame.tones(b, pos).iter().zip(&h).map(|(x, g)| x * g).collect())
                .collect();
            synth.run(&blocks)
        })
        .collect()
}
