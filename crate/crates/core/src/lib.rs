//! Physical-layer simulation of filter-bank multicarrier spread-spectrum
//! (SMT/OQAM) ultra-wideband links.
//!
//! The transmit side ([`prototype`], [`oqam`]) builds staggered multitone
//! waveforms, [`channel`] and [`interference`] impair them, and [`rx`] runs
//! an overlap-save fast-convolution receiver with joint multi-band MMSE
//! equalization and narrowband interference suppression. [`mask`] handles
//! regulatory spectral masks and [`harness`] drives Monte-Carlo BER sweeps.

pub mod error;
pub mod fwht;
pub mod oqam;
pub mod numerology;
pub mod prototype;
pub mod psd;
pub mod channel;
pub mod interference;
pub mod rx;
pub mod mask;
pub mod harness;
pub mod samples;

pub use error::{Error, Result};
pub use numerology::{SmtConfig, SpreadingMode, StreamLayout, StreamMap};
