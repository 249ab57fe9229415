use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere along the transmit / channel / receive chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("prototype design failed: {reason} (measured ISI {isi_db:.1} dB)")]
    Design { reason: String, isi_db: f64 },
    #[error("framing error: {0}")]
    Framing(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("frequency {freq_hz} Hz is outside the coverage of the {region} mask")]
    Coverage { region: String, freq_hz: f64 },
    #[error("measurement error: {0}")]
    Measurement(String),
    #[error("planning error: {0}")]
    Planning(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
