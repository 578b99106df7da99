//! Detection of sleep oxygen desaturations from EEG.
//!
//! The crate covers the whole workflow: EDF/TSV ingestion ([`psg`]),
//! line-noise removal and STFT featurization ([`dsp`]), desaturated /
//! undesaturated cohort selection ([`cohort`]), age/gender matched subject
//! splits ([`split`]), the three labeled experiment constructions
//! ([`experiment`]), a small residual CNN trained from scratch ([`nn`]),
//! evaluation and reporting ([`metrics`]), a synthetic PSG generator with
//! planted effects ([`synth`]) and the `desatscan` command pipeline
//! ([`pipeline`]).

pub mod cohort;
pub mod config;
pub mod dsp;
pub mod dstf;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod psg;
pub mod seed;
pub mod split;
pub mod synth;
mod tsv;

use std::path::PathBuf;

pub use psg::{AnnotationEvent, AnnotationKind, SleepStage};

/// Crate-level error, wrapping the per-module errors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] psg::IngestError),
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
    #[error(transparent)]
    Cohort(#[from] cohort::CohortError),
    #[error(transparent)]
    Dataset(#[from] experiment::DatasetError),
    #[error(transparent)]
    Model(#[from] nn::ModelError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{}: missing channels {channels:?}", .path.display())]
    MissingChannels { path: PathBuf, channels: Vec<String> },
    #[error("{0}")]
    Pipeline(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
