//! Polysomnogram ingestion: classic 16-bit EDF recordings and sidecar TSV
//! annotation files.

mod annotations;
mod edf;
mod timeline;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use annotations::{format_annotations, parse_annotations, StageLabelMap};
pub use edf::{parse_edf, write_edf, EdfWarnings};
pub use timeline::{overlaps_by_sample, sample_in, stage_blocks, Interval, StageBlock, EPOCH_SECONDS};

/// The seven differential EEG derivations used as model input, in tensor
/// channel order.
pub const EEG_CHANNELS: [&str; 7] = ["F3-M2", "F4-M1", "C3-M2", "C4-M1", "O1-M2", "O2-M1", "Cz-O1"];

/// Label of the pulse-oximetry channel.
pub const SPO2_CHANNEL: &str = "SpO2";

/// Sample rate of the EEG derivations.
pub const EEG_RATE_HZ: f64 = 256.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IngestError {
    #[error("truncated EDF header: need {needed} bytes, have {available}")]
    TruncatedHeader { needed: usize, available: usize },
    #[error("malformed EDF header field {field}: {value:?}")]
    BadField { field: &'static str, value: String },
    #[error("signal {label:?}: degenerate calibration (digital_min = digital_max = {digital})")]
    DegenerateCalibration { label: String, digital: i32 },
    #[error("signal {label:?}: physical_min must be below physical_max")]
    BadPhysicalRange { label: String },
    #[error("duplicate signal label {0:?}")]
    DuplicateLabel(String),
    #[error("inconsistent record sizes: {data_bytes} data bytes is not {records} records of {record_bytes} bytes")]
    InconsistentRecords {
        data_bytes: usize,
        records: i64,
        record_bytes: usize,
    },
    #[error("annotation line {line}: {msg}")]
    Annotation { line: usize, msg: String },
    #[error("cannot encode EDF: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SleepStage {
    N1,
    N2,
    N3,
    #[serde(rename = "REM")]
    Rem,
    Wake,
}

impl SleepStage {
    /// Stages analysed by the experiments. Wake is never used.
    pub const ANALYSIS: [SleepStage; 4] = [SleepStage::N1, SleepStage::N2, SleepStage::N3, SleepStage::Rem];

    pub fn as_str(self) -> &'static str {
        match self {
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::Rem => "REM",
            SleepStage::Wake => "Wake",
        }
    }

    /// Row label used in report tables.
    pub fn table_name(self) -> &'static str {
        match self {
            SleepStage::N1 => "NREM1",
            SleepStage::N2 => "NREM2",
            SleepStage::N3 => "NREM3",
            SleepStage::Rem => "REM",
            SleepStage::Wake => "Wake",
        }
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SleepStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "N1" | "NREM1" => Ok(SleepStage::N1),
            "N2" | "NREM2" => Ok(SleepStage::N2),
            "N3" | "NREM3" => Ok(SleepStage::N3),
            "REM" | "R" => Ok(SleepStage::Rem),
            "WAKE" | "W" => Ok(SleepStage::Wake),
            other => Err(format!("unknown sleep stage {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnnotationKind {
    SleepStage(SleepStage),
    Desaturation,
    Apnea,
    Other(String),
}

/// A timed label. Intervals are half-open: `[onset, onset + duration)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationEvent {
    pub onset: f64,
    pub duration: f64,
    pub kind: AnnotationKind,
}

impl AnnotationEvent {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalDef {
    pub label: String,
    pub sample_rate: f64,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    /// Samples per data record.
    pub samples_per_record: usize,
}

impl SignalDef {
    /// Linear digital → physical calibration.
    pub fn to_physical(&self, digital: i32) -> f64 {
        self.physical_min
            + f64::from(digital - self.digital_min) * (self.physical_max - self.physical_min)
                / f64::from(self.digital_max - self.digital_min)
    }

    /// Physical units per digital step.
    pub fn quantum(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingHeader {
    pub subject_id: String,
    pub recording_id: String,
    pub record_count: usize,
    /// Seconds per data record.
    pub record_duration: f64,
    pub signals: Vec<SignalDef>,
}

impl RecordingHeader {
    pub fn signal_count(&self) -> usize {
        self.signals.len()
    }

    pub fn duration(&self) -> f64 {
        self.record_count as f64 * self.record_duration
    }
}

/// Samples of one channel in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    pub label: String,
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl SignalTrace {
    pub fn new(label: impl Into<String>, sample_rate: f64, samples: Vec<f64>) -> Self {
        SignalTrace {
            label: label.into(),
            sample_rate,
            samples,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub header: RecordingHeader,
    pub traces: Vec<SignalTrace>,
}

impl Recording {
    /// Finds a trace by label, case-insensitively and ignoring surrounding
    /// whitespace.
    pub fn trace(&self, label: &str) -> Option<&SignalTrace> {
        let want = normalize_label(label);
        self.traces.iter().find(|t| normalize_label(&t.label) == want)
    }
}

pub(crate) fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

/// Returns the required labels absent from `header`; empty means ok.
pub fn required_channels_check(header: &RecordingHeader, required: &[&str]) -> Vec<String> {
    let present: Vec<String> = header.signals.iter().map(|s| normalize_label(&s.label)).collect();
    required
        .iter()
        .filter(|r| !present.contains(&normalize_label(r)))
        .map(|r| r.to_string())
        .collect()
}
