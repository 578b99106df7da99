//! 30 s epoch segmentation and log-magnitude spectrogram tensors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::stft::{Stft, StftConfig};
use super::DspError;
use crate::psg::{stage_blocks, AnnotationEvent, Interval, Recording, SleepStage, EEG_CHANNELS, EPOCH_SECONDS};

pub const CHANNELS: usize = 7;
pub const FREQ_BINS: usize = 129;
pub const TIME_BINS: usize = 61;
pub const EPOCH_SAMPLES: usize = 7680;
pub const TENSOR_LEN: usize = CHANNELS * FREQ_BINS * TIME_BINS;
pub const TENSOR_DIMS: [usize; 3] = [CHANNELS, FREQ_BINS, TIME_BINS];

/// One epoch's `7 × 129 × 61` feature tensor. `data` is shared so relabeled
/// copies for the different experiments are cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTensor {
    pub subject_id: String,
    pub stage: SleepStage,
    pub epoch_index: usize,
    pub label: u8,
    pub data: Arc<[f32]>,
}

impl EpochTensor {
    pub fn with_label(&self, label: u8) -> Self {
        EpochTensor {
            label,
            ..self.clone()
        }
    }
}

/// Raw samples of one staged block, channels in [`EEG_CHANNELS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSegment {
    pub subject_id: String,
    pub stage: SleepStage,
    pub epoch_index: usize,
    pub interval: Interval,
    pub channels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SegmentWarnings {
    /// Staged blocks skipped because some channel lacked samples.
    pub dropped: usize,
}

/// Cuts every staged 30 s block out of the seven EEG channels.
///
/// `stages` restricts which blocks are emitted (all stages when empty).
pub fn segment_epochs(
    recording: &Recording,
    annotations: &[AnnotationEvent],
    stages: &[SleepStage],
) -> (Vec<EpochSegment>, SegmentWarnings) {
    let traces: Vec<_> = EEG_CHANNELS.iter().map(|l| recording.trace(l)).collect();
    let mut out = Vec::new();
    let mut warnings = SegmentWarnings::default();
    for block in stage_blocks(annotations) {
        if !stages.is_empty() && !stages.contains(&block.stage) {
            continue;
        }
        let mut channels = Vec::with_capacity(CHANNELS);
        for trace in &traces {
            let Some(trace) = trace else { break };
            let n = (EPOCH_SECONDS * trace.sample_rate).round() as usize;
            let start = (block.interval.start * trace.sample_rate).round() as usize;
            match trace.samples.get(start..start + n) {
                Some(s) => channels.push(s.to_vec()),
                None => break,
            }
        }
        if channels.len() != CHANNELS {
            warnings.dropped += 1;
            continue;
        }
        out.push(EpochSegment {
            subject_id: recording.header.subject_id.clone(),
            stage: block.stage,
            epoch_index: block.index,
            interval: block.interval,
            channels,
        });
    }
    (out, warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramConfig {
    pub stft: StftConfig,
    /// Added to |STFT| before log10.
    pub log_floor: f64,
    /// Per-channel z-scoring of the log spectrogram. Off by default.
    pub zscore: bool,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            stft: StftConfig::default(),
            log_floor: 1e-12,
            zscore: false,
        }
    }
}

/// Reusable featurizer.
pub struct Featurizer {
    cfg: SpectrogramConfig,
    stft: Stft,
}

impl Featurizer {
    pub fn new(cfg: SpectrogramConfig) -> Result<Self, DspError> {
        Ok(Featurizer {
            stft: Stft::new(cfg.stft)?,
            cfg,
        })
    }

    /// `log10(|STFT| + floor)` per channel, laid out `[channel][bin][frame]`.
    pub fn features(&self, channels: &[Vec<f64>]) -> Result<Vec<f32>, DspError> {
        if channels.len() != CHANNELS || channels.iter().any(|c| c.len() != EPOCH_SAMPLES) {
            return Err(DspError::EpochShape {
                channels: channels.len(),
                lengths: channels.iter().map(Vec::len).collect(),
            });
        }
        let mut data = Vec::with_capacity(TENSOR_LEN);
        for ch in channels {
            let spec = self.stft.transform(ch)?;
            if spec.bins != FREQ_BINS || spec.frames != TIME_BINS {
                return Err(DspError::EpochShape {
                    channels: CHANNELS,
                    lengths: vec![spec.bins, spec.frames],
                });
            }
            let start = data.len();
            data.extend(spec.data.iter().map(|c| (c.norm() + self.cfg.log_floor).log10() as f32));
            if self.cfg.zscore {
                zscore(&mut data[start..]);
            }
        }
        Ok(data)
    }

    pub fn epoch_spectrogram(&self, segment: &EpochSegment) -> Result<EpochTensor, DspError> {
        Ok(EpochTensor {
            subject_id: segment.subject_id.clone(),
            stage: segment.stage,
            epoch_index: segment.epoch_index,
            label: 0,
            data: self.features(&segment.channels)?.into(),
        })
    }
}

fn zscore(x: &mut [f32]) {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = x.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for v in x {
        *v = ((f64::from(*v) - mean) / sd) as f32;
    }
}

/// Featurizes one epoch with the default configuration.
pub fn epoch_spectrogram(segment: &EpochSegment) -> Result<EpochTensor, DspError> {
    Featurizer::new(SpectrogramConfig::default())?.epoch_spectrogram(segment)
}
