//! Line-noise removal and STFT featurization.

mod epochs;
mod filter;
mod stft;

pub use epochs::{
    epoch_spectrogram, segment_epochs, EpochSegment, EpochTensor, Featurizer, SegmentWarnings, SpectrogramConfig, CHANNELS,
    EPOCH_SAMPLES, FREQ_BINS, TENSOR_DIMS, TENSOR_LEN, TIME_BINS,
};
pub use filter::{denoise, denoise_with, design_bandstop, filtfilt, filtfilt_samples, Biquad, NotchConfig, SosFilter};
pub use stft::{stft, Spectrum, Stft, StftConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DspError {
    #[error("invalid stop band ({lo}, {hi}) Hz at fs = {fs} Hz: need 0 < lo < hi < fs/2")]
    InvalidBand { lo: f64, hi: f64, fs: f64 },
    #[error("trace of {len} samples is too short for zero-phase filtering (need at least {min})")]
    TraceTooShort { len: usize, min: usize },
    #[error("empty signal")]
    EmptySignal,
    #[error("invalid STFT framing {0:?}")]
    InvalidStft(StftConfig),
    #[error("epoch must be 7 channels of 7680 samples, got {channels} channels with lengths {lengths:?}")]
    EpochShape { channels: usize, lengths: Vec<usize> },
}
