//! The pipeline's TOML configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::CohortRules;
use crate::dsp::{NotchConfig, SpectrogramConfig};
use crate::experiment::{Experiment, PosWeight};
use crate::metrics::CiMethod;
use crate::nn::ModelConfig;
use crate::psg::SleepStage;
use crate::split::Scheme;
use crate::synth::SynthConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {msg}", path = .path.display())]
    Parse { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Every setting of a run. A single `seed` drives synthesis, splitting and
/// model initialization; `synth.seed` and `model.seed` are overwritten by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub stages: Vec<SleepStage>,
    pub scheme: Scheme,
    pub repeats: usize,
    pub experiment: Experiment,
    pub seed: u64,
    pub thresholds: CohortRules,
    pub pos_weight: PosWeight,
    pub ci: CiMethod,
    pub notch: NotchConfig,
    pub spectrogram: SpectrogramConfig,
    pub model: ModelConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            stages: SleepStage::ANALYSIS.to_vec(),
            scheme: Scheme::EqualSubjects,
            repeats: 11,
            experiment: Experiment::CrossPatient,
            seed: 0,
            thresholds: CohortRules::default(),
            pos_weight: PosWeight::default(),
            ci: CiMethod::default(),
            notch: NotchConfig::default(),
            spectrogram: SpectrogramConfig::default(),
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.into(),
            msg: e.message().to_string(),
        })?;
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    /// Sets the run seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.seed = seed;
        self.synth.seed = seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.stages.is_empty() {
            return bad("stages must list at least one of N1, N2, N3, REM".into());
        }
        if self.stages.contains(&SleepStage::Wake) {
            return bad("Wake is not an analysis stage".into());
        }
        let mut seen = self.stages.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.stages.len() {
            return bad("stages contains duplicates".into());
        }
        if self.data_dir.as_os_str().is_empty() || self.out_dir.as_os_str().is_empty() {
            return bad("data_dir and out_dir must be set".into());
        }
        self.thresholds.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.model.in_channels != crate::dsp::CHANNELS {
            return bad(format!("model.in_channels must be {}", crate::dsp::CHANNELS));
        }
        self.synth.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        crate::dsp::Stft::new(self.spectrogram.stft).map_err(|e| ConfigError::Invalid(format!("spectrogram: {e}")))?;
        if self.spectrogram.stft != crate::dsp::StftConfig::default() {
            return bad("spectrogram.stft must produce 129 x 61 epochs; only the defaults are supported".into());
        }
        if !(self.spectrogram.log_floor > 0.0) {
            return bad("spectrogram.log_floor must be > 0".into());
        }
        if self.notch.order == 0 || self.notch.bands.iter().any(|&(lo, hi)| !(0.0 < lo && lo < hi && hi < 128.0)) {
            return bad("notch bands must satisfy 0 < lo < hi < 128 Hz and order >= 1".into());
        }
        Ok(())
    }
}
