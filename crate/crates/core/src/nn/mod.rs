//! A small residual CNN over epoch spectrograms, with hand-written
//! backpropagation, positive-weighted BCE and Adam.

mod adam;
mod checkpoint;
mod layers;
mod loss;
mod model;
mod tensor;
mod train;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::ConvShape;
pub use loss::{sigmoid, weighted_bce};
pub use model::{Mode, Model, Params, Tape, Tensor};
pub use tensor::{Act, Scalar};
pub use train::{predict, predict_samples, train, train_samples, EpochStats, Samples, TrainHistory, SCORE_CLAMP};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("label {0} is not 0 or 1")]
    NonBinaryLabel(u8),
    #[error("positive weight must be finite and > 0, got {0}")]
    PosWeight(f64),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("training set needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

/// Architecture and optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    /// `(out_channels, stride)` per residual block.
    pub blocks: Vec<(usize, usize)>,
    pub kernel: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the old running estimate in batch-norm updates.
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 7,
            stem_channels: 16,
            blocks: vec![(16, 1), (32, 2)],
            kernel: 3,
            epochs: 512,
            learning_rate: 1e-5,
            batch_size: 64,
            adam: AdamConfig::default(),
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate_architecture(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.in_channels == 0 || self.stem_channels == 0 {
            return bad("channel counts must be >= 1");
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad("kernel must be odd");
        }
        if self.blocks.iter().any(|&(c, s)| c == 0 || s == 0) {
            return bad("block channels and strides must be >= 1");
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be > 0 and bn_momentum in [0, 1)");
        }
        Ok(())
    }

    /// Full check, as applied to user configuration.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.validate_architecture()?;
        self.validate_schedule()?;
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }

    /// Checks needed to run training. A zero learning rate is accepted here.
    pub(crate) fn validate_schedule(&self) -> Result<(), ModelError> {
        let a = &self.adam;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning_rate must be finite and >= 0".into()));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(ModelError::Config("adam betas must be in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}
