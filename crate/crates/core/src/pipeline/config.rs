use serde::{Deserialize, Serialize};

use crate::bbt::BbtConfig;
use crate::error::{Error, Result};
use crate::nn::{InitSpec, OptimizerConfig};

/// How encoder and predictor updates are interleaved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// One full encoder epoch, then `predictor_epochs` full predictor epochs.
    #[default]
    AlternatingEpochs,
    /// Per batch: one encoder step, then `predictor_epochs` predictor steps
    /// on the same batch.
    AlternatingBatches,
    /// Encoder and predictors updated together from one backward pass.
    /// Debug only.
    Joint,
}

/// Hyperparameters of a pretraining run. Defaults are the tabular settings
/// (Adam 1e-3, batch 128, 100 epochs, one predictor epoch, six projectors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Number of projectors kept after diversity selection (`K`).
    pub projectors: usize,
    /// Number of random candidates drawn (`N`); `10 · K` when unset.
    pub candidates: Option<usize>,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub projector_hidden: Vec<usize>,
    /// Projector output width; `latent_dim` when unset.
    pub projector_dim: Option<usize>,
    /// Hidden width of each predictor; 0 makes predictors linear.
    pub predictor_hidden: usize,
    pub batch_size: usize,
    pub train_epochs: usize,
    /// Predictor passes per outer epoch (`M`).
    pub predictor_epochs: usize,
    /// Settings shared by the encoder and predictor optimizers (each keeps
    /// its own state).
    pub optimizer: OptimizerConfig,
    pub bbt: BbtConfig,
    /// Projector initialization.
    pub init: InitSpec,
    pub seed: u64,
    /// Write an intermediate checkpoint and probe every this many epochs;
    /// 0 disables.
    pub eval_every: usize,
    pub schedule: Schedule,
    /// Stop after this many encoder updates, overriding `train_epochs`.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            projectors: 6,
            candidates: None,
            latent_dim: 256,
            encoder_hidden: vec![256, 256, 256],
            projector_hidden: vec![256],
            projector_dim: None,
            predictor_hidden: 0,
            batch_size: 128,
            train_epochs: 100,
            predictor_epochs: 1,
            optimizer: OptimizerConfig::default(),
            bbt: BbtConfig::default(),
            init: InitSpec::default(),
            seed: 0,
            eval_every: 0,
            schedule: Schedule::default(),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn candidate_count(&self) -> usize {
        self.candidates.unwrap_or(10 * self.projectors)
    }

    pub fn projector_output_dim(&self) -> usize {
        self.projector_dim.unwrap_or(self.latent_dim)
    }

    /// Fills in derived defaults so the config echoes every effective value.
    pub fn resolved(&self) -> Self {
        Self {
            candidates: Some(self.candidate_count()),
            projector_dim: Some(self.projector_output_dim()),
            ..self.clone()
        }
    }

    /// Checks every field, reporting all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.projectors == 0 {
            errors.push("projectors must be >= 1".to_string());
        }
        if self.candidate_count() < self.projectors {
            errors.push(format!(
                "candidates ({}) must be >= projectors ({})",
                self.candidate_count(),
                self.projectors
            ));
        }
        if self.latent_dim == 0 {
            errors.push("latent_dim must be >= 1".to_string());
        }
        if self.projector_output_dim() == 0 {
            errors.push("projector_dim must be >= 1".to_string());
        }
        if self.encoder_hidden.contains(&0) {
            errors.push("encoder_hidden widths must be >= 1".to_string());
        }
        if self.projector_hidden.contains(&0) {
            errors.push("projector_hidden widths must be >= 1".to_string());
        }
        if self.batch_size < 2 {
            errors.push(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.max_steps == Some(0) {
            errors.push("max_steps must be >= 1 when set".to_string());
        }
        self.optimizer.validate("optimizer", &mut errors);
        self.bbt.validate(&mut errors);
        if let Err(e) = self.init.validate() {
            errors.push(e);
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}
