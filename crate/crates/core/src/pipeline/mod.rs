//! Pretraining: candidate projector generation and selection, then
//! alternating optimization of the encoder (E-step) and the predictor heads
//! (M-step) against the frozen projectors.

mod config;
mod train;

pub use self::config::{Schedule, TrainConfig};
pub use self::train::{e_step_epoch, m_step_epochs, train, Phase, TrainEvent};

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diversity::{compute_signatures, select_diverse, ProjectorSignature, SelectionResult};
use crate::error::{Error, Result};
use crate::nn::{EncoderModel, OptimizerState, PredictorModel, ProjectorModel};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean losses of one outer epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub encoder_loss: f64,
    pub predictor_loss: f64,
    /// Wall time; not persisted so checkpoints stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub config: TrainConfig,
    pub encoder: EncoderModel<T>,
    /// The selected frozen projectors, in ascending candidate order.
    pub projectors: Vec<ProjectorModel<T>>,
    pub predictors: Vec<PredictorModel<T>>,
    pub encoder_opt: OptimizerState<T>,
    pub predictor_opt: OptimizerState<T>,
    /// Completed outer epochs.
    pub epoch: usize,
    /// Data passes so far; each pass draws its shuffle from its own stream.
    pub passes: u64,
    pub history: Vec<EpochRecord>,
    pub last_loss: Option<f64>,
    pub selection: SelectionResult,
    /// Candidates dropped for a degenerate signature.
    pub discarded: Vec<usize>,
}

impl<T: Scalar> TrainState<T> {
    pub fn encoder_digest(&self) -> String {
        self.encoder.digest()
    }

    pub fn predictors_digest(&self) -> String {
        crate::digest::tensors(self.predictors.iter().flat_map(|p| p.mlp().params()))
    }

    pub fn projectors_digest(&self) -> String {
        crate::digest::tensors(self.projectors.iter().flat_map(|p| p.mlp().params()))
    }

    pub(crate) fn budget_exhausted(&self) -> bool {
        self.config.max_steps.is_some_and(|max| self.encoder_opt.steps() >= max)
    }
}

/// The probe batch used for projector signatures: the first `batch_size`
/// rows of a `(seed, ProbeBatch)`-seeded permutation of the training set.
pub fn probe_batch<T: Scalar>(data: &Dataset<T>, batch_size: usize, seed: u64) -> Result<Tensor<T>> {
    if batch_size < 2 || batch_size > data.len() {
        return Err(Error::config(format!(
            "batch_size {batch_size} must lie in [2, {}] for this dataset",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::ProbeBatch, 0));
    data.features.select_rows(&order[..batch_size])
}

/// All `N` candidate projectors for `cfg`.
pub fn generate_candidates<T: Scalar>(cfg: &TrainConfig, input_dim: usize) -> Result<Vec<ProjectorModel<T>>> {
    let init = cfg.init.with_seed(cfg.seed);
    (0..cfg.candidate_count())
        .map(|i| {
            ProjectorModel::generate(
                input_dim,
                &cfg.projector_hidden,
                cfg.projector_output_dim(),
                init,
                i as u64,
            )
        })
        .collect()
}

/// Candidates, their signatures, and the discarded indices.
pub type CandidatePool<T> = (Vec<ProjectorModel<T>>, Vec<ProjectorSignature>, Vec<usize>);

pub fn candidate_pool<T: Scalar>(cfg: &TrainConfig, data: &Dataset<T>) -> Result<CandidatePool<T>> {
    let candidates = generate_candidates(cfg, data.feature_dim())?;
    let probe = probe_batch(data, cfg.batch_size, cfg.seed)?;
    let (signatures, discarded) = compute_signatures(&candidates, &probe, cfg.bbt.eps)?;
    if signatures.len() < cfg.projectors {
        return Err(Error::Numerical(format!(
            "only {} of {} candidate projectors have a usable signature, {} needed",
            signatures.len(),
            candidates.len(),
            cfg.projectors
        )));
    }
    Ok((candidates, signatures, discarded))
}

/// Initializes the encoder, selects `K` diverse projectors out of `N`
/// candidates and creates the predictors.
pub fn build_state<T: Scalar>(cfg: &TrainConfig, data: &Dataset<T>) -> Result<TrainState<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let cfg = cfg.resolved();
    let (candidates, signatures, discarded) = candidate_pool(&cfg, data)?;
    let selection = select_diverse(&signatures, cfg.projectors)?;
    info!(
        "selected projectors {:?} of {} (log det {:.4})",
        selection.chosen_indices, selection.candidate_count, selection.log_det
    );
    let projectors: Vec<_> = selection
        .chosen_indices
        .iter()
        .map(|&i| candidates[i].clone())
        .collect();
    let encoder = EncoderModel::new(data.feature_dim(), &cfg.encoder_hidden, cfg.latent_dim, cfg.seed, 0)?;
    let predictors = (0..cfg.projectors)
        .map(|k| {
            PredictorModel::new(
                cfg.latent_dim,
                cfg.predictor_hidden,
                cfg.projector_output_dim(),
                cfg.seed,
                k as u64,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainState {
        encoder,
        projectors,
        predictors,
        encoder_opt: OptimizerState::new(cfg.optimizer),
        predictor_opt: OptimizerState::new(cfg.optimizer),
        epoch: 0,
        passes: 0,
        history: Vec::new(),
        last_loss: None,
        selection,
        discarded,
        config: cfg,
    })
}
