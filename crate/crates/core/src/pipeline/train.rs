use std::fmt;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::{EpochRecord, Schedule, TrainState};
use crate::bbt::{bbt_loss_terms, sum_terms};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Which parameters a step updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Encoder only (E-step).
    Encoder,
    /// Predictors only (M-step).
    Predictor,
    /// Both at once.
    Joint,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Encoder => "encoder",
            Phase::Predictor => "predictor",
            Phase::Joint => "joint",
        })
    }
}

/// Progress notifications passed to the [`train`] observer.
pub enum TrainEvent<'a, T> {
    /// After a phase of an outer epoch. Interleaved schedules report a single
    /// [`Phase::Joint`] event per epoch.
    PhaseEnd {
        epoch: usize,
        phase: Phase,
        loss: f64,
        state: &'a TrainState<T>,
    },
    EpochEnd {
        record: &'a EpochRecord,
        state: &'a TrainState<T>,
    },
}

/// One optimizer step on batch `x`; returns the batch loss.
fn step<T: Scalar>(state: &mut TrainState<T>, x: &Tensor<T>, phase: Phase, batch: usize) -> Result<f64> {
    let bbt = state.config.bbt;
    let targets = state
        .projectors
        .iter()
        .map(|p| p.forward(x))
        .collect::<Result<Vec<_>>>()?;

    let tape = Tape::new();
    let train_encoder = phase != Phase::Predictor;
    let train_predictors = phase != Phase::Encoder;
    let encoder = state.encoder.bind(&tape, train_encoder);
    let z = if train_encoder {
        encoder.forward(tape.constant(x.clone()))?
    } else {
        tape.constant(state.encoder.forward(x)?)
    };
    let heads: Vec<_> = state
        .predictors
        .iter()
        .map(|p| p.bind(&tape, train_predictors))
        .collect();
    let predicted = heads.iter().map(|h| h.forward(z)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<_> = targets.into_iter().map(|t| tape.constant(t)).collect();

    let terms = bbt_loss_terms(&targets, &predicted, &bbt)?;
    let loss = sum_terms(&terms)?;
    let value = loss.value().item().expect("scalar loss").as_f64();
    if !value.is_finite() {
        let breakdown: Vec<String> = terms
            .iter()
            .enumerate()
            .map(|(k, t)| format!("projector {k}: {}", t.value().item().expect("scalar").as_f64()))
            .collect();
        return Err(Error::Numerical(format!(
            "{phase} step, batch {batch}: loss is {value} ({})",
            breakdown.join(", ")
        )));
    }

    let mut grads = tape.backward(loss)?;
    if train_encoder {
        let g: Vec<_> = encoder
            .params()
            .into_iter()
            .map(|v| grads.take(v).expect("encoder gradient"))
            .collect();
        let names = state.encoder.mlp().param_names("encoder");
        state
            .encoder_opt
            .step(&mut state.encoder.mlp_mut().params_mut(), &g, &names)?;
    }
    if train_predictors {
        let g: Vec<_> = heads
            .iter()
            .flat_map(|h| h.params())
            .map(|v| grads.take(v).expect("predictor gradient"))
            .collect();
        let names: Vec<String> = state
            .predictors
            .iter()
            .enumerate()
            .flat_map(|(k, p)| p.mlp().param_names(&format!("predictor{k}")))
            .collect();
        let mut params: Vec<&mut Tensor<T>> = state
            .predictors
            .iter_mut()
            .flat_map(|p| p.mlp_mut().params_mut())
            .collect();
        state.predictor_opt.step(&mut params, &g, &names)?;
    }
    Ok(value)
}

/// One shuffled pass. For [`Phase::Joint`] passes under
/// [`Schedule::AlternatingBatches`], each batch gets an encoder step
/// followed by `predictor_epochs` predictor steps. Returns the mean encoder
/// and predictor losses (NaN for a phase that did not run).
fn pass<T: Scalar>(state: &mut TrainState<T>, data: &Dataset<T>, phase: Phase) -> Result<(f64, f64)> {
    let index = state.passes;
    state.passes += 1;
    let interleave = phase == Phase::Joint && state.config.schedule == Schedule::AlternatingBatches;
    let predictor_steps = state.config.predictor_epochs;
    let (mut enc_sum, mut enc_n, mut pred_sum, mut pred_n) = (0.0, 0usize, 0.0, 0usize);
    for (b, batch) in batches(data, state.config.batch_size, state.config.seed, index)?.enumerate() {
        if phase != Phase::Predictor && state.budget_exhausted() {
            break;
        }
        if interleave {
            enc_sum += step(state, &batch.features, Phase::Encoder, b)?;
            enc_n += 1;
            for _ in 0..predictor_steps {
                pred_sum += step(state, &batch.features, Phase::Predictor, b)?;
                pred_n += 1;
            }
        } else {
            let loss = step(state, &batch.features, phase, b)?;
            if phase == Phase::Predictor {
                pred_sum += loss;
                pred_n += 1;
            } else {
                enc_sum += loss;
                enc_n += 1;
            }
        }
    }
    if phase == Phase::Joint && !interleave {
        (pred_sum, pred_n) = (enc_sum, enc_n);
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok((mean(enc_sum, enc_n), mean(pred_sum, pred_n)))
}

/// E-step: one pass updating only the encoder. Returns the mean batch loss.
pub fn e_step_epoch<T: Scalar>(state: &mut TrainState<T>, data: &Dataset<T>) -> Result<f64> {
    let (loss, _) = pass(state, data, Phase::Encoder)?;
    if loss.is_finite() {
        state.last_loss = Some(loss);
    }
    Ok(loss)
}

/// M-step: `predictor_epochs` passes updating only the predictors. Returns
/// the mean loss of the final pass, or the last known loss when
/// `predictor_epochs` is 0.
pub fn m_step_epochs<T: Scalar>(state: &mut TrainState<T>, data: &Dataset<T>) -> Result<f64> {
    let mut last = state.last_loss.unwrap_or(0.0);
    for _ in 0..state.config.predictor_epochs {
        let (_, loss) = pass(state, data, Phase::Predictor)?;
        last = loss;
    }
    state.last_loss = Some(last);
    Ok(last)
}

/// Runs the remaining outer epochs of `state.config.train_epochs` (or until
/// `max_steps` encoder updates). The observer may abort training by
/// returning an error.
pub fn train<T, F>(state: &mut TrainState<T>, data: &Dataset<T>, mut observer: F) -> Result<()>
where
    T: Scalar,
    F: FnMut(TrainEvent<'_, T>) -> Result<()>,
{
    if data.feature_dim() != state.encoder.input_dim() {
        return Err(Error::Data(format!(
            "dataset has {} features, encoder expects {}",
            data.feature_dim(),
            state.encoder.input_dim()
        )));
    }
    while state.epoch < state.config.train_epochs && !state.budget_exhausted() {
        let epoch = state.epoch;
        let start = Instant::now();
        let (encoder_loss, predictor_loss) = match state.config.schedule {
            Schedule::AlternatingEpochs => {
                let e = e_step_epoch(state, data)?;
                observer(TrainEvent::PhaseEnd {
                    epoch,
                    phase: Phase::Encoder,
                    loss: e,
                    state,
                })?;
                let m = m_step_epochs(state, data)?;
                observer(TrainEvent::PhaseEnd {
                    epoch,
                    phase: Phase::Predictor,
                    loss: m,
                    state,
                })?;
                (e, m)
            }
            Schedule::AlternatingBatches | Schedule::Joint => {
                let (e, m) = pass(state, data, Phase::Joint)?;
                state.last_loss = Some(if m.is_finite() { m } else { e });
                observer(TrainEvent::PhaseEnd {
                    epoch,
                    phase: Phase::Joint,
                    loss: e,
                    state,
                })?;
                (e, m)
            }
        };
        state.epoch += 1;
        let record = EpochRecord {
            epoch,
            encoder_loss,
            predictor_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: encoder loss {encoder_loss:.6}, predictor loss {predictor_loss:.6}, {:.1}s",
            record.seconds
        );
        state.history.push(record);
        let record = state.history.last().expect("just pushed");
        observer(TrainEvent::EpochEnd { record, state })?;
    }
    Ok(())
}
