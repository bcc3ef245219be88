//! Binary checkpoint format.
//!
//! ```text
//! "LFRCKPT1" | header length (u64 LE) | JSON header | parameter blob | SHA-256
//! ```
//!
//! The JSON header carries the configuration, training progress, the
//! projector selection and a table of named tensors, each given by shape,
//! byte offset and element count into the blob. The blob stores every tensor
//! contiguously as little-endian values of the header's `dtype`. The trailing
//! 32 bytes are the SHA-256 of everything before them and are verified on
//! load. Random state is fully described by the run seed and the pass
//! counter, since every stream is derived from those.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diversity::SelectionResult;
use crate::error::{Error, Result};
use crate::nn::{
    Activation, DenseLayer, EncoderModel, InitSpec, Mlp, OptimizerConfig, OptimizerState, PredictorModel,
    ProjectorModel,
};
use crate::pipeline::{EpochRecord, TrainConfig, TrainState};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LFRCKPT1";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelEntry {
    activations: Vec<Activation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProjectorEntry {
    candidate_index: u64,
    init: InitSpec,
    init_seed: u64,
    activations: Vec<Activation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerEntry {
    config: OptimizerConfig,
    steps: u64,
    buffers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngEntry {
    algorithm: String,
    seed: u64,
    passes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    dtype: String,
    config: TrainConfig,
    epoch: usize,
    rng: RngEntry,
    last_loss: Option<f64>,
    history: Vec<EpochRecord>,
    selection: SelectionResult,
    discarded: Vec<usize>,
    encoder: ModelEntry,
    predictors: Vec<ModelEntry>,
    projectors: Vec<ProjectorEntry>,
    encoder_optimizer: OptimizerEntry,
    predictor_optimizer: OptimizerEntry,
    tensors: Vec<TensorEntry>,
}

struct BlobWriter<T> {
    entries: Vec<TensorEntry>,
    bytes: Vec<u8>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> BlobWriter<T> {
    fn push(&mut self, name: String, t: &Tensor<T>) {
        self.entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: self.bytes.len(),
            len: t.len(),
        });
        for &v in t.data() {
            v.write_le(&mut self.bytes);
        }
    }

    fn push_mlp(&mut self, prefix: &str, mlp: &Mlp<T>) {
        for (name, p) in mlp.param_names(prefix).into_iter().zip(mlp.params()) {
            self.push(name, p);
        }
    }

    fn push_optimizer(&mut self, prefix: &str, opt: &OptimizerState<T>) {
        for (j, t) in opt.first_moments().iter().enumerate() {
            self.push(format!("{prefix}.first.{j}"), t);
        }
        for (j, t) in opt.second_moments().iter().enumerate() {
            self.push(format!("{prefix}.second.{j}"), t);
        }
    }
}

fn activations<T: Scalar>(mlp: &Mlp<T>) -> Vec<Activation> {
    mlp.layers().iter().map(|l| l.activation).collect()
}

fn optimizer_entry<T: Scalar>(opt: &OptimizerState<T>) -> OptimizerEntry {
    OptimizerEntry {
        config: *opt.config(),
        steps: opt.steps(),
        buffers: opt.first_moments().len(),
    }
}

/// Serializes a training state to the checkpoint byte format.
pub fn encode<T: Scalar>(state: &TrainState<T>) -> Result<Vec<u8>> {
    let mut blob = BlobWriter::<T> {
        entries: Vec::new(),
        bytes: Vec::new(),
        _marker: std::marker::PhantomData,
    };
    blob.push_mlp("encoder", state.encoder.mlp());
    for (k, p) in state.predictors.iter().enumerate() {
        blob.push_mlp(&format!("predictor{k}"), p.mlp());
    }
    for (k, p) in state.projectors.iter().enumerate() {
        blob.push_mlp(&format!("projector{k}"), p.mlp());
    }
    blob.push_optimizer("optim.encoder", &state.encoder_opt);
    blob.push_optimizer("optim.predictor", &state.predictor_opt);

    if let Some(r) = state
        .history
        .iter()
        .find(|r| !(r.encoder_loss.is_finite() && r.predictor_loss.is_finite()))
    {
        return Err(Error::Checkpoint(format!("epoch {} has a non-finite loss", r.epoch)));
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        config: state.config.clone(),
        epoch: state.epoch,
        rng: RngEntry {
            algorithm: rng::ALGORITHM.to_string(),
            seed: state.config.seed,
            passes: state.passes,
        },
        last_loss: state.last_loss,
        history: state.history.clone(),
        selection: state.selection.clone(),
        discarded: state.discarded.clone(),
        encoder: ModelEntry {
            activations: activations(state.encoder.mlp()),
        },
        predictors: state
            .predictors
            .iter()
            .map(|p| ModelEntry {
                activations: activations(p.mlp()),
            })
            .collect(),
        projectors: state
            .projectors
            .iter()
            .map(|p| ProjectorEntry {
                candidate_index: p.candidate_index(),
                init: *p.init_spec(),
                init_seed: p.init_spec().seed,
                activations: activations(p.mlp()),
            })
            .collect(),
        encoder_optimizer: optimizer_entry(&state.encoder_opt),
        predictor_optimizer: optimizer_entry(&state.predictor_opt),
        tensors: blob.entries,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + 8 + header.len() + blob.bytes.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob.bytes);
    let digest = crate::digest::sha256(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct BlobReader<'a, T> {
    entries: std::collections::HashMap<&'a str, &'a TensorEntry>,
    blob: &'a [u8],
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> BlobReader<'_, T> {
    fn tensor(&self, name: &str) -> Result<Tensor<T>> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        let end = e
            .len
            .checked_mul(T::BYTES)
            .and_then(|b| b.checked_add(e.offset))
            .filter(|&end| end <= self.blob.len())
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` lies outside the blob")))?;
        let data = self.blob[e.offset..end]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        Tensor::new(e.shape.clone(), data).map_err(|err| Error::Checkpoint(format!("tensor `{name}`: {err}")))
    }

    fn mlp(&self, prefix: &str, acts: &[Activation]) -> Result<Mlp<T>> {
        let layers = acts
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                DenseLayer::from_parts(
                    self.tensor(&format!("{prefix}.layer{i}.weight"))?,
                    self.tensor(&format!("{prefix}.layer{i}.bias"))?,
                    a,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers)
    }

    fn optimizer(&self, prefix: &str, e: &OptimizerEntry) -> Result<OptimizerState<T>> {
        let load = |kind: &str| {
            (0..e.buffers)
                .map(|j| self.tensor(&format!("{prefix}.{kind}.{j}")))
                .collect::<Result<Vec<_>>>()
        };
        let second = if self.entries.contains_key(format!("{prefix}.second.0").as_str()) {
            load("second")?
        } else {
            Vec::new()
        };
        Ok(OptimizerState::from_parts(e.config, e.steps, load("first")?, second))
    }
}

/// Parses and verifies checkpoint bytes.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<TrainState<T>> {
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if crate::digest::sha256(body).as_slice() != trailer {
        return Err(Error::Checkpoint(
            "digest mismatch: file is corrupt or was modified".into(),
        ));
    }
    let header_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&end| end <= body.len())
        .ok_or_else(|| Error::Checkpoint("header length exceeds file size".into()))?;
    let header: Header = serde_json::from_slice(&body[16..header_end])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {} parameters, expected {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let reader = BlobReader::<T> {
        entries: header.tensors.iter().map(|e| (e.name.as_str(), e)).collect(),
        blob: &body[header_end..],
        _marker: std::marker::PhantomData,
    };
    let encoder = EncoderModel::from_mlp(reader.mlp("encoder", &header.encoder.activations)?);
    let predictors = header
        .predictors
        .iter()
        .enumerate()
        .map(|(k, e)| {
            Ok(PredictorModel::from_mlp(
                reader.mlp(&format!("predictor{k}"), &e.activations)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let projectors = header
        .projectors
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let mlp = reader.mlp(&format!("projector{k}"), &e.activations)?;
            ProjectorModel::from_layers(mlp.layers().to_vec(), e.init.with_seed(e.init_seed), e.candidate_index)
        })
        .collect::<Result<Vec<_>>>()?;
    if predictors.len() != projectors.len() {
        return Err(Error::Checkpoint(format!(
            "{} predictors but {} projectors",
            predictors.len(),
            projectors.len()
        )));
    }
    Ok(TrainState {
        config: header.config,
        encoder,
        projectors,
        predictors,
        encoder_opt: reader.optimizer("optim.encoder", &header.encoder_optimizer)?,
        predictor_opt: reader.optimizer("optim.predictor", &header.predictor_optimizer)?,
        epoch: header.epoch,
        passes: header.rng.passes,
        history: header.history,
        last_loss: header.last_loss,
        selection: header.selection,
        discarded: header.discarded,
    })
}

/// Writes the checkpoint atomically (temporary file, then rename) and
/// returns its digest.
pub fn save<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<String> {
    let bytes = encode(state)?;
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::Checkpoint(format!(
            "could not write {}: {e}; the in-memory training state is intact but was not saved",
            path.display()
        ))
    })?;
    Ok(crate::digest::hex(&bytes[bytes.len() - DIGEST_LEN..]))
}

pub fn load<T: Scalar>(path: &Path) -> Result<TrainState<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}

/// The stored SHA-256 trailer of a checkpoint file, as hex.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < DIGEST_LEN {
        return Err(Error::Checkpoint("file too short".into()));
    }
    Ok(crate::digest::hex(&bytes[bytes.len() - DIGEST_LEN..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_clusters;
    use crate::pipeline::{build_state, train};

    fn trained() -> TrainState<f32> {
        let (data, _) = make_synthetic_clusters::<f32>(120, 4, 2, 2, 2.0, 3).unwrap();
        let cfg = TrainConfig {
            projectors: 2,
            latent_dim: 8,
            encoder_hidden: vec![16],
            projector_hidden: vec![16],
            batch_size: 16,
            train_epochs: 2,
            ..TrainConfig::default()
        };
        let mut s = build_state(&cfg, &data).unwrap();
        train(&mut s, &data, |_| Ok(())).unwrap();
        s
    }

    #[test]
    fn round_trip_is_lossless_and_byte_identical() {
        let s = trained();
        let bytes = encode(&s).unwrap();
        let back: TrainState<f32> = decode(&bytes).unwrap();
        let mut expected = s.clone();
        for r in &mut expected.history {
            r.seconds = 0.0;
        }
        assert_eq!(back, expected);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn untrained_state_round_trips() {
        let (data, _) = make_synthetic_clusters::<f32>(120, 4, 2, 2, 2.0, 3).unwrap();
        let cfg = TrainConfig {
            projectors: 2,
            latent_dim: 4,
            encoder_hidden: vec![8],
            projector_hidden: vec![8],
            batch_size: 16,
            ..TrainConfig::default()
        };
        let s = build_state(&cfg, &data).unwrap();
        assert_eq!(decode::<f32>(&encode(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&trained()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        let err = decode::<f32>(&bytes).unwrap_err().to_string();
        assert!(err.contains("digest mismatch"), "{err}");
        assert!(decode::<f32>(b"not a checkpoint at all, clearly not one").is_err());
    }

    #[test]
    fn dtype_is_checked() {
        let bytes = encode(&trained()).unwrap();
        assert!(decode::<f64>(&bytes).unwrap_err().to_string().contains("f32"));
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let s = trained();
        let digest = save(&s, &path).unwrap();
        assert_eq!(file_digest(&path).unwrap(), digest);
        let back: TrainState<f32> = load(&path).unwrap();
        assert_eq!(back.encoder, s.encoder);
        let bad = save(&s, &dir.path().join("missing/dir/model.ckpt")).unwrap_err();
        assert!(bad.to_string().contains("not saved"));
    }
}
