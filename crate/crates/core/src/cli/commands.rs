use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use super::config::RunConfigFile;
use crate::checkpoint;
use crate::data::{Dataset, FeatureMeta};
use crate::diversity::{
    binomial, compute_signature, exhaustive_select, select_diverse, signature_cosines, SelectionResult,
    EXHAUSTIVE_BUDGET,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_raw, EncoderSource, MultiSeedReport};
use crate::pipeline::{build_state, candidate_pool, probe_batch, train, TrainEvent, TrainState};

pub const CHECKPOINT_FILE: &str = "checkpoint.lfr";
pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train_log.tsv";
pub const SELECTION_FILE: &str = "selection.json";
pub const PREPROCESS_FILE: &str = "preprocess.json";

const LOG_HEADER: &str = "epoch\tencoder_loss\tpredictor_loss\tseconds";

#[derive(Debug, Serialize)]
struct SelectionFile<'a> {
    selection: &'a SelectionResult,
    discarded: &'a [usize],
    /// Pairwise cosines of the chosen signatures, in `chosen_indices` order.
    signature_cosines: Vec<Vec<f64>>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Data(format!("cannot create output directory {}: {e}", dir.display())))
}

/// Runs a full pretraining job and returns the final state and the path of
/// the written checkpoint.
pub fn pretrain(cfg: &RunConfigFile) -> Result<(TrainState<f32>, PathBuf)> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    let (train_set, test_set) = cfg.dataset.load(None)?;
    info!(
        "loaded {} training and {} test rows with {} features",
        train_set.len(),
        test_set.len(),
        train_set.feature_dim()
    );
    std::fs::write(out.join(CONFIG_FILE), cfg.effective().to_json()?)?;
    if let Some(meta) = &train_set.meta {
        meta.save(&out.join(PREPROCESS_FILE))?;
    }

    let mut state = build_state(&cfg.train, &train_set)?;
    write_selection(&state, &train_set, &out.join(SELECTION_FILE))?;

    let mut log = File::create(out.join(LOG_FILE))?;
    writeln!(log, "{LOG_HEADER}")?;
    println!("{LOG_HEADER}");
    let eval_every = cfg.train.eval_every;
    train(&mut state, &train_set, |event| {
        if let TrainEvent::EpochEnd { record, state } = event {
            let line = format!(
                "{}\t{:.6}\t{:.6}\t{:.3}",
                record.epoch, record.encoder_loss, record.predictor_loss, record.seconds
            );
            println!("{line}");
            writeln!(log, "{line}")?;
            log.flush()?;
            if eval_every > 0 && state.epoch % eval_every == 0 && state.epoch < state.config.train_epochs {
                let path = out.join(format!("checkpoint_epoch{}.lfr", state.epoch));
                checkpoint::save(state, &path)?;
                let report = evaluate(
                    &state.encoder,
                    &train_set,
                    &test_set,
                    &cfg.probe,
                    cfg.probe.seed,
                    EncoderSource::Lfr,
                )?;
                info!("epoch {}: probe accuracy {:.4}", state.epoch, report.accuracy);
                std::fs::write(
                    out.join(format!("eval_epoch{}.json", state.epoch)),
                    serde_json::to_string_pretty(&report)?,
                )?;
            }
        }
        Ok(())
    })?;

    let path = out.join(CHECKPOINT_FILE);
    let digest = checkpoint::save(&state, &path)?;
    println!("checkpoint: {} (sha256 {digest})", path.display());
    Ok((state, path))
}

fn write_selection(state: &TrainState<f32>, data: &Dataset<f32>, path: &Path) -> Result<()> {
    let probe = probe_batch(data, state.config.batch_size, state.config.seed)?;
    let signatures = state
        .projectors
        .iter()
        .map(|p| compute_signature(p, p.candidate_index() as usize, &probe, state.config.bbt.eps))
        .collect::<Result<Vec<_>>>()?;
    let file = SelectionFile {
        selection: &state.selection,
        discarded: &state.discarded,
        signature_cosines: signature_cosines(&signatures, &state.selection.chosen_indices)?,
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub struct ProbeOptions {
    pub checkpoint: PathBuf,
    pub source: EncoderSource,
    /// Report path; `eval_<source>.json` next to the checkpoint by default.
    pub output: Option<PathBuf>,
}

/// Probes the checkpoint's encoder (or the random-init / raw-feature
/// baselines) over the configured probe seeds and writes the JSON report.
pub fn probe(cfg: &RunConfigFile, opts: &ProbeOptions) -> Result<MultiSeedReport> {
    cfg.validate()?;
    let state: TrainState<f32> = checkpoint::load(&opts.checkpoint)?;
    let digest = checkpoint::file_digest(&opts.checkpoint)?;
    let dir = opts.checkpoint.parent().unwrap_or(Path::new("."));
    let meta_path = dir.join(PREPROCESS_FILE);
    let meta = if meta_path.exists() {
        Some(FeatureMeta::load(&meta_path)?)
    } else {
        None
    };
    let (train_set, test_set) = cfg.dataset.load(meta.as_ref())?;

    let mut runs = Vec::new();
    for seed in cfg.probe.seed_list() {
        let mut report = match opts.source {
            EncoderSource::Lfr => evaluate(&state.encoder, &train_set, &test_set, &cfg.probe, seed, opts.source)?,
            EncoderSource::RandomInit => {
                let encoder = state.encoder.random_like(seed);
                evaluate(&encoder, &train_set, &test_set, &cfg.probe, seed, opts.source)?
            }
            EncoderSource::RawFeatures => evaluate_raw(&train_set, &test_set, &cfg.probe, seed)?,
        };
        report.checkpoint_digest = Some(digest.clone());
        info!("seed {seed}: accuracy {:.4}", report.accuracy);
        runs.push(report);
    }
    let report = MultiSeedReport::from_runs(runs);
    let name = match opts.source {
        EncoderSource::Lfr => "eval_lfr.json",
        EncoderSource::RandomInit => "eval_random_init.json",
        EncoderSource::RawFeatures => "eval_raw.json",
    };
    let path = opts.output.clone().unwrap_or_else(|| dir.join(name));
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectDebugReport {
    pub candidate_count: usize,
    pub discarded: Vec<usize>,
    pub selection: SelectionResult,
    pub signature_cosines: Vec<Vec<f64>>,
    /// Present when the exhaustive search fits the budget.
    pub exhaustive: Option<SelectionResult>,
    pub greedy_matches_exhaustive: Option<bool>,
}

impl SelectDebugReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "candidates: {} (discarded: {:?})",
            self.candidate_count, self.discarded
        );
        let _ = writeln!(s, "chosen: {:?}", self.selection.chosen_indices);
        let _ = writeln!(s, "greedy order: {:?}", self.selection.greedy_order);
        let _ = writeln!(s, "log_det: {:.6}", self.selection.log_det);
        let _ = writeln!(s, "signature cosines:");
        for row in &self.signature_cosines {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(s, "  {}", cells.join(" "));
        }
        match (&self.exhaustive, self.greedy_matches_exhaustive) {
            (Some(ex), Some(matched)) => {
                let _ = writeln!(s, "exhaustive: {:?} (log_det {:.6})", ex.chosen_indices, ex.log_det);
                let _ = writeln!(s, "greedy==exhaustive: {matched}");
            }
            _ => {
                let _ = writeln!(s, "greedy==exhaustive: skipped (more than {EXHAUSTIVE_BUDGET} subsets)");
            }
        }
        s
    }
}

/// Candidate generation and selection only, with an exhaustive cross-check
/// when `C(N, K)` is within budget.
pub fn select_debug(cfg: &RunConfigFile) -> Result<SelectDebugReport> {
    cfg.validate()?;
    let train = cfg.train.resolved();
    let (train_set, _) = cfg.dataset.load(None)?;
    let (candidates, signatures, discarded) = candidate_pool(&train, &train_set)?;
    let selection = select_diverse(&signatures, train.projectors)?;
    let cosines = signature_cosines(&signatures, &selection.chosen_indices)?;
    let (exhaustive, matched) = if binomial(signatures.len(), train.projectors) <= EXHAUSTIVE_BUDGET {
        let ex = exhaustive_select(&signatures, train.projectors)?;
        let matched = ex.chosen_indices == selection.chosen_indices;
        (Some(ex), Some(matched))
    } else {
        (None, None)
    };
    Ok(SelectDebugReport {
        candidate_count: candidates.len(),
        discarded,
        selection,
        signature_cosines: cosines,
        exhaustive,
        greedy_matches_exhaustive: matched,
    })
}
