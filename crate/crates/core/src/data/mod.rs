//! Datasets: CSV ingestion with train-fitted preprocessing, a synthetic
//! cluster benchmark, and seeded mini-batch iteration.

mod batches;
mod csv;
mod synthetic;

pub use self::batches::{batches, plan_batches, Batch, BatchIterator};
pub use self::csv::{load_adult, load_csv, load_csv_pair, ColumnKind, ColumnSpec, CsvSchema, RawTable};
pub use self::synthetic::{make_synthetic_clusters, SyntheticSpec};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// How one raw column maps to feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnMeta {
    /// z-scored with train-split statistics.
    Numeric { name: String, mean: f64, std: f64 },
    /// One-hot over the train-split categories, in this order.
    Categorical { name: String, categories: Vec<String> },
}

impl ColumnMeta {
    pub fn width(&self) -> usize {
        match self {
            ColumnMeta::Numeric { .. } => 1,
            ColumnMeta::Categorical { categories, .. } => categories.len(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ColumnMeta::Numeric { name, .. } | ColumnMeta::Categorical { name, .. } => name,
        }
    }
}

/// Preprocessing fitted on a training split; reused verbatim for test data
/// and for later probing runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub columns: Vec<ColumnMeta>,
    pub label_column: String,
    /// Class names; the label of a row is the index into this list.
    pub label_classes: Vec<String>,
}

impl FeatureMeta {
    pub fn feature_dim(&self) -> usize {
        self.columns.iter().map(ColumnMeta::width).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub meta: Option<FeatureMeta>,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(features: Tensor<T>, labels: Vec<usize>, n_classes: usize, split: Split) -> Result<Self> {
        let (rows, _) = features.dims2()?;
        if rows != labels.len() {
            return Err(Error::Data(format!("{rows} feature rows but {} labels", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {n_classes})")));
        }
        if !features.is_finite() {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            meta: None,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            meta: self.meta.clone(),
            split: self.split,
        })
    }
}
