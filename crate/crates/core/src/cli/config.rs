use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_adult, load_csv_pair, make_synthetic_clusters, CsvSchema, Dataset, FeatureMeta};
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::pipeline::TrainConfig;

/// Where the data comes from. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian clusters, split 75/25.
    Synthetic {
        n: usize,
        d_signal: usize,
        d_noise: usize,
        classes: usize,
        sep: f64,
        #[serde(default)]
        seed: u64,
    },
    /// UCI Adult census income: `adult.data` and `adult.test` in `dir`.
    Adult { dir: PathBuf },
    /// Any CSV pair described by a schema.
    Csv {
        train_path: PathBuf,
        test_path: PathBuf,
        label_column: String,
        schema: CsvSchema,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            n: 2000,
            d_signal: 10,
            d_noise: 10,
            classes: 3,
            sep: 3.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSpec::Synthetic { .. } => {}
            DatasetSpec::Adult { dir } => fix(dir),
            DatasetSpec::Csv {
                train_path, test_path, ..
            } => {
                fix(train_path);
                fix(test_path);
            }
        }
    }

    /// Loads train and test splits. Tabular preprocessing is fitted on the
    /// training split unless `meta` supplies a stored fit.
    pub fn load(&self, meta: Option<&FeatureMeta>) -> Result<(Dataset<f32>, Dataset<f32>)> {
        match self {
            DatasetSpec::Synthetic {
                n,
                d_signal,
                d_noise,
                classes,
                sep,
                seed,
            } => make_synthetic_clusters(*n, *d_signal, *d_noise, *classes, *sep, *seed),
            DatasetSpec::Adult { dir } => match meta {
                None => load_adult(dir),
                Some(m) => load_csv_pair(
                    &dir.join("adult.data"),
                    &dir.join("adult.test"),
                    &CsvSchema::adult_income(),
                    "income",
                    Some(m),
                ),
            },
            DatasetSpec::Csv {
                train_path,
                test_path,
                label_column,
                schema,
            } => load_csv_pair(train_path, test_path, schema, label_column, meta),
        }
    }
}

/// The JSON document passed to every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dataset: DatasetSpec::default(),
            probe: ProbeConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

impl RunConfigFile {
    /// Reads, resolves relative paths and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfigFile =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = match self.train.validate() {
            Ok(()) => Vec::new(),
            Err(Error::Config(list)) => list,
            Err(e) => return Err(e),
        };
        self.probe.validate(&mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// The config with every default filled in, as written to a run
    /// directory.
    pub fn effective(&self) -> Self {
        Self {
            train: self.train.resolved(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
