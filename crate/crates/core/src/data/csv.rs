use std::collections::BTreeSet;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::{ColumnMeta, Dataset, FeatureMeta, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviations below this are replaced by 1.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    /// Read but not used as a feature (the label column may be declared so).
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Every column of the file, in order.
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub has_header: bool,
    /// Lines starting with this character are skipped.
    #[serde(default)]
    pub comment_char: Option<char>,
    /// Rows containing this token in any column are dropped.
    #[serde(default)]
    pub missing_token: Option<String>,
    /// Suffix removed from label values before matching (e.g. `"."`).
    #[serde(default)]
    pub label_strip_suffix: Option<String>,
}

impl CsvSchema {
    /// The UCI Adult census files (`adult.data` / `adult.test`): six numeric
    /// columns z-scored, eight categorical columns one-hot encoded, rows with
    /// `?` dropped, binary label from `income`.
    pub fn adult_income() -> Self {
        use ColumnKind::*;
        let cols = [
            ("age", Numeric),
            ("workclass", Categorical),
            ("fnlwgt", Numeric),
            ("education", Categorical),
            ("education_num", Numeric),
            ("marital_status", Categorical),
            ("occupation", Categorical),
            ("relationship", Categorical),
            ("race", Categorical),
            ("sex", Categorical),
            ("capital_gain", Numeric),
            ("capital_loss", Numeric),
            ("hours_per_week", Numeric),
            ("native_country", Categorical),
            ("income", Ignore),
        ];
        Self {
            columns: cols.iter().map(|&(n, k)| ColumnSpec::new(n, k)).collect(),
            has_header: false,
            comment_char: Some('|'),
            missing_token: Some("?".into()),
            label_strip_suffix: Some(".".into()),
        }
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Data(format!("label column `{name}` is not in the schema")))
    }
}

/// Rows of a CSV file that survived missing-value filtering.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub rows: Vec<Vec<String>>,
    /// 1-based source line of each row.
    pub lines: Vec<u64>,
    pub dropped_missing: usize,
}

impl RawTable {
    pub fn read(path: &Path, schema: &CsvSchema) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        let mut builder = ::csv::ReaderBuilder::new();
        builder
            .has_headers(schema.has_header)
            .trim(::csv::Trim::All)
            .flexible(true);
        if let Some(c) = schema.comment_char {
            builder.comment(Some(c as u8));
        }
        let mut reader = builder.from_reader(file);
        if schema.has_header {
            let header = reader
                .headers()
                .map_err(|e| Error::Data(format!("{}: bad header: {e}", path.display())))?;
            if header.len() != schema.columns.len() {
                return Err(Error::Data(format!(
                    "{}: header has {} columns, schema declares {}",
                    path.display(),
                    header.len(),
                    schema.columns.len()
                )));
            }
        }
        let mut table = RawTable {
            rows: Vec::new(),
            lines: Vec::new(),
            dropped_missing: 0,
        };
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Data(format!("{}:{line}: unparseable row: {e}", path.display()))
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            if record.len() != schema.columns.len() {
                return Err(Error::Data(format!(
                    "{}:{line}: expected {} fields, found {}",
                    path.display(),
                    schema.columns.len(),
                    record.len()
                )));
            }
            if let Some(tok) = &schema.missing_token {
                if record.iter().any(|f| f == tok) {
                    table.dropped_missing += 1;
                    continue;
                }
            }
            table.rows.push(record.iter().map(str::to_string).collect());
            table.lines.push(line);
        }
        if table.dropped_missing > 0 {
            info!(
                "{}: dropped {} rows with missing values",
                path.display(),
                table.dropped_missing
            );
        }
        Ok(table)
    }

    fn label_value<'a>(&self, raw: &'a str, schema: &CsvSchema) -> &'a str {
        match &schema.label_strip_suffix {
            Some(s) => raw.strip_suffix(s.as_str()).unwrap_or(raw),
            None => raw,
        }
    }

    fn parse_number(&self, row: usize, col: usize, name: &str) -> Result<f64> {
        let raw = &self.rows[row][col];
        raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
            Error::Data(format!(
                "line {}: column `{name}` value `{raw}` is not a finite number",
                self.lines[row]
            ))
        })
    }

    /// Fits standardization statistics, category maps and label classes.
    pub fn fit(&self, schema: &CsvSchema, label_column: &str) -> Result<FeatureMeta> {
        let label_idx = schema.column_index(label_column)?;
        if self.rows.is_empty() {
            return Err(Error::Data("cannot fit preprocessing on an empty table".into()));
        }
        let mut columns = Vec::new();
        for (c, spec) in schema.columns.iter().enumerate() {
            if c == label_idx {
                continue;
            }
            match spec.kind {
                ColumnKind::Ignore => {}
                ColumnKind::Numeric => {
                    let values = (0..self.rows.len())
                        .map(|r| self.parse_number(r, c, &spec.name))
                        .collect::<Result<Vec<_>>>()?;
                    let n = values.len() as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let std = if var.sqrt() < MIN_STD { 1.0 } else { var.sqrt() };
                    columns.push(ColumnMeta::Numeric {
                        name: spec.name.clone(),
                        mean,
                        std,
                    });
                }
                ColumnKind::Categorical => {
                    let categories: BTreeSet<&str> = self.rows.iter().map(|r| r[c].as_str()).collect();
                    columns.push(ColumnMeta::Categorical {
                        name: spec.name.clone(),
                        categories: categories.into_iter().map(str::to_string).collect(),
                    });
                }
            }
        }
        let classes: BTreeSet<&str> = self
            .rows
            .iter()
            .map(|r| self.label_value(&r[label_idx], schema))
            .collect();
        if classes.len() < 2 {
            return Err(Error::Data(format!(
                "label column `{label_column}` has fewer than two classes"
            )));
        }
        Ok(FeatureMeta {
            columns,
            label_column: label_column.to_string(),
            label_classes: classes.into_iter().map(str::to_string).collect(),
        })
    }

    /// Applies fitted preprocessing. Unknown categories encode as all zeros;
    /// unknown labels are an error.
    pub fn transform<T: Scalar>(&self, schema: &CsvSchema, meta: &FeatureMeta, split: Split) -> Result<Dataset<T>> {
        let label_idx = schema.column_index(&meta.label_column)?;
        let width = meta.feature_dim();
        let mut data = Vec::with_capacity(self.rows.len() * width);
        let mut labels = Vec::with_capacity(self.rows.len());
        for (r, row) in self.rows.iter().enumerate() {
            for col in &meta.columns {
                let c = schema
                    .columns
                    .iter()
                    .position(|s| s.name == col.name())
                    .ok_or_else(|| Error::Data(format!("column `{}` missing from schema", col.name())))?;
                match col {
                    ColumnMeta::Numeric { name, mean, std } => {
                        let v = self.parse_number(r, c, name)?;
                        data.push(T::lit((v - mean) / std));
                    }
                    ColumnMeta::Categorical { categories, .. } => {
                        let hit = categories.binary_search_by(|k| k.as_str().cmp(&row[c])).ok();
                        data.extend((0..categories.len()).map(|i| if Some(i) == hit { T::one() } else { T::zero() }));
                    }
                }
            }
            let label = self.label_value(&row[label_idx], schema);
            let class = meta.label_classes.iter().position(|k| k == label).ok_or_else(|| {
                Error::Data(format!(
                    "line {}: label `{label}` not seen in training data",
                    self.lines[r]
                ))
            })?;
            labels.push(class);
        }
        let features = Tensor::new(vec![self.rows.len(), width], data)?;
        let mut ds = Dataset::new(features, labels, meta.label_classes.len(), split)?;
        ds.meta = Some(meta.clone());
        Ok(ds)
    }
}

/// Loads a training split, fitting preprocessing on it.
pub fn load_csv<T: Scalar>(path: &Path, schema: &CsvSchema, label_column: &str) -> Result<Dataset<T>> {
    let table = RawTable::read(path, schema)?;
    let meta = table.fit(schema, label_column)?;
    table.transform(schema, &meta, Split::Train)
}

/// Loads train and test splits; preprocessing is fitted on train only (or
/// taken from `meta` when given).
pub fn load_csv_pair<T: Scalar>(
    train_path: &Path,
    test_path: &Path,
    schema: &CsvSchema,
    label_column: &str,
    meta: Option<&FeatureMeta>,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let train = RawTable::read(train_path, schema)?;
    let fitted;
    let meta = match meta {
        Some(m) => m,
        None => {
            fitted = train.fit(schema, label_column)?;
            &fitted
        }
    };
    let test = RawTable::read(test_path, schema)?;
    Ok((
        train.transform(schema, meta, Split::Train)?,
        test.transform(schema, meta, Split::Test)?,
    ))
}

/// `adult.data` / `adult.test` from `dir`.
pub fn load_adult<T: Scalar>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    load_csv_pair(
        &dir.join("adult.data"),
        &dir.join("adult.test"),
        &CsvSchema::adult_income(),
        "income",
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema() -> CsvSchema {
        CsvSchema {
            columns: vec![
                ColumnSpec::new("x", ColumnKind::Numeric),
                ColumnSpec::new("colour", ColumnKind::Categorical),
                ColumnSpec::new("constant", ColumnKind::Numeric),
                ColumnSpec::new("y", ColumnKind::Ignore),
            ],
            has_header: true,
            comment_char: Some('|'),
            missing_token: Some("?".into()),
            label_strip_suffix: Some(".".into()),
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn preprocessing_is_fitted_on_train_only() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(
            dir.path(),
            "train.csv",
            "x,colour,constant,y\n1, red, 5, a\n3, blue, 5, b\n?, red, 5, a\n5, red, 5, b\n",
        );
        let test = write(
            dir.path(),
            "test.csv",
            "x,colour,constant,y\n| comment line\n100, green, 7, a.\n\n3, blue, 5, b.\n",
        );
        let (tr, te) = load_csv_pair::<f64>(&train, &test, &schema(), "y", None).unwrap();
        assert_eq!(tr.len(), 3);
        assert_eq!(te.len(), 2);
        let meta = tr.meta.as_ref().unwrap();
        // x: mean 3, population std sqrt(8/3), fitted on train rows only
        match &meta.columns[0] {
            ColumnMeta::Numeric { mean, std, .. } => {
                assert_eq!(*mean, 3.0);
                assert!((std - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(meta.feature_dim(), 1 + 2 + 1);
        // constant column: std guard gives zeros
        assert!(tr.features.data().chunks(4).all(|r| r[3] == 0.0));
        // unseen test category encodes as all zeros
        assert_eq!(&te.features.row(0)[1..3], &[0.0, 0.0]);
        assert_eq!(&te.features.row(1)[1..3], &[1.0, 0.0]);
        assert_eq!(te.labels, vec![0, 1]);
        // one-hot rows sum to one on train
        assert!(tr.features.data().chunks(4).all(|r| r[1] + r[2] == 1.0));
    }

    #[test]
    fn reapplying_meta_reproduces_train_features() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(
            dir.path(),
            "t.csv",
            "x,colour,constant,y\n1.5, red, 5, a\n-2, blue, 5, b\n",
        );
        let s = schema();
        let ds = load_csv::<f32>(&train, &s, "y").unwrap();
        let meta_path = dir.path().join("meta.json");
        ds.meta.as_ref().unwrap().save(&meta_path).unwrap();
        let meta = FeatureMeta::load(&meta_path).unwrap();
        let again = RawTable::read(&train, &s)
            .unwrap()
            .transform::<f32>(&s, &meta, Split::Train)
            .unwrap();
        assert_eq!(again.features, ds.features);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(
            dir.path(),
            "bad.csv",
            "x,colour,constant,y\n1, red, 5, a\nzz, red, 5, b\n",
        );
        let err = load_csv::<f32>(&bad, &schema(), "y").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        let short = write(dir.path(), "short.csv", "x,colour,constant,y\n1, red, 5\n");
        let err = load_csv::<f32>(&short, &schema(), "y").unwrap_err().to_string();
        assert!(err.contains(":2"), "{err}");

        let ok = write(
            dir.path(),
            "ok.csv",
            "x,colour,constant,y\n1, red, 5, a\n2, red, 5, b\n",
        );
        assert!(load_csv::<f32>(&ok, &schema(), "label").is_err());
    }

    #[test]
    fn single_class_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "one.csv",
            "x,colour,constant,y\n1, red, 5, a\n2, red, 5, a\n",
        );
        assert!(load_csv::<f32>(&p, &schema(), "y").is_err());
    }
}
