//! Dataset ingestion, categorical encoding, bias-column handling, and
//! train/test splitting.
//!
//! CSV files are accompanied by a plain-text schema sidecar that declares
//! each column as `numeric`, `categorical`, or `target`, one `name=kind`
//! line per column. Categorical columns are one-hot encoded; the resulting
//! fully numeric matrix is what every other module consumes.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file {0:?} contains no data rows")]
    EmptyFile(String),
    #[error("column {0:?} declared in the schema is missing from the CSV header")]
    MissingColumn(String),
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    UnparsableNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("schema error: {0}")]
    BadSchema(String),
    #[error("dataset has no target column, so labels are unavailable")]
    MissingTarget,
    #[error("dataset needs at least two distinct classes, found {0}")]
    TooFewClasses(usize),
    #[error("label {0:?} does not appear in the model's class list")]
    UnknownLabel(String),
    #[error("train/test split with n = {n} and test fraction {fraction} would leave one side empty")]
    DegenerateSplit { n: usize, fraction: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Declared kind of a source column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Column declarations parsed from a schema sidecar file.
///
/// The sidecar format is one `name=kind` line per column with kind one of
/// `numeric`, `categorical`, or `target`; blank lines and `#` comments are
/// ignored. Column order in the file fixes the feature layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub columns: Vec<(String, ColumnKind)>,
    pub target: Option<String>,
}

impl Schema {
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut columns = Vec::new();
        let mut target = None;
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, kind) = line.split_once('=').ok_or_else(|| {
                DataError::BadSchema(format!("line {}: expected name=kind", lineno + 1))
            })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(DataError::BadSchema(format!(
                    "line {}: empty column name",
                    lineno + 1
                )));
            }
            if !seen.insert(name.to_string()) {
                return Err(DataError::BadSchema(format!(
                    "column {name:?} declared more than once"
                )));
            }
            match kind.trim() {
                "numeric" => columns.push((name.to_string(), ColumnKind::Numeric)),
                "categorical" => columns.push((name.to_string(), ColumnKind::Categorical)),
                "target" => {
                    if target.is_some() {
                        return Err(DataError::BadSchema(
                            "more than one target column declared".into(),
                        ));
                    }
                    target = Some(name.to_string());
                }
                other => {
                    return Err(DataError::BadSchema(format!(
                        "line {}: unknown column kind {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if columns.is_empty() {
            return Err(DataError::BadSchema("no feature columns declared".into()));
        }
        Ok(Schema { columns, target })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// A single cell of a raw (pre-encoding) dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Numeric(f64),
    Categorical(String),
}

/// A parsed CSV: feature cells in schema order plus optional labels.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub columns: Vec<(String, ColumnKind)>,
    pub rows: Vec<Vec<RawValue>>,
    /// Target labels, present when the schema declares a target column.
    pub labels: Option<Vec<String>>,
    pub target_name: Option<String>,
}

impl RawDataset {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Reads a CSV file against a schema. The header must contain every declared
/// column (extra undeclared columns are ignored); row order is preserved.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<RawDataset, DataError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let mut col_idx = Vec::with_capacity(schema.columns.len());
    for (name, kind) in &schema.columns {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.clone()))?;
        col_idx.push((idx, name.clone(), *kind));
    }
    let target_idx = match &schema.target {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingColumn(name.clone()))?,
        ),
        None => None,
    };

    let mut rows = Vec::new();
    let mut labels = target_idx.map(|_| Vec::new());
    for (rownum, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(col_idx.len());
        for (idx, name, kind) in &col_idx {
            let cell = record.get(*idx).unwrap_or("").trim();
            match kind {
                ColumnKind::Numeric => {
                    let value = cell.parse::<f64>().map_err(|_| DataError::UnparsableNumeric {
                        row: rownum + 1,
                        column: name.clone(),
                        value: cell.to_string(),
                    })?;
                    row.push(RawValue::Numeric(value));
                }
                ColumnKind::Categorical => row.push(RawValue::Categorical(cell.to_string())),
            }
        }
        rows.push(row);
        if let (Some(labels), Some(idx)) = (labels.as_mut(), target_idx) {
            labels.push(record.get(idx).unwrap_or("").trim().to_string());
        }
    }
    if rows.is_empty() {
        return Err(DataError::EmptyFile(display));
    }
    Ok(RawDataset {
        columns: schema.columns.clone(),
        rows,
        labels,
        target_name: schema.target.clone(),
    })
}

/// Per-column encoding layout, fit on training data and stored in the model
/// file so that prediction-time inputs map onto the same feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub columns: Vec<EncoderColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderColumn {
    pub name: String,
    pub kind: EncoderKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Numeric,
    /// Categories in encoded column order (sorted lexicographically).
    Categorical { categories: Vec<String> },
}

impl Encoder {
    /// Derives the encoding layout from raw data: numeric columns pass
    /// through, each categorical column expands to one indicator column per
    /// distinct value, categories sorted lexicographically.
    pub fn fit(raw: &RawDataset) -> Encoder {
        let columns = raw
            .columns
            .iter()
            .enumerate()
            .map(|(c, (name, kind))| {
                let kind = match kind {
                    ColumnKind::Numeric => EncoderKind::Numeric,
                    ColumnKind::Categorical => {
                        let mut cats: BTreeSet<String> = BTreeSet::new();
                        for row in &raw.rows {
                            if let RawValue::Categorical(v) = &row[c] {
                                cats.insert(v.clone());
                            }
                        }
                        EncoderKind::Categorical {
                            categories: cats.into_iter().collect(),
                        }
                    }
                };
                EncoderColumn {
                    name: name.clone(),
                    kind,
                }
            })
            .collect();
        Encoder { columns }
    }

    pub fn all_numeric(names: &[String]) -> Encoder {
        Encoder {
            columns: names
                .iter()
                .map(|name| EncoderColumn {
                    name: name.clone(),
                    kind: EncoderKind::Numeric,
                })
                .collect(),
        }
    }

    /// Encoded feature count.
    pub fn width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match &c.kind {
                EncoderKind::Numeric => 1,
                EncoderKind::Categorical { categories } => categories.len(),
            })
            .sum()
    }

    /// Encoded feature names; indicator columns are named `column=category`.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for col in &self.columns {
            match &col.kind {
                EncoderKind::Numeric => names.push(col.name.clone()),
                EncoderKind::Categorical { categories } => {
                    for cat in categories {
                        names.push(format!("{}={}", col.name, cat));
                    }
                }
            }
        }
        names
    }

    /// Encodes raw rows into the fixed layout. Source columns are matched by
    /// name, so CSV column order is free to differ from training. Category
    /// values unseen at fit time encode to an all-zero indicator group.
    pub fn encode(&self, raw: &RawDataset) -> Result<Array2<f64>, DataError> {
        let mut source = Vec::with_capacity(self.columns.len());
        for col in &self.columns {
            let idx = raw
                .columns
                .iter()
                .position(|(name, _)| name == &col.name)
                .ok_or_else(|| DataError::MissingColumn(col.name.clone()))?;
            source.push(idx);
        }
        let n = raw.rows.len();
        let p = self.width();
        let mut x = Array2::zeros((n, p));
        for (r, row) in raw.rows.iter().enumerate() {
            let mut offset = 0;
            for (col, &src) in self.columns.iter().zip(&source) {
                match (&col.kind, &row[src]) {
                    (EncoderKind::Numeric, RawValue::Numeric(v)) => {
                        x[[r, offset]] = *v;
                        offset += 1;
                    }
                    (EncoderKind::Categorical { categories }, RawValue::Categorical(v)) => {
                        if let Ok(k) = categories.binary_search(v) {
                            x[[r, offset + k]] = 1.0;
                        }
                        offset += categories.len();
                    }
                    _ => {
                        return Err(DataError::BadSchema(format!(
                            "column {:?} has a different kind than the encoder expects",
                            col.name
                        )))
                    }
                }
            }
        }
        Ok(x)
    }
}

/// A fully numeric dataset: encoded features, class indices, and the
/// metadata needed to interpret and reproduce the encoding.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub encoder: Encoder,
}

impl Dataset {
    /// Builds a dataset from already numeric parts, checking the shape
    /// invariants (n >= 1, p >= 1, k >= 2, labels in range).
    pub fn from_parts(
        x: Array2<f64>,
        y: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Dataset, DataError> {
        if x.nrows() == 0 || x.nrows() != y.len() {
            return Err(DataError::BadSchema(format!(
                "feature matrix has {} rows but there are {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 || x.ncols() != feature_names.len() {
            return Err(DataError::BadSchema(
                "feature names do not match matrix width".into(),
            ));
        }
        if class_names.len() < 2 {
            return Err(DataError::TooFewClasses(class_names.len()));
        }
        if y.iter().any(|&c| c >= class_names.len()) {
            return Err(DataError::BadSchema("class index out of range".into()));
        }
        let encoder = Encoder::all_numeric(&feature_names);
        Ok(Dataset {
            x,
            y,
            class_names,
            feature_names,
            encoder,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let x = self.x.select(Axis(0), indices);
        let y = indices.iter().map(|&i| self.y[i]).collect();
        Dataset {
            x,
            y,
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
            encoder: self.encoder.clone(),
        }
    }

    /// Maps string labels onto this dataset's class indices.
    pub fn class_index(&self, label: &str) -> Result<usize, DataError> {
        self.class_names
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| DataError::UnknownLabel(label.to_string()))
    }
}

/// One-hot encodes a raw dataset. Class names are the distinct labels sorted
/// lexicographically, so the label-to-index map is reproducible across runs.
pub fn one_hot_encode(raw: &RawDataset) -> Result<Dataset, DataError> {
    let labels = raw.labels.as_ref().ok_or(DataError::MissingTarget)?;
    let encoder = Encoder::fit(raw);
    let x = encoder.encode(raw)?;
    if x.ncols() == 0 {
        return Err(DataError::BadSchema("no feature columns after encoding".into()));
    }
    let class_names: Vec<String> = labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if class_names.len() < 2 {
        return Err(DataError::TooFewClasses(class_names.len()));
    }
    let y = labels
        .iter()
        .map(|l| class_names.binary_search(l).expect("label from the same set"))
        .collect();
    let feature_names = encoder.feature_names();
    Ok(Dataset {
        x,
        y,
        class_names,
        feature_names,
        encoder,
    })
}

/// A feature matrix whose last column is identically one.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedMatrix(Array2<f64>);

impl BiasedMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Appends the constant-one bias column: n x p becomes n x (p+1).
pub fn append_bias(x: &Array2<f64>) -> BiasedMatrix {
    let n = x.nrows();
    let mut out = Array2::ones((n, x.ncols() + 1));
    out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
    BiasedMatrix(out)
}

/// Seeded shuffle split. The test side gets `floor(n * test_fraction)` rows
/// (at least one); the remainder trains. Returns `(train, test)`.
pub fn train_test_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let n = dataset.n_samples();
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::DegenerateSplit {
            n,
            fraction: test_fraction,
        });
    }
    let test_n = ((n as f64 * test_fraction).floor() as usize).max(1);
    if test_n >= n {
        return Err(DataError::DegenerateSplit {
            n,
            fraction: test_fraction,
        });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let (test_idx, train_idx) = indices.split_at(test_n);
    Ok((dataset.subset(train_idx), dataset.subset(test_idx)))
}
