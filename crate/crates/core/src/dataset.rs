//! Tabular data ingestion and preprocessing.
//!
//! Features are standardized to zero mean and unit population standard
//! deviation (constant columns are only centered), after which an
//! unpenalized all-ones intercept column may be appended as the last column.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub mean: f64,
    pub scale: f64,
    pub is_constant: bool,
    pub is_intercept: bool,
}

impl ColumnMeta {
    fn raw() -> Self {
        Self {
            mean: 0.0,
            scale: 1.0,
            is_constant: false,
            is_intercept: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    features: DMatrix<f64>,
    responses: DVector<f64>,
    columns: Vec<ColumnMeta>,
    task: Task,
    standardized: bool,
}

impl Dataset {
    /// Wraps raw features and responses. Classification responses must be
    /// exactly ±1.
    pub fn new(features: DMatrix<f64>, responses: DVector<f64>, task: Task) -> Result<Self> {
        if features.nrows() != responses.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows but {} responses",
                features.nrows(),
                responses.len()
            )));
        }
        if features.iter().chain(responses.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite value".into()));
        }
        if task == Task::Classification && responses.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidDataset(
                "classification responses must be -1 or +1".into(),
            ));
        }
        let columns = vec![ColumnMeta::raw(); features.ncols()];
        Ok(Self {
            features,
            responses,
            columns,
            task,
            standardized: false,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn has_intercept(&self) -> bool {
        self.columns.iter().any(|c| c.is_intercept)
    }

    /// Per-column flag, true at the intercept coordinate.
    pub fn intercept_mask(&self) -> Vec<bool> {
        self.columns.iter().map(|c| c.is_intercept).collect()
    }

    /// Rows `rows` of this dataset, column metadata carried over.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let features = self.features.select_rows(rows);
        let responses = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.responses[i]));
        Dataset {
            features,
            responses,
            columns: self.columns.clone(),
            task: self.task,
            standardized: self.standardized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResponseColumn {
    Index(usize),
    Name(String),
}

impl std::fmt::Display for ResponseColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ResponseColumn::Index(i) => write!(f, "#{i}"),
            ResponseColumn::Name(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub response: ResponseColumn,
    pub has_header: bool,
    pub task: Task,
}

/// Reads a comma-separated file. Row numbers in errors are 1-based and
/// count data rows only (the header is not counted).
///
/// Classification labels are mapped by sorted order: the smaller label
/// becomes -1, the larger +1.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, schema)
}

pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .trim(csv::Trim::All)
        .quoting(false)
        .from_reader(text.as_bytes());

    let header: Option<Vec<String>> = if schema.has_header {
        let h = reader.headers().map_err(|e| Error::Csv {
            row: 0,
            message: e.to_string(),
        })?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            row: idx + 1,
            message: e.to_string(),
        })?;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(Vec::len))
        .unwrap_or(0);

    let response_idx = match &schema.response {
        ResponseColumn::Index(i) if *i < width => *i,
        ResponseColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .or_else(|| name.parse::<usize>().ok().filter(|&i| i < width))
            .ok_or_else(|| Error::MissingResponse(schema.response.to_string()))?,
        _ => return Err(Error::MissingResponse(schema.response.to_string())),
    };

    let n = rows.len();
    let p = width - 1;
    let mut features = DMatrix::zeros(n, p);
    let mut raw_responses: Vec<&str> = Vec::with_capacity(n);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Csv {
                row: i + 1,
                message: format!("expected {width} fields, found {}", row.len()),
            });
        }
        let mut col = 0;
        for (c, cell) in row.iter().enumerate() {
            if c == response_idx {
                raw_responses.push(cell);
                continue;
            }
            features[(i, col)] = parse_cell(cell, i + 1, c + 1)?;
            col += 1;
        }
    }

    let responses = match schema.task {
        Task::Regression => raw_responses
            .iter()
            .enumerate()
            .map(|(i, s)| parse_cell(s, i + 1, response_idx + 1))
            .collect::<Result<Vec<_>>>()?,
        Task::Classification => map_labels(&raw_responses)?,
    };
    Dataset::new(features, DVector::from_vec(responses), schema.task)
}

fn parse_cell(cell: &str, row: usize, column: usize) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column,
            value: cell.to_string(),
        })
}

fn map_labels(raw: &[&str]) -> Result<Vec<f64>> {
    // Numeric labels sort numerically; anything else sorts as text.
    let numeric: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut distinct = values.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() != 2 {
            return Err(Error::LabelCount(distinct.len()));
        }
        return Ok(values
            .iter()
            .map(|&v| if v == distinct[0] { -1.0 } else { 1.0 })
            .collect());
    }
    let mut distinct: Vec<&str> = raw.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != 2 {
        return Err(Error::LabelCount(distinct.len()));
    }
    Ok(raw
        .iter()
        .map(|&s| if s == distinct[0] { -1.0 } else { 1.0 })
        .collect())
}

/// Centers every column and scales non-constant columns to unit population
/// standard deviation. Must run before [`attach_intercept`].
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    if ds.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    if ds.has_intercept() {
        return Err(Error::InvalidDataset(
            "standardize must run before attach_intercept".into(),
        ));
    }
    let n = ds.n() as f64;
    let mut features = ds.features.clone();
    let mut columns = Vec::with_capacity(ds.p());
    for (j, mut col) in features.column_iter_mut().enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let is_constant = sd <= 1e-12 * (1.0 + mean.abs());
        let scale = if is_constant { 1.0 } else { sd };
        col.apply(|v| *v = (*v - mean) / scale);
        let prev = &ds.columns[j];
        columns.push(ColumnMeta {
            mean: prev.mean + prev.scale * mean,
            scale: prev.scale * scale,
            is_constant,
            is_intercept: false,
        });
    }
    Ok(Dataset {
        features,
        responses: ds.responses.clone(),
        columns,
        task: ds.task,
        standardized: true,
    })
}

/// Applies the column transform recorded in `reference` (a standardized
/// dataset) to the raw rows of `raw`, appending an intercept if the
/// reference carries one. Used to map held-out folds into training
/// coordinates.
pub fn apply_standardization(reference: &Dataset, raw: &Dataset) -> Result<Dataset> {
    let feature_cols: Vec<&ColumnMeta> =
        reference.columns.iter().filter(|c| !c.is_intercept).collect();
    if raw.has_intercept() || raw.p() != feature_cols.len() {
        return Err(Error::InvalidDataset(format!(
            "expected {} raw feature columns, found {}",
            feature_cols.len(),
            raw.p()
        )));
    }
    let mut features = raw.features.clone();
    for (mut col, meta) in features.column_iter_mut().zip(&feature_cols) {
        col.apply(|v| *v = (*v - meta.mean) / meta.scale);
    }
    let out = Dataset {
        features,
        responses: raw.responses.clone(),
        columns: feature_cols.into_iter().cloned().collect(),
        task: raw.task,
        standardized: true,
    };
    if reference.has_intercept() {
        attach_intercept(&out)
    } else {
        Ok(out)
    }
}

/// Appends an all-ones column flagged as the (unpenalized) intercept.
pub fn attach_intercept(ds: &Dataset) -> Result<Dataset> {
    if ds.has_intercept() {
        return Err(Error::InvalidDataset("intercept already attached".into()));
    }
    let n = ds.n();
    let p = ds.p();
    let features = ds.features.clone().insert_column(p, 1.0);
    let mut columns = ds.columns.clone();
    columns.push(ColumnMeta {
        mean: 0.0,
        scale: 1.0,
        is_constant: true,
        is_intercept: true,
    });
    debug_assert_eq!(features.nrows(), n);
    Ok(Dataset {
        features,
        responses: ds.responses.clone(),
        columns,
        task: ds.task,
        standardized: ds.standardized,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    /// (train rows, test rows) for fold `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of.len()).partition(|&i| self.fold_of[i] != fold)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffled, balanced assignment of `n` rows to `k` folds.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count {k} must lie in [2, {n}]"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % k;
    }
    Ok(FoldAssignment { fold_of, k })
}
