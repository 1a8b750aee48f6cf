//! Claim datasets: loading, feature normalization to the unit hypercube,
//! and deterministic cross-validation folds.
//!
//! The expected CSV layout is a header row `id,<feature names...>,label`
//! where the label column is optional and feature cells may be blank
//! (missing). A JSON mirror (an array of objects keyed by the same column
//! names) is accepted for the same schema.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::stream_rng;

/// Number of features produced by the upstream extraction pipeline; used
/// when no explicit schema is supplied.
pub const DEFAULT_FEATURE_DIMENSION: usize = 41;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema feature names must be unique and non-empty")]
    InvalidSchema,
    #[error("header mismatch: expected `id`, the schema features and optional `label`, got {0:?}")]
    HeaderMismatch(Vec<String>),
    #[error("row {row}: expected {expected} fields, got {got}")]
    WrongArity { row: usize, expected: usize, got: usize },
    #[error("row {row}, feature `{feature}`: cannot parse `{value}` as a number")]
    BadNumber { row: usize, feature: String, value: String },
    #[error("row {row}: unknown label token `{token}`")]
    UnknownLabel { row: usize, token: String },
    #[error("row {row}: duplicate claim id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: unknown field `{field}`")]
    UnknownField { row: usize, field: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot fit a normalizer on an empty training set")]
    EmptyTrainingSet,
    #[error("feature `{0}` has no observed values in the training set")]
    UnobservedFeature(String),
    #[error("record `{id}` has {got} features, schema expects {expected}")]
    RecordDimensionMismatch { id: String, expected: usize, got: usize },
    #[error("fold count must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("dataset of {size} records cannot be split into {folds} folds")]
    TooFewRecords { size: usize, folds: usize },
    #[error("claim `{0}` is unlabeled; cross-validation requires ground truth")]
    UnlabeledClaim(String),
}

/// Binary replication outcome of a claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Replicable,
    NotReplicable,
}

impl Label {
    pub fn parse(token: &str) -> Option<Label> {
        match token {
            "Replicable" => Some(Label::Replicable),
            "NotReplicable" => Some(Label::NotReplicable),
            _ => None,
        }
    }

    /// Target value for RMSE: 1 for Replicable, 0 for NotReplicable.
    pub fn target(self) -> f64 {
        match self {
            Label::Replicable => 1.0,
            Label::NotReplicable => 0.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Replicable => write!(f, "Replicable"),
            Label::NotReplicable => write!(f, "NotReplicable"),
        }
    }
}

/// Ordered feature names; the dimension of the shared feature space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() || !seen.insert(name.clone()) {
                return Err(DataError::InvalidSchema);
            }
        }
        if names.is_empty() {
            return Err(DataError::InvalidSchema);
        }
        Ok(Self { names })
    }

    /// Generic `f1..fN` schema used when no explicit schema file is given.
    pub fn generic(dimension: usize) -> Self {
        Self {
            names: (1..=dimension).map(|i| format!("f{i}")).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dimension(&self) -> usize {
        self.names.len()
    }

    /// Loads a schema from a JSON array of feature names.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let names: Vec<String> = serde_json::from_reader(BufReader::new(file))?;
        Self::new(names)
    }
}

/// One paper/claim: raw feature vector (entries may be missing) and an
/// optional replication label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub raw_features: Vec<Option<f64>>,
    pub label: Option<Label>,
}

/// Loads a dataset from CSV (or its JSON mirror, selected by extension).
pub fn load_dataset(path: &Path, schema: &FeatureSchema) -> Result<Vec<ClaimRecord>, DataError> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        load_json(path, schema)
    } else {
        load_csv(path, schema)
    }
}

fn load_csv(path: &Path, schema: &FeatureSchema) -> Result<Vec<ClaimRecord>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(BufReader::new(file));

    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let d = schema.dimension();
    let has_label = match header.len() {
        n if n == d + 2 => true,
        n if n == d + 1 => false,
        _ => return Err(DataError::HeaderMismatch(header)),
    };
    let mut expected: Vec<String> = Vec::with_capacity(d + 2);
    expected.push("id".to_string());
    expected.extend(schema.names().iter().cloned());
    if has_label {
        expected.push("label".to_string());
    }
    if header != expected {
        return Err(DataError::HeaderMismatch(header));
    }

    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let got = row.len();
        if got != expected.len() {
            return Err(DataError::WrongArity {
                row: row_no,
                expected: expected.len(),
                got,
            });
        }
        let id = row[0].trim().to_string();
        if !seen_ids.insert(id.clone()) {
            return Err(DataError::DuplicateId { row: row_no, id });
        }
        let mut raw_features = Vec::with_capacity(d);
        for (j, name) in schema.names().iter().enumerate() {
            raw_features.push(parse_cell(row[j + 1].trim(), row_no, name)?);
        }
        let label = if has_label {
            parse_label(row[d + 1].trim(), row_no)?
        } else {
            None
        };
        records.push(ClaimRecord { id, raw_features, label });
    }
    Ok(records)
}

fn parse_cell(cell: &str, row: usize, feature: &str) -> Result<Option<f64>, DataError> {
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(DataError::BadNumber {
            row,
            feature: feature.to_string(),
            value: cell.to_string(),
        }),
    }
}

fn parse_label(cell: &str, row: usize) -> Result<Option<Label>, DataError> {
    if cell.is_empty() {
        return Ok(None);
    }
    Label::parse(cell).map(Some).ok_or_else(|| DataError::UnknownLabel {
        row,
        token: cell.to_string(),
    })
}

fn load_json(path: &Path, schema: &FeatureSchema) -> Result<Vec<ClaimRecord>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let rows: Vec<BTreeMap<String, serde_json::Value>> =
        serde_json::from_reader(BufReader::new(file))?;

    let known: HashSet<&str> = schema.names().iter().map(|s| s.as_str()).collect();
    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (i, row) in rows.iter().enumerate() {
        let row_no = i + 1;
        for field in row.keys() {
            if field != "id" && field != "label" && !known.contains(field.as_str()) {
                return Err(DataError::UnknownField {
                    row: row_no,
                    field: field.clone(),
                });
            }
        }
        let id = match row.get("id").and_then(|v| v.as_str()) {
            Some(s) => s.to_string(),
            None => {
                return Err(DataError::UnknownField {
                    row: row_no,
                    field: "id".to_string(),
                })
            }
        };
        if !seen_ids.insert(id.clone()) {
            return Err(DataError::DuplicateId { row: row_no, id });
        }
        let mut raw_features = Vec::with_capacity(schema.dimension());
        for name in schema.names() {
            let value = match row.get(name) {
                None | Some(serde_json::Value::Null) => None,
                Some(serde_json::Value::Number(n)) => match n.as_f64() {
                    Some(v) if v.is_finite() => Some(v),
                    _ => {
                        return Err(DataError::BadNumber {
                            row: row_no,
                            feature: name.clone(),
                            value: n.to_string(),
                        })
                    }
                },
                Some(other) => {
                    return Err(DataError::BadNumber {
                        row: row_no,
                        feature: name.clone(),
                        value: other.to_string(),
                    })
                }
            };
            raw_features.push(value);
        }
        let label = match row.get("label") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) if s.is_empty() => None,
            Some(serde_json::Value::String(s)) => Some(Label::parse(s).ok_or_else(|| {
                DataError::UnknownLabel {
                    row: row_no,
                    token: s.clone(),
                }
            })?),
            Some(other) => {
                return Err(DataError::UnknownLabel {
                    row: row_no,
                    token: other.to_string(),
                })
            }
        };
        records.push(ClaimRecord { id, raw_features, label });
    }
    Ok(records)
}

/// Per-feature min/max/median fitted on training data only. The median of
/// the observed training values doubles as the imputation value for
/// missing entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub median: Vec<f64>,
}

impl NormalizationParams {
    pub fn dimension(&self) -> usize {
        self.min.len()
    }
}

/// Fits min/max/median per feature over the observed (non-missing)
/// training values.
pub fn fit_normalizer(
    schema: &FeatureSchema,
    train: &[ClaimRecord],
) -> Result<NormalizationParams, DataError> {
    if train.is_empty() {
        return Err(DataError::EmptyTrainingSet);
    }
    let d = schema.dimension();
    for record in train {
        check_record_dimension(record, d)?;
    }
    let mut min = Vec::with_capacity(d);
    let mut max = Vec::with_capacity(d);
    let mut median = Vec::with_capacity(d);
    for (j, name) in schema.names().iter().enumerate() {
        let mut observed: Vec<f64> = train.iter().filter_map(|r| r.raw_features[j]).collect();
        if observed.is_empty() {
            return Err(DataError::UnobservedFeature(name.clone()));
        }
        observed.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
        min.push(observed[0]);
        max.push(*observed.last().expect("non-empty"));
        let n = observed.len();
        median.push(if n % 2 == 1 {
            observed[n / 2]
        } else {
            0.5 * (observed[n / 2 - 1] + observed[n / 2])
        });
    }
    Ok(NormalizationParams { min, max, median })
}

/// Maps a record into [0,1]^d: missing entries take the training median,
/// each value maps by (v - min) / (max - min), constant features go to
/// 0.5, and out-of-range test values clip to the cube.
pub fn apply_normalizer(
    params: &NormalizationParams,
    record: &ClaimRecord,
) -> Result<Vec<f64>, DataError> {
    check_record_dimension(record, params.dimension())?;
    let point = record
        .raw_features
        .iter()
        .enumerate()
        .map(|(j, cell)| {
            let v = cell.unwrap_or(params.median[j]);
            let span = params.max[j] - params.min[j];
            if span == 0.0 {
                0.5
            } else {
                ((v - params.min[j]) / span).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(point)
}

fn check_record_dimension(record: &ClaimRecord, expected: usize) -> Result<(), DataError> {
    if record.raw_features.len() != expected {
        return Err(DataError::RecordDimensionMismatch {
            id: record.id.clone(),
            expected,
            got: record.raw_features.len(),
        });
    }
    Ok(())
}

/// Deterministic assignment of every claim to one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_count: usize,
    pub assignments: BTreeMap<String, usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// Claim ids assigned to fold `fold`, in dataset order.
    pub fn test_ids<'a>(&self, dataset: &'a [ClaimRecord], fold: usize) -> Vec<&'a str> {
        dataset
            .iter()
            .filter(|r| self.assignments.get(&r.id) == Some(&fold))
            .map(|r| r.id.as_str())
            .collect()
    }
}

/// Splits a labeled dataset into stratified folds.
///
/// Within each label class the records are shuffled by a seeded stream and
/// dealt to folds consecutively, carrying the fold cursor from one class to
/// the next. That keeps both the per-class counts and the overall fold
/// sizes within one of each other.
pub fn split_folds(
    dataset: &[ClaimRecord],
    fold_count: usize,
    seed: u64,
) -> Result<FoldPlan, DataError> {
    if fold_count < 2 {
        return Err(DataError::BadFoldCount(fold_count));
    }
    if dataset.len() < fold_count {
        return Err(DataError::TooFewRecords {
            size: dataset.len(),
            folds: fold_count,
        });
    }
    for record in dataset {
        if record.label.is_none() {
            return Err(DataError::UnlabeledClaim(record.id.clone()));
        }
    }

    let mut rng = stream_rng(seed, &[crate::seed::STREAM_INIT, fold_count as u64]);
    let mut assignments = BTreeMap::new();
    let mut cursor = 0usize;
    for class in [Label::Replicable, Label::NotReplicable] {
        let mut members: Vec<&str> = dataset
            .iter()
            .filter(|r| r.label == Some(class))
            .map(|r| r.id.as_str())
            .collect();
        // Fisher-Yates, matching the market's visit shuffle.
        for i in (1..members.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            members.swap(i, j);
        }
        for id in members {
            assignments.insert(id.to_string(), cursor % fold_count);
            cursor += 1;
        }
    }
    Ok(FoldPlan {
        fold_count,
        assignments,
        seed,
    })
}
