//! Prediction-record data model, log ingestion, and grouping.
//!
//! A prediction log is UTF-8 line-delimited JSON, one record per line.
//! Required keys: `item_id`, `dataset_id`, `model_id`, `condition`,
//! `confidence`, `correct`. Optional keys: `split` (defaults to `eval`),
//! `samples`, `sample_source`. Unknown keys are rejected, and a single
//! malformed line rejects the whole file — silent data loss would corrupt
//! every downstream metric.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Input condition a record was evaluated under.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    Typo,
    Paraphrase,
    Adversarial,
}

impl Condition {
    pub fn is_perturbed(self) -> bool {
        !matches!(self, Condition::Clean)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Typo => "typo",
            Condition::Paraphrase => "paraphrase",
            Condition::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which portion of the data a record belongs to. Calibration maps are
/// fit on `validation` records only; every metric is computed on `eval`.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Eval,
    Validation,
}

/// Origin of per-item stochastic samples.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    McDropout,
    Ensemble,
}

impl SampleSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleSource::McDropout => "mc_dropout",
            SampleSource::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for SampleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One model answer: predicted probability of being correct, the
/// adjudicated correctness, and optional per-pass probabilities from
/// stochastic inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub item_id: String,
    pub dataset_id: String,
    pub model_id: String,
    pub condition: Condition,
    #[serde(default)]
    pub split: Split,
    pub confidence: f64,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_source: Option<SampleSource>,
}

impl PredictionRecord {
    /// Key that must be unique within one log.
    pub fn key(&self) -> RecordKey {
        RecordKey {
            item_id: self.item_id.clone(),
            dataset_id: self.dataset_id.clone(),
            model_id: self.model_id.clone(),
            condition: self.condition,
        }
    }

    /// Field-level validation beyond what deserialization enforces.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !self.confidence.is_finite() || !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!(
                "field `confidence`: {} is outside [0, 1]",
                self.confidence
            ));
        }
        if let Some(samples) = &self.samples {
            for (i, s) in samples.iter().enumerate() {
                if !s.is_finite() || !(0.0..=1.0).contains(s) {
                    return Err(format!(
                        "field `samples`[{i}]: {s} is outside [0, 1]"
                    ));
                }
            }
            if self.sample_source.is_none() {
                return Err("field `sample_source`: required when `samples` is present".into());
            }
        }
        Ok(())
    }
}

/// Unique identity of a record within a log.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub item_id: String,
    pub dataset_id: String,
    pub model_id: String,
    pub condition: Condition,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {}, {}, {}",
            self.item_id, self.dataset_id, self.model_id, self.condition
        )
    }
}

/// All records of one `(model, dataset, condition)` cell, ordered by
/// `item_id`. Non-empty and homogeneous by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationUnit {
    model_id: String,
    dataset_id: String,
    condition: Condition,
    records: Vec<PredictionRecord>,
}

impl EvaluationUnit {
    pub fn new(mut records: Vec<PredictionRecord>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyUnit)?;
        let (model_id, dataset_id, condition) = (
            first.model_id.clone(),
            first.dataset_id.clone(),
            first.condition,
        );
        for r in &records {
            if r.model_id != model_id || r.dataset_id != dataset_id || r.condition != condition {
                return Err(Error::MixedUnit {
                    expected: format!("{model_id}/{dataset_id}/{condition}"),
                    found: format!("{}/{}/{}", r.model_id, r.dataset_id, r.condition),
                });
            }
        }
        records.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        Ok(Self {
            model_id,
            dataset_id,
            condition,
            records,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same cell identity with different records (e.g. remapped
    /// confidences or a bootstrap resample).
    pub fn with_records(&self, records: Vec<PredictionRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyUnit);
        }
        let mut unit = Self {
            model_id: self.model_id.clone(),
            dataset_id: self.dataset_id.clone(),
            condition: self.condition,
            records,
        };
        unit.records.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        Ok(unit)
    }
}

/// Coverage summary of an ingested log: which `(model, dataset,
/// condition)` cells are present and how many records each holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogManifest {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub cells: Vec<ManifestCell>,
    pub total_records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub model_id: String,
    pub dataset_id: String,
    pub counts: BTreeMap<Condition, usize>,
}

/// Reads and validates one prediction-log file. Any malformed line
/// rejects the whole file, reporting the line number and reason.
pub fn ingest_log(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_log(BufReader::new(file), path)
}

/// Parses log lines from any reader; `path` is used in error messages.
pub fn parse_log(reader: impl BufRead, path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: e.to_string(),
            })?;
        record.validate().map_err(|reason| Error::MalformedLine {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        })?;
        if !seen.insert(record.key()) {
            return Err(Error::DuplicateRecord {
                path: path.to_path_buf(),
                line: line_no,
                key: record.key().to_string(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Serializes records in the line-delimited log format.
pub fn to_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialization cannot fail"));
        out.push('\n');
    }
    out
}

/// Writes records to a log file in the ingestible format.
pub fn write_log(records: &[PredictionRecord], path: &Path) -> Result<()> {
    let mut file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(to_jsonl(records).as_bytes())
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Merges records from several files, rejecting keys duplicated across
/// file boundaries.
pub fn merge_logs(logs: Vec<Vec<PredictionRecord>>) -> Result<Vec<PredictionRecord>> {
    let mut seen = std::collections::HashSet::new();
    let mut merged = Vec::new();
    for log in logs {
        for record in log {
            if !seen.insert(record.key()) {
                return Err(Error::InvalidParameter(format!(
                    "record key ({}) appears in more than one input log",
                    record.key()
                )));
            }
            merged.push(record);
        }
    }
    Ok(merged)
}

/// Groups validated records into one unit per distinct `(model, dataset,
/// condition)`. Output is ordered by that key and records within a unit
/// by `item_id`, so any permutation of the input yields identical units.
pub fn group_records(records: &[PredictionRecord]) -> Vec<EvaluationUnit> {
    let mut cells: BTreeMap<(String, String, Condition), Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        cells
            .entry((r.model_id.clone(), r.dataset_id.clone(), r.condition))
            .or_default()
            .push(r.clone());
    }
    cells
        .into_values()
        .map(|recs| EvaluationUnit::new(recs).expect("grouped cell is non-empty and homogeneous"))
        .collect()
}

/// Builds the coverage manifest for a record collection.
pub fn build_manifest(records: &[PredictionRecord]) -> LogManifest {
    let mut models: Vec<String> = records.iter().map(|r| r.model_id.clone()).collect();
    models.sort();
    models.dedup();
    let mut datasets: Vec<String> = records.iter().map(|r| r.dataset_id.clone()).collect();
    datasets.sort();
    datasets.dedup();

    let mut counts: BTreeMap<(String, String), BTreeMap<Condition, usize>> = BTreeMap::new();
    for r in records {
        *counts
            .entry((r.model_id.clone(), r.dataset_id.clone()))
            .or_default()
            .entry(r.condition)
            .or_insert(0) += 1;
    }
    let cells = counts
        .into_iter()
        .map(|((model_id, dataset_id), counts)| ManifestCell {
            model_id,
            dataset_id,
            counts,
        })
        .collect();

    LogManifest {
        models,
        datasets,
        cells,
        total_records: records.len(),
    }
}

/// Records of one split only.
pub fn filter_split(records: &[PredictionRecord], split: Split) -> Vec<PredictionRecord> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}
