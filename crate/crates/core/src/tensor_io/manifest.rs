//! JSON Lines manifests describing evaluation sets.
//!
//! Each line is one [`ExampleRecord`]. Tensor paths are resolved relative to
//! the directory containing the manifest. Loading validates every record and
//! reads the header of every referenced tensor; payloads are read on demand.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::{read_header, read_tensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::semantic::{Embedding, Family};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingRole {
    References,
    Candidates,
}

impl fmt::Display for EmbeddingRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingRole::References => "references",
            EmbeddingRole::Candidates => "candidates",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub caption: String,
    pub token_ids: Vec<u32>,
    pub token_logprobs: Vec<f64>,
    /// `true` for generated content tokens; prompt, BOS, EOS and padding are `false`.
    pub token_mask: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_state_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_confidence: Option<f64>,
}

impl CandidateRecord {
    pub fn content_length(&self) -> usize {
        self.token_mask.iter().filter(|&&m| m).count()
    }

    /// Sum of log-probabilities over content tokens.
    pub fn content_logprob(&self) -> f64 {
        self.token_logprobs
            .iter()
            .zip(&self.token_mask)
            .filter(|(_, &m)| m)
            .map(|(lp, _)| lp)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    pub example_id: String,
    pub references: Vec<String>,
    pub candidates: Vec<CandidateRecord>,
    #[serde(default)]
    pub embedding_refs: BTreeMap<Family, BTreeMap<EmbeddingRole, String>>,
}

/// A loaded and validated manifest.
#[derive(Debug, Clone)]
pub struct EvaluationSet {
    base_dir: PathBuf,
    records: Vec<ExampleRecord>,
}

impl EvaluationSet {
    /// Builds a set from records whose paths are relative to `base_dir`,
    /// running the same validation as [`load_manifest`].
    pub fn new(base_dir: impl Into<PathBuf>, records: Vec<ExampleRecord>) -> Result<Self> {
        let set = Self {
            base_dir: base_dir.into(),
            records,
        };
        let mut seen = HashMap::new();
        for (i, record) in set.records.iter().enumerate() {
            let line = i + 1;
            if let Some(first) = seen.insert(record.example_id.clone(), line) {
                return Err(Error::Manifest {
                    line,
                    message: format!(
                        "duplicate example_id {:?} (first seen on line {first})",
                        record.example_id
                    ),
                });
            }
            set.validate_record(record).map_err(|e| Error::Manifest {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(set)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn records(&self) -> &[ExampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// All embeddings of one role for one example, in caption order.
    pub fn embeddings(
        &self,
        example: usize,
        family: Family,
        role: EmbeddingRole,
    ) -> Result<Vec<Embedding>> {
        let record = &self.records[example];
        let rel = record
            .embedding_refs
            .get(&family)
            .and_then(|m| m.get(&role))
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "example {}: no {family} embeddings for {role}",
                    record.example_id
                ))
            })?;
        let matrix = read_tensor(self.resolve(rel))?.to_matrix()?;
        matrix
            .iter_rows()
            .map(|row| Embedding::new(family, row.to_vec()))
            .collect()
    }

    pub fn has_family(&self, family: Family) -> bool {
        self.records.iter().all(|r| {
            r.embedding_refs.get(&family).is_some_and(|m| {
                m.contains_key(&EmbeddingRole::References)
                    && m.contains_key(&EmbeddingRole::Candidates)
            })
        })
    }

    /// Hidden states (tokens × d_model) of one candidate, if exported.
    pub fn hidden_states(&self, example: usize, candidate: usize) -> Result<Option<Matrix>> {
        match &self.records[example].candidates[candidate].hidden_state_ref {
            None => Ok(None),
            Some(rel) => read_tensor(self.resolve(rel))?.to_matrix().map(Some),
        }
    }

    fn validate_record(&self, record: &ExampleRecord) -> Result<()> {
        if let Some(v) = record.schema_version {
            if v != MANIFEST_SCHEMA_VERSION {
                return Err(Error::Invalid(format!(
                    "unsupported schema_version {v} (expected {MANIFEST_SCHEMA_VERSION})"
                )));
            }
        }
        if record.example_id.is_empty() {
            return Err(Error::Invalid("empty example_id".into()));
        }
        if record.references.is_empty() {
            return Err(Error::Invalid("references must be non-empty".into()));
        }
        for (ci, cand) in record.candidates.iter().enumerate() {
            self.validate_candidate(cand)
                .map_err(|e| Error::Invalid(format!("candidate {ci}: {e}")))?;
        }
        for (family, roles) in &record.embedding_refs {
            for (role, rel) in roles {
                let expected = match role {
                    EmbeddingRole::References => record.references.len(),
                    EmbeddingRole::Candidates => record.candidates.len(),
                };
                let header = read_header(self.resolve(rel))?;
                if header.dims.len() != 2 || header.dims[0] != expected as u64 {
                    return Err(Error::Shape(format!(
                        "{family}/{role} tensor {rel} has dims {:?}, expected [{expected}, dim]",
                        header.dims
                    )));
                }
            }
        }
        Ok(())
    }

    fn validate_candidate(&self, cand: &CandidateRecord) -> Result<()> {
        let n = cand.token_ids.len();
        if cand.token_logprobs.len() != n || cand.token_mask.len() != n {
            return Err(Error::Shape(format!(
                "token_ids ({n}), token_logprobs ({}) and token_mask ({}) differ in length",
                cand.token_logprobs.len(),
                cand.token_mask.len()
            )));
        }
        if let Some(i) = cand
            .token_logprobs
            .iter()
            .position(|lp| !(lp.is_finite() && *lp <= 0.0))
        {
            return Err(Error::Invalid(format!(
                "token_logprobs[{i}] = {} is not a finite value ≤ 0",
                cand.token_logprobs[i]
            )));
        }
        if let Some(c) = cand.mean_confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Invalid(format!(
                    "mean_confidence {c} outside [0, 1]"
                )));
            }
        }
        if let Some(rel) = &cand.hidden_state_ref {
            let header = read_header(self.resolve(rel))?;
            if header.dims.len() != 2 || header.dims[0] != n as u64 {
                return Err(Error::Shape(format!(
                    "hidden state {rel} has dims {:?}, expected [{n}, d_model]",
                    header.dims
                )));
            }
        }
        Ok(())
    }
}

/// Parses and validates a JSONL manifest. Record `i` is line `i`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<EvaluationSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let record: ExampleRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    EvaluationSet::new(base_dir, records)
}

pub fn write_manifest<'a, I>(path: impl AsRef<Path>, records: I) -> Result<()>
where
    I: IntoIterator<Item = &'a ExampleRecord>,
{
    let path = path.as_ref();
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}
