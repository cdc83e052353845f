//! Embedding similarity and thresholded semantic correctness.
//!
//! Two embedding families are supported: CLAP text embeddings and sentence
//! embeddings (`sbert`, reported under the FENSE name). Similarity of a
//! candidate to a reference set is the maximum cosine over the references;
//! a candidate is correct when that maximum reaches the threshold.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::dot;
use crate::tensor_io::{EmbeddingRole, EvaluationSet};

pub const DEFAULT_TAU: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Clap,
    Sbert,
}

impl Family {
    pub const ALL: [Family; 2] = [Family::Clap, Family::Sbert];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Clap => "clap",
            Family::Sbert => "sbert",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub family: Family,
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(family: Family, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "{family} embedding has a non-finite value at index {i}"
            )));
        }
        Ok(Self { family, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.family != b.family {
        return Err(Error::Invalid(format!(
            "cannot compare {} and {} embeddings",
            a.family, b.family
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (aa, bb) = (dot(&a.values, &a.values), dot(&b.values, &b.values));
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::Invalid("zero-norm embedding".into()));
    }
    // sqrt(aa * aa) == aa exactly, so identical inputs give exactly 1.0.
    let mut denom = (aa * bb).sqrt();
    if !denom.is_finite() || denom == 0.0 {
        denom = aa.sqrt() * bb.sqrt();
    }
    Ok((dot(&a.values, &b.values) / denom).clamp(-1.0, 1.0))
}

pub fn max_ref_similarity(cand: &Embedding, refs: &[Embedding]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Invalid("empty reference list".into()));
    }
    refs.iter().try_fold(f64::NEG_INFINITY, |best, r| {
        cosine(cand, r).map(|s| best.max(s))
    })
}

/// Inclusive threshold test.
pub fn correctness(s: f64, tau: f64) -> bool {
    s >= tau
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticScore {
    pub family: Family,
    pub s: f64,
    pub correct: bool,
    pub tau: f64,
}

impl SemanticScore {
    pub fn new(family: Family, s: f64, tau: f64) -> Self {
        Self {
            family,
            s,
            correct: correctness(s, tau),
            tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub family: Family,
    pub tau: f64,
    pub example_ids: Vec<String>,
    pub scores: Vec<SemanticScore>,
}

impl ScoreSet {
    pub fn accuracy(&self) -> f64 {
        mean_of(
            self.scores
                .iter()
                .map(|s| if s.correct { 1.0 } else { 0.0 }),
        )
    }

    pub fn mean_similarity(&self) -> f64 {
        mean_of(self.scores.iter().map(|s| s.s))
    }

    pub fn correct(&self) -> Vec<bool> {
        self.scores.iter().map(|s| s.correct).collect()
    }

    pub fn similarities(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.s).collect()
    }

    /// CSV with header `example_id,family,s,correct`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["example_id", "family", "s", "correct"])?;
        for (id, sc) in self.example_ids.iter().zip(&self.scores) {
            out.write_record([
                id.as_str(),
                sc.family.as_str(),
                &sc.s.to_string(),
                &sc.correct.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

fn mean_of(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        return f64::NAN;
    }
    it.sum::<f64>() / n as f64
}

pub fn validate_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")))
    }
}

/// Which candidate of each example is scored.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateSelector {
    /// The same candidate index for every example (0 for greedy manifests).
    Index(usize),
    /// One index per example, e.g. the output of reranking.
    PerExample(Vec<usize>),
}

impl CandidateSelector {
    pub fn index_for(&self, example: usize) -> usize {
        match self {
            CandidateSelector::Index(i) => *i,
            CandidateSelector::PerExample(v) => v[example],
        }
    }
}

/// Scores in-memory `(candidate, references)` pairs.
pub fn score_pairs<'a, I>(pairs: I, family: Family, tau: f64) -> Result<Vec<SemanticScore>>
where
    I: IntoIterator<Item = (&'a Embedding, &'a [Embedding])>,
{
    validate_tau(tau)?;
    pairs
        .into_iter()
        .map(|(cand, refs)| {
            if cand.family != family {
                return Err(Error::Invalid(format!(
                    "expected {family} embedding, got {}",
                    cand.family
                )));
            }
            max_ref_similarity(cand, refs).map(|s| SemanticScore::new(family, s, tau))
        })
        .collect()
}

/// Scores one selected candidate per example of an evaluation set.
pub fn score_set(
    set: &EvaluationSet,
    family: Family,
    tau: f64,
    selector: &CandidateSelector,
) -> Result<ScoreSet> {
    validate_tau(tau)?;
    if set.is_empty() {
        return Err(Error::Invalid(
            "cannot score an empty evaluation set".into(),
        ));
    }
    if let CandidateSelector::PerExample(v) = selector {
        if v.len() != set.len() {
            return Err(Error::Invalid(format!(
                "selector covers {} examples, set has {}",
                v.len(),
                set.len()
            )));
        }
    }
    let mut scores = Vec::with_capacity(set.len());
    let mut example_ids = Vec::with_capacity(set.len());
    for (i, record) in set.records().iter().enumerate() {
        let idx = selector.index_for(i);
        if idx >= record.candidates.len() {
            return Err(Error::Invalid(format!(
                "example {}: candidate index {idx} out of range ({} candidates)",
                record.example_id,
                record.candidates.len()
            )));
        }
        let cands = set.embeddings(i, family, EmbeddingRole::Candidates)?;
        let refs = set.embeddings(i, family, EmbeddingRole::References)?;
        let s = max_ref_similarity(&cands[idx], &refs)?;
        scores.push(SemanticScore::new(family, s, tau));
        example_ids.push(record.example_id.clone());
    }
    Ok(ScoreSet {
        family,
        tau,
        example_ids,
        scores,
    })
}
