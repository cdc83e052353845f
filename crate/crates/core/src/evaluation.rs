//! End-to-end evaluation of a manifest: candidate selection, caption
//! quality, semantic correctness, and calibration under three correctness
//! definitions (BLEU-4, CLAP, sentence embeddings).
//!
//! Per-example work runs on the rayon pool; results are collected in
//! manifest order, so outputs do not depend on the thread count.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{brier, confidence_histogram, ece, CalibrationBin, ConfidenceHistogram};
use crate::decoding::{rerank, BeamHypothesis, RankedHypothesis};
use crate::error::{Error, Result};
use crate::head::{head_forward, HeadExample, HeadParams, Mode};
use crate::semantic::{
    max_ref_similarity, score_set, validate_tau, CandidateSelector, Family, ScoreSet,
};
use crate::tensor_io::{EmbeddingRole, EvaluationSet};
use crate::text_metrics::{bleu, cider, exceeds_traditional_threshold, tokenize, TokenizedCaption};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Definition {
    Traditional,
    Clap,
    Fense,
}

impl Definition {
    pub fn as_str(self) -> &'static str {
        match self {
            Definition::Traditional => "traditional",
            Definition::Clap => "clap",
            Definition::Fense => "fense",
        }
    }

    pub fn family(self) -> Option<Family> {
        match self {
            Definition::Traditional => None,
            Definition::Clap => Some(Family::Clap),
            Definition::Fense => Some(Family::Sbert),
        }
    }
}

pub fn definition_for(family: Family) -> Definition {
    match family {
        Family::Clap => Definition::Clap,
        Family::Sbert => Definition::Fense,
    }
}

/// Where candidate confidences come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMode {
    /// Every candidate has confidence 1.0 (greedy baseline).
    #[default]
    Fixed,
    /// `mean_confidence` stored in the manifest.
    Manifest,
    /// Confidence head applied to exported hidden states.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Always the first candidate (greedy manifests).
    #[default]
    First,
    /// The top candidate after confidence-aware reranking.
    Rerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub tau: f64,
    pub bins: usize,
    pub alpha: f64,
    pub beta: f64,
    pub selection: Selection,
    pub confidence: ConfidenceMode,
    pub families: Vec<Family>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau: crate::semantic::DEFAULT_TAU,
            bins: crate::calibration::DEFAULT_BINS,
            alpha: crate::decoding::DEFAULT_ALPHA,
            beta: crate::decoding::DEFAULT_BETA,
            selection: Selection::First,
            confidence: ConfidenceMode::Fixed,
            families: Family::ALL.to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        validate_tau(self.tau)?;
        if self.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config("alpha must be ≥ 0 and beta finite".into()));
        }
        Ok(())
    }
}

/// Per-token confidences for every candidate of one example.
fn candidate_confidences(
    set: &EvaluationSet,
    example: usize,
    mode: ConfidenceMode,
    head: Option<&HeadParams>,
) -> Result<Vec<Vec<f64>>> {
    let record = &set.records()[example];
    record
        .candidates
        .iter()
        .enumerate()
        .map(|(ci, cand)| {
            let n = cand.token_ids.len();
            match mode {
                ConfidenceMode::Fixed => Ok(vec![1.0; n]),
                ConfidenceMode::Manifest => {
                    cand.mean_confidence.map(|c| vec![c; n]).ok_or_else(|| {
                        Error::Invalid(format!(
                            "example {} candidate {ci}: no mean_confidence in manifest",
                            record.example_id
                        ))
                    })
                }
                ConfidenceMode::Head => {
                    let params = head.ok_or_else(|| {
                        Error::Config("head confidence mode requires head parameters".into())
                    })?;
                    let hidden = set.hidden_states(example, ci)?.ok_or_else(|| {
                        Error::Invalid(format!(
                            "example {} candidate {ci}: no hidden_state_ref",
                            record.example_id
                        ))
                    })?;
                    head_forward(&hidden, params, Mode::Eval)
                }
            }
        })
        .collect()
}

/// Candidates of one example as hypotheses: log p(b) and |b| over content
/// tokens, confidences as supplied.
pub fn example_hypotheses(
    set: &EvaluationSet,
    example: usize,
    confidences: &[Vec<f64>],
) -> Result<Vec<BeamHypothesis>> {
    set.records()[example]
        .candidates
        .iter()
        .zip(confidences)
        .map(|(c, conf)| {
            BeamHypothesis::new(
                c.token_ids.clone(),
                c.content_logprob(),
                conf.clone(),
                c.token_mask.clone(),
                true,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRanking {
    pub example_id: String,
    pub hypotheses: Vec<BeamHypothesis>,
    pub ranked: Vec<RankedHypothesis>,
}

/// Reranks the candidates of every example.
pub fn rerank_set(
    set: &EvaluationSet,
    alpha: f64,
    beta: f64,
    mode: ConfidenceMode,
    head: Option<&HeadParams>,
) -> Result<Vec<ExampleRanking>> {
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let record = &set.records()[i];
            let conf = candidate_confidences(set, i, mode, head)?;
            let hypotheses = example_hypotheses(set, i, &conf)?;
            let ranked = rerank(&hypotheses, alpha, beta)
                .map_err(|e| Error::Invalid(format!("example {}: {e}", record.example_id)))?;
            Ok(ExampleRanking {
                example_id: record.example_id.clone(),
                hypotheses,
                ranked,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub bleu1: f64,
    pub bleu4: f64,
    pub cider: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub definition: Definition,
    pub mean_similarity: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitionReport {
    pub definition: Definition,
    pub accuracy: f64,
    pub ece: f64,
    pub brier: f64,
    pub bins: Vec<CalibrationBin>,
    pub histogram: ConfidenceHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema_version: u32,
    pub n_examples: usize,
    pub config: EvalConfig,
    pub avg_confidence: f64,
    pub quality: QualityMetrics,
    pub similarity: Vec<SimilaritySummary>,
    pub definitions: Vec<DefinitionReport>,
}

impl CalibrationReport {
    pub fn definition(&self, d: Definition) -> Option<&DefinitionReport> {
        self.definitions.iter().find(|r| r.definition == d)
    }

    pub fn similarity_for(&self, d: Definition) -> Option<&SimilaritySummary> {
        self.similarity.iter().find(|r| r.definition == d)
    }

    /// Brier score under CLAP correctness, or the first available definition.
    pub fn headline_brier(&self) -> f64 {
        self.definition(Definition::Clap)
            .or_else(|| self.definitions.first())
            .map_or(f64::NAN, |d| d.brier)
    }

    /// Rows in quality → similarity → calibration order. Missing families
    /// yield `None`.
    pub fn table_rows(&self) -> Vec<(&'static str, Option<f64>)> {
        let sim = |d| self.similarity_for(d).map(|s| s.mean_similarity);
        let acc = |d| self.similarity_for(d).map(|s| s.accuracy);
        let ece = |d| self.definition(d).map(|r| r.ece);
        vec![
            ("BLEU-1", Some(self.quality.bleu1)),
            ("BLEU-4", Some(self.quality.bleu4)),
            ("CIDEr", Some(self.quality.cider)),
            ("CLAP Similarity", sim(Definition::Clap)),
            ("FENSE Similarity", sim(Definition::Fense)),
            ("CLAP Accuracy", acc(Definition::Clap)),
            ("FENSE Accuracy", acc(Definition::Fense)),
            ("Traditional ECE", ece(Definition::Traditional)),
            ("CLAP ECE", ece(Definition::Clap)),
            ("FENSE ECE", ece(Definition::Fense)),
            ("Brier Score", Some(self.headline_brier())),
            ("Avg. Confidence", Some(self.avg_confidence)),
        ]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == REPORT_SCHEMA_VERSION as u64 => Ok(serde_json::from_value(value)?),
            Some(v) => Err(Error::Invalid(format!(
                "unsupported report schema_version {v}"
            ))),
            None => Err(Error::Invalid("report lacks schema_version".into())),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Per-example details kept alongside the report.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleOutcome {
    pub example_id: String,
    pub candidate_index: usize,
    pub confidence: f64,
    pub bleu1: f64,
    pub bleu4: f64,
    pub cider: f64,
    pub traditional_correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: CalibrationReport,
    pub examples: Vec<ExampleOutcome>,
    pub scores: Vec<ScoreSet>,
}

/// Builds one definition's block from confidences and correctness.
pub fn definition_report(
    definition: Definition,
    confidences: &[f64],
    correct: &[bool],
    bins: usize,
) -> Result<DefinitionReport> {
    let e = ece(confidences, correct, bins)?;
    Ok(DefinitionReport {
        definition,
        accuracy: correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64,
        ece: e.ece,
        brier: brier(confidences, correct)?,
        bins: e.bins,
        histogram: confidence_histogram(confidences, correct, bins)?,
    })
}

pub fn evaluate(
    set: &EvaluationSet,
    config: &EvalConfig,
    head: Option<&HeadParams>,
) -> Result<Evaluation> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    for &family in &config.families {
        if !set.has_family(family) {
            return Err(Error::Invalid(format!(
                "{family} embeddings missing for some examples"
            )));
        }
    }

    let picks: Vec<(usize, f64)> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let record = &set.records()[i];
            if record.candidates.is_empty() {
                return Err(Error::Invalid(format!(
                    "example {} has no candidates",
                    record.example_id
                )));
            }
            let conf = candidate_confidences(set, i, config.confidence, head)?;
            let hyps = example_hypotheses(set, i, &conf)?;
            let idx = match config.selection {
                Selection::First => 0,
                Selection::Rerank => {
                    rerank(&hyps, config.alpha, config.beta).map_err(|e| {
                        Error::Invalid(format!("example {}: {e}", record.example_id))
                    })?[0]
                        .index
                }
            };
            let c = match config.confidence {
                ConfidenceMode::Fixed => 1.0,
                _ => hyps[idx].mean_confidence(),
            };
            Ok((idx, c))
        })
        .collect::<Result<_>>()?;
    let (chosen, confidences): (Vec<usize>, Vec<f64>) = picks.into_iter().unzip();

    let cands: Vec<TokenizedCaption> = set
        .records()
        .iter()
        .zip(&chosen)
        .map(|(r, &i)| tokenize(&r.candidates[i].caption))
        .collect();
    let refs: Vec<Vec<TokenizedCaption>> = set
        .records()
        .iter()
        .map(|r| r.references.iter().map(|c| tokenize(c)).collect())
        .collect();
    let cider_scores = cider(&cands, &refs);
    let examples: Vec<ExampleOutcome> = set
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let bleu4 = bleu(&cands[i], &refs[i], 4);
            ExampleOutcome {
                example_id: r.example_id.clone(),
                candidate_index: chosen[i],
                confidence: confidences[i],
                bleu1: bleu(&cands[i], &refs[i], 1),
                bleu4,
                cider: cider_scores.per_example[i],
                traditional_correct: exceeds_traditional_threshold(bleu4),
            }
        })
        .collect();
    let n = set.len() as f64;
    let quality = QualityMetrics {
        bleu1: examples.iter().map(|e| e.bleu1).sum::<f64>() / n,
        bleu4: examples.iter().map(|e| e.bleu4).sum::<f64>() / n,
        cider: cider_scores.mean,
    };

    let traditional: Vec<bool> = examples.iter().map(|e| e.traditional_correct).collect();
    let mut definitions = vec![definition_report(
        Definition::Traditional,
        &confidences,
        &traditional,
        config.bins,
    )?];
    let mut similarity = Vec::new();
    let mut scores = Vec::new();
    let selector = CandidateSelector::PerExample(chosen);
    for &family in &config.families {
        let s = score_set(set, family, config.tau, &selector)?;
        let d = definition_for(family);
        similarity.push(SimilaritySummary {
            definition: d,
            mean_similarity: s.mean_similarity(),
            accuracy: s.accuracy(),
        });
        definitions.push(definition_report(
            d,
            &confidences,
            &s.correct(),
            config.bins,
        )?);
        scores.push(s);
    }

    let report = CalibrationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        n_examples: set.len(),
        config: config.clone(),
        avg_confidence: confidences.iter().sum::<f64>() / n,
        quality,
        similarity,
        definitions,
    };
    Ok(Evaluation {
        report,
        examples,
        scores,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w)?;
        w.flush().map_err(|e| Error::Csv(e.into()))?;
    }
    Ok(buf)
}

impl Evaluation {
    /// Writes `report.json`, `bins.csv`, `histogram.csv`, `scores.csv` and
    /// `text_metrics.csv` into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("report.json"), self.report.to_json()?.as_bytes())?;

        let bins = csv_bytes(|w| {
            w.write_record([
                "definition",
                "bin",
                "lo",
                "hi",
                "count",
                "mean_conf",
                "accuracy",
            ])?;
            for d in &self.report.definitions {
                for (i, b) in d.bins.iter().enumerate() {
                    w.write_record([
                        d.definition.as_str().to_string(),
                        i.to_string(),
                        b.lo.to_string(),
                        b.hi.to_string(),
                        b.count.to_string(),
                        b.mean_conf.to_string(),
                        b.accuracy.to_string(),
                    ])?;
                }
            }
            Ok(())
        })?;
        write_file(&dir.join("bins.csv"), &bins)?;

        let hist = csv_bytes(|w| {
            w.write_record([
                "definition",
                "bin",
                "lo",
                "hi",
                "overall",
                "correct",
                "incorrect",
            ])?;
            for d in &self.report.definitions {
                let h = &d.histogram;
                for i in 0..h.overall.len() {
                    w.write_record([
                        d.definition.as_str().to_string(),
                        i.to_string(),
                        h.edges[i].to_string(),
                        h.edges[i + 1].to_string(),
                        h.overall[i].to_string(),
                        h.correct[i].to_string(),
                        h.incorrect[i].to_string(),
                    ])?;
                }
            }
            Ok(())
        })?;
        write_file(&dir.join("histogram.csv"), &hist)?;

        let scores = csv_bytes(|w| {
            w.write_record(["example_id", "family", "s", "correct"])?;
            for set in &self.scores {
                for (id, s) in set.example_ids.iter().zip(&set.scores) {
                    w.write_record([
                        id.as_str(),
                        s.family.as_str(),
                        &s.s.to_string(),
                        &s.correct.to_string(),
                    ])?;
                }
            }
            Ok(())
        })?;
        write_file(&dir.join("scores.csv"), &scores)?;

        let text = csv_bytes(|w| {
            w.write_record([
                "example_id",
                "candidate_index",
                "confidence",
                "bleu1",
                "bleu4",
                "cider",
                "traditional_correct",
            ])?;
            for e in &self.examples {
                w.write_record([
                    e.example_id.clone(),
                    e.candidate_index.to_string(),
                    e.confidence.to_string(),
                    e.bleu1.to_string(),
                    e.bleu4.to_string(),
                    e.cider.to_string(),
                    e.traditional_correct.to_string(),
                ])?;
            }
            Ok(())
        })?;
        write_file(&dir.join("text_metrics.csv"), &text)?;
        Ok(())
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Markdown table with one column per report.
pub fn comparison_markdown(columns: &[(&str, &CalibrationReport)]) -> String {
    let mut out = String::from("| Metric |");
    for (name, _) in columns {
        let _ = write!(out, " {name} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(columns.len()));
    out.push('\n');
    let rows: Vec<_> = columns.iter().map(|(_, r)| r.table_rows()).collect();
    if let Some(first) = rows.first() {
        for (i, (label, _)) in first.iter().enumerate() {
            let _ = write!(out, "| {label} |");
            for r in &rows {
                let _ = write!(out, " {} |", fmt_cell(r[i].1));
            }
            out.push('\n');
        }
    }
    out
}

/// CSV variant of [`comparison_markdown`] with full precision.
pub fn comparison_csv(columns: &[(&str, &CalibrationReport)]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        let mut header = vec!["metric".to_string()];
        header.extend(columns.iter().map(|(n, _)| n.to_string()));
        w.write_record(&header)?;
        let rows: Vec<_> = columns.iter().map(|(_, r)| r.table_rows()).collect();
        if let Some(first) = rows.first() {
            for (i, (label, _)) in first.iter().enumerate() {
                let mut rec = vec![label.to_string()];
                rec.extend(
                    rows.iter()
                        .map(|r| r[i].1.map_or(String::new(), |v| v.to_string())),
                );
                w.write_record(&rec)?;
            }
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// Continuous max-reference similarity, clamped to [0, 1].
    #[default]
    Similarity,
    /// Thresholded correctness as 0/1.
    Binary,
}

/// Head training examples: every candidate with exported hidden states,
/// targeted at its semantic score against the example's references.
pub fn head_training_set(
    set: &EvaluationSet,
    family: Family,
    kind: TargetKind,
    tau: f64,
) -> Result<Vec<HeadExample>> {
    validate_tau(tau)?;
    let mut out = Vec::new();
    for (i, record) in set.records().iter().enumerate() {
        let cands = set.embeddings(i, family, EmbeddingRole::Candidates)?;
        let refs = set.embeddings(i, family, EmbeddingRole::References)?;
        for (ci, cand) in record.candidates.iter().enumerate() {
            let Some(hidden) = set.hidden_states(i, ci)? else {
                continue;
            };
            if cand.content_length() == 0 {
                continue;
            }
            let s = max_ref_similarity(&cands[ci], &refs)?;
            let target = match kind {
                TargetKind::Similarity => s.clamp(0.0, 1.0),
                TargetKind::Binary => {
                    if crate::semantic::correctness(s, tau) {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            out.push(HeadExample::new(hidden, cand.token_mask.clone(), target)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid(
            "no candidates with hidden states to train on".into(),
        ));
    }
    Ok(out)
}

/// Writes `ranked.csv` (every candidate, best first) and `chosen.jsonl`
/// (the top candidate per example) into `dir`.
pub fn write_rankings(
    dir: impl AsRef<Path>,
    set: &EvaluationSet,
    rankings: &[ExampleRanking],
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ranked = csv_bytes(|w| {
        w.write_record([
            "example_id",
            "rank",
            "candidate_index",
            "score",
            "length",
            "mean_confidence",
            "caption",
        ])?;
        for (record, r) in set.records().iter().zip(rankings) {
            for (rank, h) in r.ranked.iter().enumerate() {
                w.write_record([
                    r.example_id.clone(),
                    rank.to_string(),
                    h.index.to_string(),
                    h.score.to_string(),
                    h.length.to_string(),
                    h.mean_confidence.to_string(),
                    record.candidates[h.index].caption.clone(),
                ])?;
            }
        }
        Ok(())
    })?;
    write_file(&dir.join("ranked.csv"), &ranked)?;

    #[derive(Serialize)]
    struct Chosen<'a> {
        example_id: &'a str,
        candidate_index: usize,
        caption: &'a str,
        score: f64,
        mean_confidence: f64,
    }
    let mut jsonl = String::new();
    for (record, r) in set.records().iter().zip(rankings) {
        let top = &r.ranked[0];
        jsonl.push_str(&serde_json::to_string(&Chosen {
            example_id: &r.example_id,
            candidate_index: top.index,
            caption: &record.candidates[top.index].caption,
            score: top.score,
            mean_confidence: top.mean_confidence,
        })?);
        jsonl.push('\n');
    }
    write_file(&dir.join("chosen.jsonl"), jsonl.as_bytes())
}
