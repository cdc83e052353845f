//! Confidence-guided beam search and reranking.
//!
//! Hypotheses are scored as
//!
//! ```text
//! score(b) = log p(b) / |b|^alpha + beta · mean_conf(b)
//! ```
//!
//! where `|b|` counts content tokens only. Expansion and pruning use the
//! cumulative log-probability; the score is applied when ranking finished
//! hypotheses (unless [`Pruning::Stepwise`] is selected).

use std::cmp::Ordering;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{log_softmax_tempered, log_sum_exp, Temperature};
use crate::error::{Error, Result};
use crate::head::{head_forward, HeadParams, Mode};
use crate::matrix::Matrix;

pub const DEFAULT_BEAM_SIZE: usize = 5;
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.3;
pub const DEFAULT_MAX_LENGTH: usize = 30;

/// Anything that yields next-token log-probabilities for a prefix.
///
/// Prefixes passed to [`next_logprobs`](Self::next_logprobs) start with BOS.
pub trait TokenDistributionProvider {
    fn vocab_size(&self) -> usize;
    fn bos(&self) -> u32;
    fn eos(&self) -> u32;
    fn next_logprobs(&self, prefix: &[u32]) -> Vec<f64>;

    /// Optional per-token confidence supplied by the model itself.
    fn token_confidence(&self, _prefix: &[u32], _token: u32) -> Option<f64> {
        None
    }
}

/// Supplies the final-layer hidden state produced when `token` is emitted
/// after `prefix`.
pub trait HiddenStateSource {
    fn hidden_state(&self, prefix: &[u32], token: u32) -> Option<Vec<f64>>;
}

/// A confidence head paired with the hidden states it reads.
#[derive(Clone, Copy)]
pub struct HeadScorer<'a> {
    pub params: &'a HeadParams,
    pub states: &'a dyn HiddenStateSource,
}

impl HeadScorer<'_> {
    fn confidence(&self, prefix: &[u32], token: u32) -> Result<Option<f64>> {
        match self.states.hidden_state(prefix, token) {
            None => Ok(None),
            Some(h) => {
                let m = Matrix::from_vec(1, h.len(), h)?;
                Ok(Some(head_forward(&m, self.params, Mode::Eval)?[0]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    /// Generated tokens after BOS, including EOS when finished.
    pub tokens: Vec<u32>,
    pub logp: f64,
    /// One confidence per entry of `tokens`.
    pub token_confidences: Vec<f64>,
    /// `true` for content tokens; EOS and other special tokens are `false`.
    pub content_mask: Vec<bool>,
    pub finished: bool,
}

impl BeamHypothesis {
    pub fn new(
        tokens: Vec<u32>,
        logp: f64,
        token_confidences: Vec<f64>,
        content_mask: Vec<bool>,
        finished: bool,
    ) -> Result<Self> {
        if tokens.len() != token_confidences.len() || tokens.len() != content_mask.len() {
            return Err(Error::Shape(format!(
                "tokens ({}), confidences ({}) and mask ({}) differ in length",
                tokens.len(),
                token_confidences.len(),
                content_mask.len()
            )));
        }
        if !(logp <= 0.0) {
            return Err(Error::Invalid(format!(
                "log-probability {logp} must be ≤ 0"
            )));
        }
        Ok(Self {
            tokens,
            logp,
            token_confidences,
            content_mask,
            finished,
        })
    }

    /// Number of content tokens, `|b|`.
    pub fn length(&self) -> usize {
        self.content_mask.iter().filter(|&&m| m).count()
    }

    /// Mean confidence over content tokens. Falls back to all generated
    /// tokens when there is no content, and to 1.0 when nothing was generated.
    pub fn mean_confidence(&self) -> f64 {
        let masked: Vec<f64> = self
            .token_confidences
            .iter()
            .zip(&self.content_mask)
            .filter(|(_, &m)| m)
            .map(|(c, _)| *c)
            .collect();
        let pool = if masked.is_empty() {
            &self.token_confidences[..]
        } else {
            &masked[..]
        };
        if pool.is_empty() {
            1.0
        } else {
            pool.iter().sum::<f64>() / pool.len() as f64
        }
    }

    /// Score with the length clamped to at least one content token.
    pub fn score(&self, alpha: f64, beta: f64) -> f64 {
        score_unchecked(
            self.logp,
            self.length().max(1),
            self.mean_confidence(),
            alpha,
            beta,
        )
    }

    pub fn content_tokens(&self) -> Vec<u32> {
        self.tokens
            .iter()
            .zip(&self.content_mask)
            .filter(|(_, &m)| m)
            .map(|(t, _)| *t)
            .collect()
    }
}

fn score_unchecked(logp: f64, length: usize, mean_conf: f64, alpha: f64, beta: f64) -> f64 {
    logp / (length as f64).powf(alpha) + beta * mean_conf
}

/// `logp / length^alpha + beta · mean_conf`.
pub fn beam_score(logp: f64, length: usize, mean_conf: f64, alpha: f64, beta: f64) -> Result<f64> {
    if length == 0 {
        return Err(Error::Invalid("beam length must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&mean_conf) {
        return Err(Error::Invalid(format!(
            "mean confidence {mean_conf} outside [0, 1]"
        )));
    }
    Ok(score_unchecked(logp, length, mean_conf, alpha, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pruning {
    /// Keep the best partial hypotheses by cumulative log-probability.
    #[default]
    Likelihood,
    /// Keep the best partial hypotheses by the full confidence-aware score.
    Stepwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub max_length: usize,
    pub temperature: Temperature,
    #[serde(default)]
    pub pruning: Pruning,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: DEFAULT_BEAM_SIZE,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            max_length: DEFAULT_MAX_LENGTH,
            temperature: Temperature::default(),
            pruning: Pruning::Likelihood,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "alpha must be ≥ 0, got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "beta must be finite, got {}",
                self.beta
            )));
        }
        if self.max_length == 0 {
            return Err(Error::Config("max length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Descending score, then shorter, then lexicographically smaller tokens.
fn rank_order(a: (f64, usize, &[u32]), b: (f64, usize, &[u32])) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then_with(|| a.2.cmp(b.2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHypothesis {
    /// Position in the input list.
    pub index: usize,
    pub score: f64,
    pub length: usize,
    pub mean_confidence: f64,
}

/// Ranks precomputed hypotheses by [`beam_score`]; ties go to the shorter,
/// then to the lexicographically smaller token sequence.
pub fn rerank(
    candidates: &[BeamHypothesis],
    alpha: f64,
    beta: f64,
) -> Result<Vec<RankedHypothesis>> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no candidates to rerank".into()));
    }
    let mut ranked = candidates
        .iter()
        .enumerate()
        .map(|(index, h)| {
            let mean_confidence = h.mean_confidence();
            Ok(RankedHypothesis {
                index,
                score: beam_score(h.logp, h.length(), mean_confidence, alpha, beta)?,
                length: h.length(),
                mean_confidence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        rank_order(
            (a.score, a.length, &candidates[a.index].tokens),
            (b.score, b.length, &candidates[b.index].tokens),
        )
    });
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSearchOutput {
    /// Finished hypotheses by descending score, then unfinished ones.
    pub hypotheses: Vec<BeamHypothesis>,
    pub scores: Vec<f64>,
    /// `false` when no hypothesis emitted EOS within `max_length`.
    pub reached_eos: bool,
}

impl BeamSearchOutput {
    pub fn best(&self) -> &BeamHypothesis {
        &self.hypotheses[0]
    }
}

fn sort_by_score(hyps: &mut [(f64, BeamHypothesis)]) {
    hyps.sort_by(|a, b| {
        rank_order(
            (a.0, a.1.length(), &a.1.tokens),
            (b.0, b.1.length(), &b.1.tokens),
        )
    });
}

fn next_logprobs<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    prefix: &[u32],
    temperature: Temperature,
) -> Result<Vec<f64>> {
    let lp = provider.next_logprobs(prefix);
    if lp.len() != provider.vocab_size() {
        return Err(Error::Shape(format!(
            "provider returned {} log-probabilities for a vocabulary of {}",
            lp.len(),
            provider.vocab_size()
        )));
    }
    if lp.iter().any(|v| v.is_nan() || *v > 0.0) {
        return Err(Error::Numeric(
            "provider returned invalid log-probabilities".into(),
        ));
    }
    if temperature.get() == 1.0 {
        Ok(lp)
    } else {
        Ok(log_softmax_tempered(&lp, temperature.get()))
    }
}

fn token_confidence<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    head: Option<&HeadScorer<'_>>,
    prefix: &[u32],
    token: u32,
) -> Result<f64> {
    if let Some(h) = head {
        if let Some(c) = h.confidence(prefix, token)? {
            return Ok(c);
        }
    }
    Ok(provider.token_confidence(prefix, token).unwrap_or(1.0))
}

/// Beam search over `provider`. Returns every finished hypothesis ranked by
/// score, followed by any hypotheses still open at `max_length`.
pub fn beam_search<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    head: Option<HeadScorer<'_>>,
    config: &BeamConfig,
) -> Result<BeamSearchOutput> {
    config.validate()?;
    let (bos, eos) = (provider.bos(), provider.eos());
    let partial_score = |h: &BeamHypothesis| h.score(config.alpha, config.beta);

    let mut active = vec![BeamHypothesis {
        tokens: Vec::new(),
        logp: 0.0,
        token_confidences: Vec::new(),
        content_mask: Vec::new(),
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();

    for _ in 0..config.max_length {
        if active.is_empty() {
            break;
        }
        // (logp, parent, token)
        let mut expansions: Vec<(f64, usize, u32)> = Vec::new();
        for (pi, h) in active.iter().enumerate() {
            let prefix: Vec<u32> = std::iter::once(bos)
                .chain(h.tokens.iter().copied())
                .collect();
            let lp = next_logprobs(provider, &prefix, config.temperature)?;
            for (tok, &l) in lp.iter().enumerate() {
                let tok = tok as u32;
                if tok == bos || l == f64::NEG_INFINITY {
                    continue;
                }
                expansions.push((h.logp + l, pi, tok));
            }
        }
        let extend = |&(logp, pi, tok): &(f64, usize, u32)| -> Result<BeamHypothesis> {
            let parent = &active[pi];
            let prefix: Vec<u32> = std::iter::once(bos)
                .chain(parent.tokens.iter().copied())
                .collect();
            let conf = token_confidence(provider, head.as_ref(), &prefix, tok)?;
            let mut h = parent.clone();
            h.tokens.push(tok);
            h.logp = logp;
            h.token_confidences.push(conf);
            h.content_mask.push(tok != eos);
            h.finished = tok == eos;
            Ok(h)
        };
        let selected: Vec<BeamHypothesis> = match config.pruning {
            Pruning::Likelihood => {
                let key = |e: &(f64, usize, u32)| {
                    let parent = &active[e.1].tokens;
                    (
                        e.0,
                        parent
                            .iter()
                            .copied()
                            .chain(std::iter::once(e.2))
                            .collect::<Vec<u32>>(),
                    )
                };
                let mut keyed: Vec<_> = expansions.iter().map(|e| (key(e), e)).collect();
                keyed.sort_by(|a, b| b.0 .0.total_cmp(&a.0 .0).then_with(|| a.0 .1.cmp(&b.0 .1)));
                keyed
                    .into_iter()
                    .take(config.beam_size)
                    .map(|(_, e)| extend(e))
                    .collect::<Result<_>>()?
            }
            Pruning::Stepwise => {
                let mut all: Vec<(f64, BeamHypothesis)> = expansions
                    .iter()
                    .map(|e| extend(e).map(|h| (partial_score(&h), h)))
                    .collect::<Result<_>>()?;
                sort_by_score(&mut all);
                all.into_iter()
                    .take(config.beam_size)
                    .map(|(_, h)| h)
                    .collect()
            }
        };
        active = Vec::new();
        for h in selected {
            if h.finished {
                finished.push(h);
            } else {
                active.push(h);
            }
        }
    }

    let reached_eos = !finished.is_empty();
    let mut done: Vec<(f64, BeamHypothesis)> = finished
        .into_iter()
        .map(|h| (partial_score(&h), h))
        .collect();
    sort_by_score(&mut done);
    let mut open: Vec<(f64, BeamHypothesis)> =
        active.into_iter().map(|h| (partial_score(&h), h)).collect();
    sort_by_score(&mut open);
    let (scores, hypotheses) = done.into_iter().chain(open).unzip();
    Ok(BeamSearchOutput {
        hypotheses,
        scores,
        reached_eos,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GreedyConfidence {
    /// Every token confidence is 1.0.
    #[default]
    Fixed,
    /// Confidences come from the head or provider, as in beam search.
    Scored,
}

/// Argmax decoding (lowest token id on ties). Equivalent to beam search
/// with `beam_size = 1` on the token path.
pub fn greedy_decode<P: TokenDistributionProvider + ?Sized>(
    provider: &P,
    head: Option<HeadScorer<'_>>,
    config: &BeamConfig,
    confidence: GreedyConfidence,
) -> Result<BeamHypothesis> {
    let cfg = BeamConfig {
        beam_size: 1,
        beta: 0.0,
        pruning: Pruning::Likelihood,
        ..*config
    };
    let head = match confidence {
        GreedyConfidence::Fixed => None,
        GreedyConfidence::Scored => head,
    };
    let mut out = beam_search(provider, head, &cfg)?;
    let mut best = out.hypotheses.swap_remove(0);
    if confidence == GreedyConfidence::Fixed {
        best.token_confidences.iter_mut().for_each(|c| *c = 1.0);
    }
    Ok(best)
}

/// First-order toy language model over at most 16 tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub bos: u32,
    pub eos: u32,
    /// `transitions[prev][next]`; rows sum to 1.
    pub transitions: Vec<Vec<f64>>,
    /// Optional provider-side confidence for each transition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<Vec<Vec<f64>>>,
}

pub const TOY_MAX_VOCAB: usize = 16;

impl ToyModel {
    pub fn new(
        bos: u32,
        eos: u32,
        transitions: Vec<Vec<f64>>,
        confidences: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let model = Self {
            bos,
            eos,
            transitions,
            confidences,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.transitions.len();
        if v == 0 || v > TOY_MAX_VOCAB {
            return Err(Error::Invalid(format!(
                "toy vocabulary must have 1..={TOY_MAX_VOCAB} tokens, got {v}"
            )));
        }
        if self.bos as usize >= v || self.eos as usize >= v || self.bos == self.eos {
            return Err(Error::Invalid(
                "bos/eos must be distinct valid token ids".into(),
            ));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.len() != v {
                return Err(Error::Shape(format!(
                    "transition row {i} has {} entries, expected {v}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Invalid(format!(
                    "transition row {i} has a value outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("transition row {i} sums to {sum}")));
            }
        }
        if let Some(conf) = &self.confidences {
            if conf.len() != v || conf.iter().any(|r| r.len() != v) {
                return Err(Error::Shape(
                    "confidence table must match the transition table".into(),
                ));
            }
            if conf.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Invalid("confidences must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    /// Random model with BOS = 0, EOS = 1; BOS is never emitted and EOS
    /// keeps at least `min_eos` mass in every row.
    pub fn random<R: Rng + ?Sized>(vocab: usize, min_eos: f64, rng: &mut R) -> Result<Self> {
        if !(3..=TOY_MAX_VOCAB).contains(&vocab) {
            return Err(Error::Config(format!(
                "random toy vocabulary must be 3..=16, got {vocab}"
            )));
        }
        let transitions = (0..vocab)
            .map(|_| {
                let mut w: Vec<f64> = (0..vocab)
                    .map(|_| rng.random::<f64>().powi(2) + 0.01)
                    .collect();
                w[0] = 0.0;
                let rest: f64 = w
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != 1)
                    .map(|(_, x)| x)
                    .sum();
                let eos_share = min_eos + (1.0 - min_eos) * w[1] / (w[1] + rest);
                let scale = (1.0 - eos_share) / rest;
                w.iter_mut()
                    .enumerate()
                    .for_each(|(j, x)| *x = if j == 1 { eos_share } else { *x * scale });
                let drift: f64 = 1.0 - w.iter().sum::<f64>();
                w[1] += drift;
                w
            })
            .collect();
        let confidences = (0..vocab)
            .map(|_| (0..vocab).map(|_| rng.random::<f64>()).collect())
            .collect();
        Self::new(0, 1, transitions, Some(confidences))
    }
}

impl TokenDistributionProvider for ToyModel {
    fn vocab_size(&self) -> usize {
        self.transitions.len()
    }

    fn bos(&self) -> u32 {
        self.bos
    }

    fn eos(&self) -> u32 {
        self.eos
    }

    fn next_logprobs(&self, prefix: &[u32]) -> Vec<f64> {
        let last = *prefix.last().unwrap_or(&self.bos) as usize;
        let row: Vec<f64> = self.transitions[last].iter().map(|p| p.ln()).collect();
        debug_assert!(log_sum_exp(&row).abs() < 1e-6);
        row
    }

    fn token_confidence(&self, prefix: &[u32], token: u32) -> Option<f64> {
        let last = *prefix.last().unwrap_or(&self.bos) as usize;
        self.confidences.as_ref().map(|c| c[last][token as usize])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyp(tokens: &[u32], logp: f64, conf: f64) -> BeamHypothesis {
        let n = tokens.len();
        BeamHypothesis::new(tokens.to_vec(), logp, vec![conf; n], vec![true; n], true).unwrap()
    }

    #[test]
    fn beam_score_examples() {
        assert!((beam_score(-4.0, 4, 0.5, 1.0, 0.3).unwrap() - (-0.85)).abs() < 1e-15);
        assert_eq!(beam_score(-4.0, 4, 0.5, 1.0, 0.0).unwrap(), -1.0);
        assert!((beam_score(-4.0, 7, 0.5, 0.0, 0.3).unwrap() - (-3.85)).abs() < 1e-15);
        assert!(beam_score(-1.0, 0, 0.5, 1.0, 0.3).is_err());
    }

    #[test]
    fn rerank_flip() {
        let a = hyp(&[5, 6], -2.0, 0.2);
        let b = hyp(&[7, 8], -2.4, 0.9);
        let ranked = rerank(&[a.clone(), b.clone()], 1.0, 0.3).unwrap();
        assert_eq!(ranked[0].index, 1);
        assert!((ranked[0].score - (-0.93)).abs() < 1e-12);
        assert!((ranked[1].score - (-0.94)).abs() < 1e-12);
        let ranked = rerank(&[a, b], 1.0, 0.0).unwrap();
        assert_eq!(ranked[0].index, 0);
        assert_eq!(ranked[0].score, -1.0);
        assert_eq!(ranked[1].score, -1.2);
    }

    #[test]
    fn rerank_single_and_empty() {
        let r = rerank(&[hyp(&[3], -0.5, 0.5)], 1.0, 0.3).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].index, 0);
        assert!(rerank(&[], 1.0, 0.3).is_err());
    }

    #[test]
    fn rerank_tie_breaks() {
        // identical scores: shorter first, then lexicographic
        let long = hyp(&[1, 2, 3, 4], -4.0, 0.5);
        let short = hyp(&[9, 9], -2.0, 0.5);
        let short_lex = hyp(&[2, 9], -2.0, 0.5);
        let r = rerank(&[long, short, short_lex], 1.0, 0.3).unwrap();
        assert_eq!(r.iter().map(|x| x.index).collect::<Vec<_>>(), vec![2, 1, 0]);
    }

    #[test]
    fn mean_confidence_uses_content_tokens() {
        let h =
            BeamHypothesis::new(vec![4, 1], -1.0, vec![0.6, 0.1], vec![true, false], true).unwrap();
        assert_eq!(h.mean_confidence(), 0.6);
        assert_eq!(h.length(), 1);
        let empty = BeamHypothesis::new(vec![1], 0.0, vec![0.3], vec![false], true).unwrap();
        assert_eq!(empty.mean_confidence(), 0.3);
        assert_eq!(empty.length(), 0);
    }

    fn dominant_path_model() -> ToyModel {
        // BOS=0, EOS=1, path 0 → 2 → 3 → 1 carries 0.9 per step
        let t = vec![
            vec![0.0, 0.05, 0.9, 0.05],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.05, 0.05, 0.9],
            vec![0.0, 0.9, 0.05, 0.05],
        ];
        ToyModel::new(0, 1, t, None).unwrap()
    }

    #[test]
    fn dominant_path_wins() {
        let m = dominant_path_model();
        let cfg = BeamConfig {
            max_length: 6,
            ..Default::default()
        };
        let out = beam_search(&m, None, &cfg).unwrap();
        assert!(out.reached_eos);
        assert_eq!(out.best().tokens, vec![2, 3, 1]);
        assert!((out.best().logp - 3.0 * 0.9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn immediate_eos() {
        let t = vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.5, 0.5],
        ];
        let m = ToyModel::new(0, 1, t, None).unwrap();
        let out = beam_search(&m, None, &BeamConfig::default()).unwrap();
        assert_eq!(out.hypotheses.len(), 1);
        assert_eq!(out.best().tokens, vec![1]);
        assert_eq!(out.best().logp, 0.0);
        assert_eq!(out.best().length(), 0);
    }

    #[test]
    fn unfinished_is_flagged() {
        let t = vec![
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let m = ToyModel::new(0, 1, t, None).unwrap();
        let cfg = BeamConfig {
            max_length: 4,
            ..Default::default()
        };
        let out = beam_search(&m, None, &cfg).unwrap();
        assert!(!out.reached_eos);
        assert!(!out.best().finished);
        assert_eq!(out.best().tokens, vec![2, 2, 2, 2]);
    }

    #[test]
    fn greedy_matches_beam_one_and_fixes_confidence() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let m = ToyModel::random(5, 0.2, &mut rng).unwrap();
        let cfg = BeamConfig {
            max_length: 6,
            ..Default::default()
        };
        let g = greedy_decode(&m, None, &cfg, GreedyConfidence::Fixed).unwrap();
        let b = beam_search(
            &m,
            None,
            &BeamConfig {
                beam_size: 1,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(g.tokens, b.best().tokens);
        assert_eq!(g.mean_confidence(), 1.0);
        let scored = greedy_decode(&m, None, &cfg, GreedyConfidence::Scored).unwrap();
        assert_eq!(scored.tokens, g.tokens);
        assert!(scored.mean_confidence() < 1.0);
    }

    #[test]
    fn greedy_tie_takes_lowest_id() {
        let t = vec![
            vec![0.0, 0.2, 0.4, 0.4],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
        ];
        let m = ToyModel::new(0, 1, t, None).unwrap();
        let g = greedy_decode(&m, None, &BeamConfig::default(), GreedyConfidence::Fixed).unwrap();
        assert_eq!(g.tokens, vec![2, 1]);
    }

    #[test]
    fn toy_model_validation() {
        assert!(ToyModel::new(0, 1, vec![vec![0.5, 0.4], vec![0.0, 1.0]], None).is_err());
        assert!(ToyModel::new(0, 0, vec![vec![0.0, 1.0], vec![0.0, 1.0]], None).is_err());
        assert!(ToyModel::new(0, 1, vec![vec![0.0; 17]; 17], None).is_err());
    }

    struct ConstStates(Vec<f64>);
    impl HiddenStateSource for ConstStates {
        fn hidden_state(&self, _prefix: &[u32], _token: u32) -> Option<Vec<f64>> {
            Some(self.0.clone())
        }
    }

    #[test]
    fn head_confidences_take_precedence() {
        let m = dominant_path_model();
        let params = HeadParams::zeros(&crate::head::HeadConfig::new(4));
        let states = ConstStates(vec![0.1, 0.2, 0.3, 0.4]);
        let head = HeadScorer {
            params: &params,
            states: &states,
        };
        let out = beam_search(&m, Some(head), &BeamConfig::default()).unwrap();
        assert!(out.best().token_confidences.iter().all(|&c| c == 0.5));
        let out = beam_search(&m, None, &BeamConfig::default()).unwrap();
        assert!(out.best().token_confidences.iter().all(|&c| c == 1.0));
    }
}
