//! N-gram caption metrics: sentence BLEU, CIDEr-D, and the BLEU-4 based
//! "traditional" correctness used for the n-gram ECE baseline.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;

pub const TRADITIONAL_BLEU4_THRESHOLD: f64 = 0.25;
pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenizedCaption {
    pub tokens: Vec<String>,
}

impl TokenizedCaption {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").unwrap())
}

/// Lowercases, replaces every Unicode punctuation character (`P*`) with a
/// space, and splits on whitespace.
pub fn tokenize(caption: &str) -> TokenizedCaption {
    let lowered = caption.to_lowercase();
    let cleaned = punctuation().replace_all(&lowered, " ");
    TokenizedCaption::new(cleaned.split_whitespace())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BleuSmoothing {
    /// Plain modified precision; any zero precision makes BLEU zero.
    None,
    /// Add one to numerator and denominator of the precisions for n ≥ 2.
    #[default]
    AddOneHigherOrder,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and total candidate n-grams of order `n`.
fn modified_precision_counts(
    candidate: &[String],
    refs: &[TokenizedCaption],
    n: usize,
) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let total = candidate.len().saturating_sub(n - 1);
    let mut max_ref: HashMap<&[String], usize> = HashMap::new();
    for r in refs {
        for (g, c) in ngram_counts(&r.tokens, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let clipped = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (clipped, total)
}

/// Length of the reference closest to `len`, preferring the shorter on ties.
fn closest_ref_len(len: usize, refs: &[TokenizedCaption]) -> usize {
    refs.iter()
        .map(TokenizedCaption::len)
        .min_by_key(|&r| (r.abs_diff(len), r))
        .unwrap_or(0)
}

pub fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

/// Sentence BLEU with the default smoothing.
pub fn bleu(candidate: &TokenizedCaption, refs: &[TokenizedCaption], max_n: usize) -> f64 {
    bleu_with(candidate, refs, max_n, BleuSmoothing::default())
}

/// Sentence BLEU: geometric mean of modified n-gram precisions for
/// `n = 1..=max_n`, times the brevity penalty. Empty candidates and empty
/// reference lists score 0.
pub fn bleu_with(
    candidate: &TokenizedCaption,
    refs: &[TokenizedCaption],
    max_n: usize,
    smoothing: BleuSmoothing,
) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    if candidate.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (clipped, total) = modified_precision_counts(&candidate.tokens, refs, n);
        let p = match smoothing {
            BleuSmoothing::AddOneHigherOrder if n >= 2 => {
                (clipped as f64 + 1.0) / (total as f64 + 1.0)
            }
            _ if total == 0 => 0.0,
            _ => clipped as f64 / total as f64,
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let bp = brevity_penalty(candidate.len(), closest_ref_len(candidate.len(), refs));
    bp * (log_sum / max_n as f64).exp()
}

/// Strict test `score > 0.25`.
pub fn exceeds_traditional_threshold(bleu4: f64) -> bool {
    bleu4 > TRADITIONAL_BLEU4_THRESHOLD
}

pub fn traditional_correctness(candidate: &TokenizedCaption, refs: &[TokenizedCaption]) -> bool {
    exceeds_traditional_threshold(bleu(candidate, refs, 4))
}

type NgramVec = Vec<BTreeMap<String, f64>>;

struct TfIdf {
    vecs: NgramVec,
    norms: Vec<f64>,
    len: usize,
}

/// CIDEr-D scorer with document frequencies fixed by a corpus of reference
/// sets (one set per example).
#[derive(Debug, Clone)]
pub struct CiderScorer {
    refs: Vec<Vec<TokenizedCaption>>,
    doc_freq: HashMap<String, f64>,
    log_corpus_size: f64,
    sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScores {
    pub per_example: Vec<f64>,
    pub mean: f64,
}

fn ngram_key(gram: &[String]) -> String {
    gram.join(" ")
}

impl CiderScorer {
    pub fn new(refs_per_example: &[Vec<TokenizedCaption>]) -> Self {
        let mut doc_freq: HashMap<String, f64> = HashMap::new();
        for refs in refs_per_example {
            let mut seen = HashSet::new();
            for r in refs {
                for n in 1..=CIDER_MAX_N {
                    if r.len() >= n {
                        for w in r.tokens.windows(n) {
                            seen.insert(ngram_key(w));
                        }
                    }
                }
            }
            for g in seen {
                *doc_freq.entry(g).or_insert(0.0) += 1.0;
            }
        }
        Self {
            refs: refs_per_example.to_vec(),
            doc_freq,
            log_corpus_size: (refs_per_example.len() as f64).ln(),
            sigma: CIDER_SIGMA,
        }
    }

    pub fn corpus_size(&self) -> usize {
        self.refs.len()
    }

    fn tfidf(&self, caption: &TokenizedCaption) -> TfIdf {
        let mut vecs: NgramVec = vec![BTreeMap::new(); CIDER_MAX_N];
        let mut norms = vec![0.0; CIDER_MAX_N];
        for n in 1..=CIDER_MAX_N {
            let mut tf: BTreeMap<String, f64> = BTreeMap::new();
            if caption.len() >= n {
                for w in caption.tokens.windows(n) {
                    *tf.entry(ngram_key(w)).or_insert(0.0) += 1.0;
                }
            }
            for (g, count) in tf {
                let df = self.doc_freq.get(&g).copied().unwrap_or(0.0).max(1.0);
                let v = count * (self.log_corpus_size - df.ln());
                norms[n - 1] += v * v;
                vecs[n - 1].insert(g, v);
            }
        }
        TfIdf {
            vecs,
            norms: norms.into_iter().map(f64::sqrt).collect(),
            len: caption.len(),
        }
    }

    fn similarity(&self, hyp: &TfIdf, reference: &TfIdf) -> f64 {
        let delta = hyp.len as f64 - reference.len as f64;
        let penalty = (-(delta * delta) / (2.0 * self.sigma * self.sigma)).exp();
        let mut total = 0.0;
        for n in 0..CIDER_MAX_N {
            let mut val: f64 = hyp.vecs[n]
                .iter()
                .map(|(g, &vh)| {
                    let vr = reference.vecs[n].get(g).copied().unwrap_or(0.0);
                    vh.min(vr) * vr
                })
                .sum();
            if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
                val /= hyp.norms[n] * reference.norms[n];
            }
            total += val * penalty;
        }
        total / CIDER_MAX_N as f64
    }

    /// CIDEr-D of `candidate` against the references of example `example`.
    pub fn score(&self, candidate: &TokenizedCaption, example: usize) -> f64 {
        let refs = &self.refs[example];
        if refs.is_empty() {
            return 0.0;
        }
        let hyp = self.tfidf(candidate);
        let sum: f64 = refs
            .iter()
            .map(|r| self.similarity(&hyp, &self.tfidf(r)))
            .sum();
        10.0 * sum / refs.len() as f64
    }
}

/// Corpus CIDEr-D; candidates and reference sets are aligned by example.
pub fn cider(
    candidates: &[TokenizedCaption],
    refs_per_example: &[Vec<TokenizedCaption>],
) -> CiderScores {
    assert_eq!(
        candidates.len(),
        refs_per_example.len(),
        "candidates and reference sets must be aligned"
    );
    let scorer = CiderScorer::new(refs_per_example);
    let per_example: Vec<f64> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| scorer.score(c, i))
        .collect();
    let mean = if per_example.is_empty() {
        0.0
    } else {
        per_example.iter().sum::<f64>() / per_example.len() as f64
    };
    CiderScores { per_example, mean }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tc(s: &str) -> TokenizedCaption {
        tokenize(s)
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("A dog barks.").tokens, ["a", "dog", "barks"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("Water, flowing\u{2014}fast").tokens,
            ["water", "flowing", "fast"]
        );
        // Symbols are not punctuation.
        assert_eq!(tokenize("A+B").tokens, ["a+b"]);
    }

    #[test]
    fn perfect_match_is_one() {
        let c = tc("a dog barks loudly outside");
        assert_eq!(bleu(&c, std::slice::from_ref(&c), 4), 1.0);
    }

    #[test]
    fn unigram_precision_hand_count() {
        let c = tc("a b c d e");
        let r = tc("a b c d f");
        assert!((bleu(&c, &[r], 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn smoothing_keeps_partial_matches_positive() {
        let c = tc("b a d c");
        let r = tc("a b c d");
        assert_eq!(
            bleu_with(&c, std::slice::from_ref(&r), 4, BleuSmoothing::None),
            0.0
        );
        // p1 = 1, p2 = 1/4, p3 = 1/3, p4 = 1/2, BP = 1
        let expected = (1.0f64 * 0.25 * (1.0 / 3.0) * 0.5).powf(0.25);
        assert!((bleu(&c, &[r], 4) - expected).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_prefers_shorter_reference_on_ties() {
        // candidate length 4, references of length 3 and 5 are equally close
        let refs = [tc("x y z"), tc("x y z w v")];
        assert_eq!(closest_ref_len(4, &refs), 3);
        assert_eq!(brevity_penalty(4, 3), 1.0);
        assert!((brevity_penalty(2, 3) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        assert_eq!(bleu(&tc(""), &[tc("a b")], 4), 0.0);
    }

    #[test]
    fn traditional_threshold_is_strict() {
        assert!(!exceeds_traditional_threshold(0.25));
        assert!(exceeds_traditional_threshold(0.2500000001));
        let c = tc("the rain falls on a tin roof");
        assert!(traditional_correctness(&c, std::slice::from_ref(&c)));
        assert!(!traditional_correctness(
            &tc("birds chirp"),
            &[tc("engine idles loudly")]
        ));
    }

    #[test]
    fn cider_zero_overlap() {
        let refs = vec![vec![tc("a car passes by")], vec![tc("birds sing in trees")]];
        let scores = cider(&[tc("water drips slowly"), tc("birds sing")], &refs);
        assert_eq!(scores.per_example[0], 0.0);
        assert!(scores.per_example[1] > 0.0);
    }

    #[test]
    fn cider_single_document_corpus_has_zero_idf() {
        // log(N) - log(df) = 0 for every n-gram when N = 1.
        let c = tc("a dog barks");
        let scores = cider(&[c.clone()], &[vec![c]]);
        assert_eq!(scores.per_example, vec![0.0]);
    }

    #[test]
    fn cider_downweights_ubiquitous_ngrams() {
        let common = tc("a sound is heard");
        let refs = vec![
            vec![common.clone()],
            vec![tc("a sound is heard"), tc("rain hits a metal roof")],
            vec![tc("a sound is heard"), tc("a dog barks twice")],
        ];
        let scorer = CiderScorer::new(&refs);
        let distinctive = scorer.score(&tc("rain hits a metal roof"), 1);
        let ubiquitous = scorer.score(&common, 0);
        assert!(ubiquitous < distinctive, "{ubiquitous} vs {distinctive}");
    }
}
