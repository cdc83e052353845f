//! Synthetic evaluation sets with controlled geometry.
//!
//! [`degenerate_set`] hits exact accuracies with all-1.0 confidences.
//! [`mini_set`] is a small but realistic set: per-candidate quality drives
//! embedding similarity, caption overlap, hidden states and (more weakly)
//! likelihood, so a trained head has something to learn.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::semantic::Family;
use crate::tensor_io::{
    write_manifest, write_tensor, CandidateRecord, DType, EmbeddingRole, ExampleRecord, Tensor,
};

const WORDS: &[&str] = &[
    "a",
    "dog",
    "barks",
    "water",
    "flows",
    "birds",
    "chirp",
    "car",
    "engine",
    "idles",
    "rain",
    "falls",
    "on",
    "roof",
    "people",
    "talk",
    "loudly",
    "wind",
    "blows",
    "through",
    "trees",
    "door",
    "creaks",
    "open",
    "footsteps",
    "walk",
    "gravel",
    "bell",
    "rings",
    "distance",
    "machine",
    "hums",
    "steadily",
    "crowd",
    "cheers",
    "stadium",
    "thunder",
    "rumbles",
    "far",
    "away",
    "train",
    "passes",
    "by",
    "child",
    "laughs",
    "quietly",
    "music",
    "plays",
    "softly",
];

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn gaussian<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Unit vector with cosine exactly `c` to unit vector `axis`.
fn at_cosine<R: Rng>(axis: &[f64], c: f64, rng: &mut R) -> Vec<f64> {
    let mut noise = gaussian(axis.len(), rng);
    let proj: f64 = noise.iter().zip(axis).map(|(a, b)| a * b).sum();
    noise.iter_mut().zip(axis).for_each(|(n, a)| *n -= proj * a);
    unit(&mut noise);
    let s = (1.0 - c * c).max(0.0).sqrt();
    axis.iter()
        .zip(&noise)
        .map(|(a, n)| c * a + s * n)
        .collect()
}

fn write_rows(path: &Path, rows: &[Vec<f64>], dtype: DType) -> Result<()> {
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let tensor = Tensor::from_f64(&flat, vec![rows.len() as u64, cols as u64], dtype)?;
    write_tensor(&tensor, path)
}

fn refs_map(pairs: &[(Family, &str, &str)]) -> BTreeMap<Family, BTreeMap<EmbeddingRole, String>> {
    let mut out: BTreeMap<Family, BTreeMap<EmbeddingRole, String>> = BTreeMap::new();
    for (family, r, c) in pairs {
        let roles = out.entry(*family).or_default();
        roles.insert(EmbeddingRole::References, r.to_string());
        roles.insert(EmbeddingRole::Candidates, c.to_string());
    }
    out
}

fn word_ids(caption: &str) -> Vec<u32> {
    caption
        .split_whitespace()
        .map(|w| {
            WORDS
                .iter()
                .position(|x| *x == w)
                .map_or(2, |i| i as u32 + 2)
        })
        .collect()
}

fn tokens_with_eos(
    caption: &str,
    logprobs: Vec<f64>,
    eos_lp: f64,
) -> (Vec<u32>, Vec<f64>, Vec<bool>) {
    let mut ids = word_ids(caption);
    let mut lps = logprobs;
    let mut mask = vec![true; ids.len()];
    ids.push(1);
    lps.push(eos_lp);
    mask.push(false);
    (ids, lps, mask)
}

/// Writes `n` single-candidate examples whose CLAP and sentence-embedding
/// accuracies at `tau` are exactly `clap_correct / n` and
/// `sbert_correct / n`. Embedding files are shared between examples.
pub fn degenerate_set(
    dir: impl AsRef<Path>,
    n: usize,
    clap_correct: usize,
    sbert_correct: usize,
    tau: f64,
) -> Result<()> {
    if clap_correct > n || sbert_correct > n {
        return Err(Error::Config("correct counts exceed the set size".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("emb")).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let hi = (tau + 0.2).min(0.99);
    let lo = (tau - 0.3).max(-0.99);
    for (family, dim) in [(Family::Clap, 16), (Family::Sbert, 12)] {
        let mut axis = gaussian(dim, &mut rng);
        unit(&mut axis);
        let refs: Vec<Vec<f64>> = (0..5).map(|_| axis.clone()).collect();
        write_rows(
            &dir.join(format!("emb/{family}_refs.bin")),
            &refs,
            DType::F32,
        )?;
        for (tag, c) in [("good", hi), ("bad", lo)] {
            let cand = at_cosine(&axis, c, &mut rng);
            write_rows(
                &dir.join(format!("emb/{family}_{tag}.bin")),
                &[cand],
                DType::F32,
            )?;
        }
    }
    let records: Vec<ExampleRecord> = (0..n)
        .map(|i| {
            let clap = if i < clap_correct { "good" } else { "bad" };
            let sbert = if i < sbert_correct { "good" } else { "bad" };
            let (token_ids, token_logprobs, token_mask) =
                tokens_with_eos("a dog barks", vec![-0.1, -0.2, -0.3], -0.05);
            ExampleRecord {
                schema_version: Some(crate::tensor_io::MANIFEST_SCHEMA_VERSION),
                example_id: format!("ex{i:04}"),
                references: vec!["a dog barks".into(); 5],
                candidates: vec![CandidateRecord {
                    caption: "a dog barks".into(),
                    token_ids,
                    token_logprobs,
                    token_mask,
                    hidden_state_ref: None,
                    mean_confidence: Some(1.0),
                }],
                embedding_refs: refs_map(&[
                    (
                        Family::Clap,
                        "emb/clap_refs.bin",
                        &format!("emb/clap_{clap}.bin"),
                    ),
                    (
                        Family::Sbert,
                        "emb/sbert_refs.bin",
                        &format!("emb/sbert_{sbert}.bin"),
                    ),
                ]),
            }
        })
        .collect();
    write_manifest(dir.join("manifest.jsonl"), &records)
}

/// Shape of a [`mini_set`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiniSpec {
    pub examples: usize,
    pub candidates: usize,
    pub d_model: usize,
    pub clap_dim: usize,
    pub sbert_dim: usize,
    pub seed: u64,
}

impl Default for MiniSpec {
    fn default() -> Self {
        Self {
            examples: 20,
            candidates: 5,
            d_model: 32,
            clap_dim: 64,
            sbert_dim: 48,
            seed: 2024,
        }
    }
}

/// Writes a manifest, hidden states and both embedding families into `dir`.
pub fn mini_set(dir: impl AsRef<Path>, spec: &MiniSpec) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["emb", "hidden"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Quality is written into a fixed direction of the hidden state.
    let mut quality_axis = gaussian(spec.d_model, &mut rng);
    unit(&mut quality_axis);

    let mut records = Vec::with_capacity(spec.examples);
    for ex in 0..spec.examples {
        let id = format!("clip{ex:03}");
        let mut pool: Vec<&str> = WORDS[1..].to_vec();
        pool.shuffle(&mut rng);
        let topic: Vec<&str> = pool[..4].to_vec();
        let others: Vec<&str> = pool[4..].to_vec();

        let references: Vec<String> = (0..5)
            .map(|_| {
                let mut words: Vec<&str> = vec!["a"];
                words.extend(topic.iter().filter(|_| rng.random::<f64>() < 0.85));
                if words.len() < 3 {
                    words.extend(&topic[..2]);
                }
                words.push(others[rng.random_range(0..8)]);
                words.join(" ")
            })
            .collect();

        let qualities: Vec<f64> = (0..spec.candidates)
            .map(|_| rng.random_range(0.25..0.95))
            .collect();

        let mut clap_axis = gaussian(spec.clap_dim, &mut rng);
        unit(&mut clap_axis);
        let mut sbert_axis = gaussian(spec.sbert_dim, &mut rng);
        unit(&mut sbert_axis);
        let clap_refs: Vec<Vec<f64>> = (0..5)
            .map(|_| at_cosine(&clap_axis, 0.97, &mut rng))
            .collect();
        let sbert_refs: Vec<Vec<f64>> = (0..5)
            .map(|_| at_cosine(&sbert_axis, 0.97, &mut rng))
            .collect();
        let clap_cands: Vec<Vec<f64>> = qualities
            .iter()
            .map(|&q| at_cosine(&clap_axis, q, &mut rng))
            .collect();
        let sbert_cands: Vec<Vec<f64>> = qualities
            .iter()
            .map(|&q| at_cosine(&sbert_axis, (q - 0.15).max(0.0), &mut rng))
            .collect();
        let emb = |name: &str| format!("emb/{id}_{name}.bin");
        write_rows(&dir.join(emb("clap_refs")), &clap_refs, DType::F32)?;
        write_rows(&dir.join(emb("clap_cands")), &clap_cands, DType::F32)?;
        write_rows(&dir.join(emb("sbert_refs")), &sbert_refs, DType::F32)?;
        write_rows(&dir.join(emb("sbert_cands")), &sbert_cands, DType::F32)?;

        let mut candidates = Vec::with_capacity(spec.candidates);
        for (ci, &q) in qualities.iter().enumerate() {
            let keep = ((q * 4.0).round() as usize).min(4);
            let mut words: Vec<&str> = vec!["a"];
            words.extend(&topic[..keep]);
            let fillers = 1 + rng.random_range(0..3);
            words.extend(others[8..8 + fillers].iter());
            if rng.random::<f64>() > q {
                words[1..].shuffle(&mut rng);
            }
            let caption = words.join(" ");
            // Likelihood tracks quality only loosely.
            let logprobs: Vec<f64> = (1..words.len() + 1)
                .map(|_| {
                    let u: f64 = rng.random();
                    -(0.15 + 0.9 * (1.0 - q) * u + 0.6 * rng.random::<f64>())
                })
                .collect();
            let (token_ids, token_logprobs, token_mask) =
                tokens_with_eos(&caption, logprobs[..words.len()].to_vec(), -0.05);

            let hidden: Vec<Vec<f64>> = (0..token_ids.len())
                .map(|_| {
                    let noise = gaussian(spec.d_model, &mut rng);
                    quality_axis
                        .iter()
                        .zip(&noise)
                        .map(|(a, n)| 3.0 * (q - 0.6) * a + 0.3 * n)
                        .collect()
                })
                .collect();
            let hidden_rel = format!("hidden/{id}_c{ci}.bin");
            write_rows(&dir.join(&hidden_rel), &hidden, DType::F32)?;

            let jitter: f64 = StandardNormal.sample(&mut rng);
            let noisy = q + 0.1 * jitter;
            candidates.push(CandidateRecord {
                caption,
                token_ids,
                token_logprobs,
                token_mask,
                hidden_state_ref: Some(hidden_rel),
                mean_confidence: Some(noisy.clamp(0.01, 0.99)),
            });
        }

        records.push(ExampleRecord {
            schema_version: Some(crate::tensor_io::MANIFEST_SCHEMA_VERSION),
            example_id: id.clone(),
            references,
            candidates,
            embedding_refs: refs_map(&[
                (Family::Clap, &emb("clap_refs"), &emb("clap_cands")),
                (Family::Sbert, &emb("sbert_refs"), &emb("sbert_cands")),
            ]),
        });
    }
    write_manifest(dir.join("manifest.jsonl"), &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::{score_set, CandidateSelector};
    use crate::tensor_io::load_manifest;

    #[test]
    fn degenerate_accuracies_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        degenerate_set(dir.path(), 40, 13, 7, 0.6).unwrap();
        let set = load_manifest(dir.path().join("manifest.jsonl")).unwrap();
        let clap = score_set(&set, Family::Clap, 0.6, &CandidateSelector::Index(0)).unwrap();
        let sbert = score_set(&set, Family::Sbert, 0.6, &CandidateSelector::Index(0)).unwrap();
        assert_eq!(clap.accuracy(), 13.0 / 40.0);
        assert_eq!(sbert.accuracy(), 7.0 / 40.0);
    }

    #[test]
    fn mini_set_loads_and_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = MiniSpec {
            examples: 3,
            ..MiniSpec::default()
        };
        mini_set(a.path(), &spec).unwrap();
        mini_set(b.path(), &spec).unwrap();
        let set = load_manifest(a.path().join("manifest.jsonl")).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.hidden_states(0, 0).unwrap().is_some());
        let read = |d: &Path| std::fs::read(d.join("manifest.jsonl")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn at_cosine_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut axis = gaussian(8, &mut rng);
        unit(&mut axis);
        let v = at_cosine(&axis, 0.3, &mut rng);
        let c: f64 = v.iter().zip(&axis).map(|(a, b)| a * b).sum();
        assert!((c - 0.3).abs() < 1e-12);
    }
}
