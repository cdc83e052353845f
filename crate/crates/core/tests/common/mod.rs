//! Independent reference implementations shared by the integration tests
//! and the acceptance target. Written for clarity, not speed: direct
//! counting, explicit loops, no shared helpers with the library.
#![allow(dead_code)]

use rand::Rng;
use semcal::decoding::ToyModel;
use semcal::head::{HeadExample, HeadParams};
use semcal::Matrix;

pub fn workspace_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

// ---------- text metrics ----------

fn count_occurrences(tokens: &[&str], gram: &[&str]) -> usize {
    if tokens.len() < gram.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len())
        .filter(|&i| &tokens[i..i + gram.len()] == gram)
        .count()
}

fn distinct_ngrams<'a>(tokens: &[&'a str], n: usize) -> Vec<Vec<&'a str>> {
    let mut out: Vec<Vec<&str>> = Vec::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            let g = tokens[i..i + n].to_vec();
            if !out.contains(&g) {
                out.push(g);
            }
        }
    }
    out
}

/// Sentence BLEU by direct counting; add-one smoothing on orders ≥ 2 when
/// `smooth` is set. Brevity penalty uses the closest reference length,
/// preferring the shorter one on ties.
pub fn bleu_oracle(cand: &[&str], refs: &[Vec<&str>], max_n: usize, smooth: bool) -> f64 {
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 1..=max_n {
        let total = if cand.len() >= n {
            cand.len() - n + 1
        } else {
            0
        };
        let mut clipped = 0;
        for g in distinct_ngrams(cand, n) {
            let c = count_occurrences(cand, &g);
            let m = refs.iter().map(|r| count_occurrences(r, &g)).max().unwrap();
            clipped += c.min(m);
        }
        let p = if smooth && n >= 2 {
            (clipped as f64 + 1.0) / (total as f64 + 1.0)
        } else if total == 0 {
            0.0
        } else {
            clipped as f64 / total as f64
        };
        product *= p;
    }
    if product == 0.0 {
        return 0.0;
    }
    let c = cand.len() as i64;
    let mut best = refs[0].len() as i64;
    for r in refs {
        let l = r.len() as i64;
        let (d, bd) = ((l - c).abs(), (best - c).abs());
        if d < bd || (d == bd && l < best) {
            best = l;
        }
    }
    let bp = if c > best {
        1.0
    } else {
        (1.0 - best as f64 / c as f64).exp()
    };
    bp * product.powf(1.0 / max_n as f64)
}

/// CIDEr-D by direct counting over a corpus of reference sets.
pub struct CiderOracle<'a> {
    refs: &'a [Vec<Vec<&'a str>>],
}

impl<'a> CiderOracle<'a> {
    pub fn new(refs: &'a [Vec<Vec<&'a str>>]) -> Self {
        Self { refs }
    }

    fn df(&self, gram: &[&str]) -> f64 {
        self.refs
            .iter()
            .filter(|set| set.iter().any(|r| count_occurrences(r, gram) > 0))
            .count() as f64
    }

    fn vector(&self, tokens: &[&'a str], n: usize) -> Vec<(Vec<&'a str>, f64)> {
        let big_n = self.refs.len() as f64;
        distinct_ngrams(tokens, n)
            .into_iter()
            .map(|g| {
                let tf = count_occurrences(tokens, &g) as f64;
                let w = tf * (big_n.ln() - self.df(&g).max(1.0).ln());
                (g, w)
            })
            .collect()
    }

    pub fn score(&self, cand: &[&'a str], example: usize) -> f64 {
        let refs = &self.refs[example];
        let sigma = 6.0;
        let mut sum = 0.0;
        for r in refs {
            let delta = cand.len() as f64 - r.len() as f64;
            let penalty = (-delta * delta / (2.0 * sigma * sigma)).exp();
            let mut per_ref = 0.0;
            for n in 1..=4 {
                let vh = self.vector(cand, n);
                let vr = self.vector(r, n);
                let norm =
                    |v: &[(Vec<&str>, f64)]| v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
                let mut dot = 0.0;
                for (g, a) in &vh {
                    if let Some((_, b)) = vr.iter().find(|(h, _)| h == g) {
                        dot += a.min(*b) * b;
                    }
                }
                let (nh, nr) = (norm(&vh), norm(&vr));
                if nh != 0.0 && nr != 0.0 {
                    dot /= nh * nr;
                }
                per_ref += dot * penalty;
            }
            sum += per_ref / 4.0;
        }
        10.0 * sum / refs.len() as f64
    }
}

/// Every sequence of length 0..=max_len over `vocab`.
pub fn all_sequences<'a>(vocab: &[&'a str], max_len: usize) -> Vec<Vec<&'a str>> {
    let mut out = vec![vec![]];
    let mut frontier: Vec<Vec<&str>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for w in vocab {
                let mut t = s.clone();
                t.push(*w);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

// ---------- calibration ----------

/// ECE by filtering the whole sample once per bin and averaging members
/// directly, rather than accumulating running sums.
pub fn ece_oracle(conf: &[f64], correct: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for m in 0..bins {
        let members: Vec<usize> = (0..conf.len())
            .filter(|&i| {
                let b = ((conf[i] * bins as f64).floor() as usize).min(bins - 1);
                b == m
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / k;
        let avg = members.iter().map(|&i| conf[i]).sum::<f64>() / k;
        total += k / n * (acc - avg).abs();
    }
    total
}

pub fn nll_oracle(rows: &[Vec<f64>], targets: &[usize], t: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in rows.iter().zip(targets) {
        let scaled: Vec<f64> = row.iter().map(|z| z / t).collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scaled.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        total += lse - scaled[y];
    }
    total / rows.len() as f64
}

/// Calibrated logits `z` with targets drawn from `softmax(z)`, returned
/// as `k · z` so the NLL-optimal temperature is near `k`.
pub fn scaled_logit_dump<R: Rng>(
    n: usize,
    classes: usize,
    k: f64,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, 2.0).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..classes).map(|_| normal.sample(rng)).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * s;
        let mut y = classes - 1;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                y = i;
                break;
            }
            u -= wi;
        }
        rows.push(z.iter().map(|x| k * x).collect());
        targets.push(y);
    }
    (rows, targets)
}

/// Grid argmin of mean NLL over `T = 0.05, 0.06, ..., 20`.
pub fn grid_temperature(rows: &[Vec<f64>], targets: &[usize]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for i in 5..=2000 {
        let t = i as f64 / 100.0;
        let v = nll_oracle(rows, targets, t);
        if v < best.0 {
            best = (v, t);
        }
    }
    best.1
}

// ---------- confidence head ----------

/// Random head with biases spread so that ReLUs are mixed on and off.
pub fn random_params<R: Rng>(d: usize, rng: &mut R) -> HeadParams {
    let cfg = semcal::head::HeadConfig {
        d_model: d,
        dropout_rate: 0.0,
        seed: rng.random(),
    };
    let mut p = HeadParams::init(&cfg).unwrap();
    let mut flat = p.flatten();
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    p.assign_flat(&flat);
    p
}

pub fn random_example<R: Rng>(d: usize, rng: &mut R) -> HeadExample {
    let tokens = rng.random_range(1..=5);
    let data: Vec<f64> = (0..tokens * d)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let mut mask: Vec<bool> = (0..tokens).map(|_| rng.random_bool(0.7)).collect();
    mask[0] = true;
    HeadExample::new(
        Matrix::from_vec(tokens, d, data).unwrap(),
        mask,
        rng.random(),
    )
    .unwrap()
}

/// Forward pass written out with plain loops: relu, relu, sigmoid.
pub fn head_forward_oracle(x: &Matrix, p: &HeadParams) -> Vec<f64> {
    let mut out = Vec::new();
    for t in 0..x.rows() {
        let row = x.row(t);
        let h1: Vec<f64> = (0..p.hidden1())
            .map(|j| {
                let mut s = p.b1[j];
                for (i, xi) in row.iter().enumerate() {
                    s += p.w1.get(j, i) * xi;
                }
                s.max(0.0)
            })
            .collect();
        let h2: Vec<f64> = (0..p.hidden2())
            .map(|j| {
                let mut s = p.b2[j];
                for (i, hi) in h1.iter().enumerate() {
                    s += p.w2.get(j, i) * hi;
                }
                s.max(0.0)
            })
            .collect();
        let mut z = p.b3;
        for (i, hi) in h2.iter().enumerate() {
            z += p.w3[i] * hi;
        }
        out.push(1.0 / (1.0 + (-z).exp()));
    }
    out
}

/// Batch MSE between masked mean confidence and target, via the oracle
/// forward pass.
pub fn head_loss_oracle(batch: &[&HeadExample], p: &HeadParams) -> f64 {
    let mut total = 0.0;
    for ex in batch {
        let c = head_forward_oracle(&ex.hidden, p);
        let kept: Vec<f64> = c
            .iter()
            .zip(&ex.mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .collect();
        let mean = kept.iter().sum::<f64>() / kept.len() as f64;
        total += (mean - ex.target).powi(2);
    }
    total / batch.len() as f64
}

/// Central-difference gradient of [`head_loss_oracle`].
pub fn numeric_gradient(batch: &[&HeadExample], p: &HeadParams, h: f64) -> Vec<f64> {
    let base = p.flatten();
    let mut q = p.clone();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            plus[i] += h;
            q.assign_flat(&plus);
            let lp = head_loss_oracle(batch, &q);
            let mut minus = base.clone();
            minus[i] -= h;
            q.assign_flat(&minus);
            let lm = head_loss_oracle(batch, &q);
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise `|a - n| / max(|a|, |n|, scale)`; `scale` keeps
/// vanishing gradients from dividing rounding noise by zero.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], scale: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(scale))
        .fold(0.0, f64::max)
}

// ---------- decoding ----------

pub struct Enumerated {
    pub tokens: Vec<u32>,
    pub logp: f64,
    pub mean_conf: f64,
    pub content_len: usize,
}

/// Every finished sequence (content then EOS) of total length
/// `≤ max_length`, with log-probability and mean content confidence.
pub fn enumerate_finished(model: &ToyModel, max_length: usize) -> Vec<Enumerated> {
    let v = model.transitions.len() as u32;
    let content: Vec<u32> = (0..v)
        .filter(|&t| t != model.bos && t != model.eos)
        .collect();
    let conf = |a: u32, b: u32| {
        model
            .confidences
            .as_ref()
            .map_or(1.0, |c| c[a as usize][b as usize])
    };
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<u32>> = vec![vec![]];
    for len in 0..max_length {
        for seq in &frontier {
            let mut full = seq.clone();
            full.push(model.eos);
            let mut prev = model.bos;
            let mut logp = 0.0;
            let mut confs = Vec::new();
            for &t in &full {
                logp += model.transitions[prev as usize][t as usize].ln();
                confs.push(conf(prev, t));
                prev = t;
            }
            let content_confs = &confs[..seq.len()];
            let mean_conf = if content_confs.is_empty() {
                confs.iter().sum::<f64>() / confs.len() as f64
            } else {
                content_confs.iter().sum::<f64>() / content_confs.len() as f64
            };
            out.push(Enumerated {
                tokens: full,
                logp,
                mean_conf,
                content_len: seq.len(),
            });
        }
        if len + 1 < max_length {
            frontier = frontier
                .iter()
                .flat_map(|s| {
                    content.iter().map(move |&t| {
                        let mut n = s.clone();
                        n.push(t);
                        n
                    })
                })
                .collect();
        }
    }
    out
}

pub fn oracle_score(e: &Enumerated, alpha: f64, beta: f64) -> f64 {
    e.logp / (e.content_len.max(1) as f64).powf(alpha) + beta * e.mean_conf
}
