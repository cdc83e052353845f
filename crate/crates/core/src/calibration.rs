//! Calibration metrics and temperature scaling.
//!
//! Binning uses `M` equal-width bins over `[0, 1]`; a confidence `c` lands in
//! bin `min(floor(c·M), M-1)`, so bins are `[lo, hi)` except the last, which
//! is closed at 1.0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean confidence of the bin; 0 when the bin is empty.
    pub mean_conf: f64,
    /// Fraction correct in the bin; 0 when the bin is empty.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceResult {
    pub ece: f64,
    pub bins: Vec<CalibrationBin>,
}

pub fn bin_index(conf: f64, bins: usize) -> usize {
    ((conf * bins as f64).floor() as usize).min(bins - 1)
}

fn check_inputs(confidences: &[f64], correct: &[bool]) -> Result<()> {
    if confidences.len() != correct.len() {
        return Err(Error::Invalid(format!(
            "{} confidences but {} correctness labels",
            confidences.len(),
            correct.len()
        )));
    }
    if confidences.is_empty() {
        return Err(Error::Invalid("no samples".into()));
    }
    if let Some(i) = confidences.iter().position(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::Invalid(format!(
            "confidence[{i}] = {} outside [0, 1]",
            confidences[i]
        )));
    }
    Ok(())
}

fn check_bins(bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::Config("number of bins must be at least 1".into()));
    }
    Ok(())
}

fn binned(confidences: &[f64], correct: &[bool], bins: usize) -> Vec<CalibrationBin> {
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += ok as usize;
    }
    (0..bins)
        .map(|b| {
            let (mean_conf, accuracy) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                (
                    conf_sum[b] / count[b] as f64,
                    hits[b] as f64 / count[b] as f64,
                )
            };
            CalibrationBin {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                count: count[b],
                mean_conf,
                accuracy,
            }
        })
        .collect()
}

/// Expected Calibration Error: `Σ_m (|B_m|/N)·|acc(B_m) − conf(B_m)|`.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<EceResult> {
    check_inputs(confidences, correct)?;
    check_bins(bins)?;
    let table = binned(confidences, correct, bins);
    let n = confidences.len() as f64;
    let ece = table
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| (b.count as f64 / n) * (b.accuracy - b.mean_conf).abs())
        .sum();
    Ok(EceResult { ece, bins: table })
}

/// Mean squared error between confidence and the 0/1 outcome.
pub fn brier(confidences: &[f64], correct: &[bool]) -> Result<f64> {
    check_inputs(confidences, correct)?;
    let sum: f64 = confidences
        .iter()
        .zip(correct)
        .map(|(&c, &ok)| {
            let d = c - if ok { 1.0 } else { 0.0 };
            d * d
        })
        .sum();
    Ok(sum / confidences.len() as f64)
}

/// Raw confidence counts, overall and split by correctness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceHistogram {
    pub edges: Vec<f64>,
    pub overall: Vec<usize>,
    pub correct: Vec<usize>,
    pub incorrect: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub bins: Vec<CalibrationBin>,
    pub histogram: ConfidenceHistogram,
}

pub fn confidence_histogram(
    confidences: &[f64],
    correct: &[bool],
    bins: usize,
) -> Result<ConfidenceHistogram> {
    check_inputs(confidences, correct)?;
    check_bins(bins)?;
    let mut h = ConfidenceHistogram {
        edges: (0..=bins).map(|b| b as f64 / bins as f64).collect(),
        overall: vec![0; bins],
        correct: vec![0; bins],
        incorrect: vec![0; bins],
    };
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, bins);
        h.overall[b] += 1;
        if ok {
            h.correct[b] += 1;
        } else {
            h.incorrect[b] += 1;
        }
    }
    Ok(h)
}

pub fn reliability_curve(
    confidences: &[f64],
    correct: &[bool],
    bins: usize,
) -> Result<ReliabilityCurve> {
    let EceResult { bins: table, .. } = ece(confidences, correct, bins)?;
    Ok(ReliabilityCurve {
        bins: table,
        histogram: confidence_histogram(confidences, correct, bins)?,
    })
}

/// Softmax temperature; strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 {
            Ok(Self(t))
        } else {
            Err(Error::Config(format!(
                "temperature must be positive, got {t}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(1.0)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(t: f64) -> Result<Self> {
        Self::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log softmax(z / T)`.
pub fn log_softmax_tempered(logits: &[f64], t: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / t).collect();
    let lse = log_sum_exp(&scaled);
    scaled.into_iter().map(|s| s - lse).collect()
}

/// `softmax(z / T)`, computed with max subtraction.
pub fn apply_temperature(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    let t = Temperature::new(t)?.get();
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::Invalid(format!("logit[{i}] is not finite")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / t).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

fn check_targets(rows: &Matrix, targets: &[usize]) -> Result<()> {
    if rows.rows() == 0 {
        return Err(Error::Invalid("no logit rows".into()));
    }
    if rows.rows() != targets.len() {
        return Err(Error::Invalid(format!(
            "{} logit rows but {} targets",
            rows.rows(),
            targets.len()
        )));
    }
    if let Some(i) = targets.iter().position(|&y| y >= rows.cols()) {
        return Err(Error::Invalid(format!(
            "target[{i}] = {} out of range for {} classes",
            targets[i],
            rows.cols()
        )));
    }
    if rows.as_slice().iter().any(|z| !z.is_finite()) {
        return Err(Error::Invalid("non-finite logits".into()));
    }
    Ok(())
}

/// Mean negative log-likelihood of `targets` under `softmax(z / T)`.
pub fn nll(rows: &Matrix, targets: &[usize], t: f64) -> Result<f64> {
    check_targets(rows, targets)?;
    Temperature::new(t)?;
    Ok(nll_unchecked(rows, targets, t))
}

fn nll_unchecked(rows: &Matrix, targets: &[usize], t: f64) -> f64 {
    let mut scaled = vec![0.0; rows.cols()];
    let mut total = 0.0;
    for (row, &y) in rows.iter_rows().zip(targets) {
        for (s, z) in scaled.iter_mut().zip(row) {
            *s = z / t;
        }
        total += log_sum_exp(&scaled) - scaled[y];
    }
    total / rows.rows() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub lower: f64,
    pub upper: f64,
    /// Absolute tolerance on T.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lower: 0.05,
            upper: 20.0,
            tolerance: 1e-4,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: Temperature,
    pub nll: f64,
    pub nll_at_init: f64,
    /// Final golden-section bracket.
    pub bracket: (f64, f64),
    pub iterations: usize,
    pub converged: bool,
}

pub fn fit_temperature(rows: &Matrix, targets: &[usize]) -> Result<TemperatureFit> {
    fit_temperature_with(rows, targets, FitOptions::default())
}

/// Minimizes mean NLL over `T ∈ [lower, upper]` by golden-section search.
///
/// NLL is convex in `1/T`, hence unimodal in `T`, so the bracket always
/// contains the minimizer. The returned T is the best of the bracket
/// midpoint, the bounds and the initial value 1.0.
pub fn fit_temperature_with(
    rows: &Matrix,
    targets: &[usize],
    opts: FitOptions,
) -> Result<TemperatureFit> {
    check_targets(rows, targets)?;
    if !(opts.lower > 0.0 && opts.lower < opts.upper && opts.tolerance > 0.0) {
        return Err(Error::Config(format!("invalid fit bounds {opts:?}")));
    }
    let f = |t: f64| nll_unchecked(rows, targets, t);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;

    let (mut a, mut b) = (opts.lower, opts.upper);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iterations = 0;
    while b - a > opts.tolerance && iterations < opts.max_iterations {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        iterations += 1;
    }
    let converged = b - a <= opts.tolerance;

    let nll_at_init = f(1.0);
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid));
    let mut candidates = vec![(opts.lower, f(opts.lower)), (opts.upper, f(opts.upper))];
    if (opts.lower..=opts.upper).contains(&1.0) {
        candidates.push((1.0, nll_at_init));
    }
    for (t, v) in candidates {
        if v < best.1 {
            best = (t, v);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Numeric(format!(
            "NLL is not finite at T = {}",
            best.0
        )));
    }
    Ok(TemperatureFit {
        temperature: Temperature::new(best.0)?,
        nll: best.1,
        nll_at_init,
        bracket: (a, b),
        iterations,
        converged,
    })
}
