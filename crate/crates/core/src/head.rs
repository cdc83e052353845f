//! Confidence head: a three-layer MLP mapping decoder hidden states to
//! per-token confidence,
//!
//! ```text
//! c_t = sigmoid(W3 · drop(relu(W2 · drop(relu(W1 · h_t + b1)) + b2)) + b3)
//! ```
//!
//! with widths `d_model → d_model/2 → d_model/4 → 1`. Training minimizes the
//! squared error between the masked mean token confidence of each sequence
//! and its semantic target, with the captioning model frozen.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::tensor_io::{read_tensor, write_tensor, DType, Tensor};

/// Seeded generator used for initialization, shuffling and dropout.
pub type HeadRng = ChaCha8Rng;

pub const DEFAULT_D_MODEL: usize = 768;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub d_model: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            d_model: DEFAULT_D_MODEL,
            dropout_rate: DEFAULT_DROPOUT,
            seed: 0,
        }
    }
}

impl HeadConfig {
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            ..Self::default()
        }
    }

    pub fn hidden1(&self) -> usize {
        self.d_model / 2
    }

    pub fn hidden2(&self) -> usize {
        self.d_model / 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || !self.d_model.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "d_model must be a positive multiple of 4, got {}",
                self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Weights and biases of the head. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

impl HeadParams {
    pub fn zeros(config: &HeadConfig) -> Self {
        let (d, h1, h2) = (config.d_model, config.hidden1(), config.hidden2());
        Self {
            w1: Matrix::zeros(h1, d),
            b1: vec![0.0; h1],
            w2: Matrix::zeros(h2, h1),
            b2: vec![0.0; h2],
            w3: vec![0.0; h2],
            b3: 0.0,
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization from `config.seed`.
    pub fn init(config: &HeadConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = HeadRng::seed_from_u64(config.seed);
        let mut p = Self::zeros(config);
        let fill = |vals: &mut [f64], fan_in: usize, rng: &mut HeadRng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            vals.iter_mut()
                .for_each(|v| *v = rng.random_range(-bound..bound));
        };
        fill(p.w1.as_mut_slice(), config.d_model, &mut rng);
        fill(&mut p.b1, config.d_model, &mut rng);
        fill(p.w2.as_mut_slice(), config.hidden1(), &mut rng);
        fill(&mut p.b2, config.hidden1(), &mut rng);
        fill(&mut p.w3, config.hidden2(), &mut rng);
        fill(std::slice::from_mut(&mut p.b3), config.hidden2(), &mut rng);
        Ok(p)
    }

    pub fn d_model(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden1(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden2(&self) -> usize {
        self.w2.rows()
    }

    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            &self.w3,
            std::slice::from_ref(&self.b3),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            &mut self.w3,
            std::slice::from_mut(&mut self.b3),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// Overwrites all parameters from a flat vector in [`Self::flatten`] order.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
    }

    fn is_consistent(&self) -> bool {
        let (d, h1, h2) = (self.d_model(), self.hidden1(), self.hidden2());
        self.b1.len() == h1
            && self.w2.cols() == h1
            && self.b2.len() == h2
            && self.w3.len() == h2
            && d == 2 * h1
            && d == 4 * h2
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Keeps sigmoid outputs strictly inside (0, 1) even when saturated.
fn open_unit(c: f64) -> f64 {
    c.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Inverted-dropout multipliers for one sequence: 0 or `1/(1-p)` per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub layer1: Matrix,
    pub layer2: Matrix,
}

impl DropoutMasks {
    pub fn sample(tokens: usize, params: &HeadParams, rate: f64, rng: &mut HeadRng) -> Self {
        let keep = 1.0 - rate;
        let mut draw = |rows: usize, cols: usize| {
            let mut m = Matrix::zeros(rows, cols);
            for v in m.as_mut_slice() {
                *v = if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                };
            }
            m
        };
        let layer1 = draw(tokens, params.hidden1());
        let layer2 = draw(tokens, params.hidden2());
        Self { layer1, layer2 }
    }
}

pub enum Mode<'a> {
    Eval,
    Train { rate: f64, rng: &'a mut HeadRng },
}

/// Activations of one token, kept for the backward pass.
struct TokenTrace {
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    c_raw: f64,
}

fn forward_token(
    x: &[f64],
    p: &HeadParams,
    drop1: Option<&[f64]>,
    drop2: Option<&[f64]>,
) -> TokenTrace {
    let mut a1 = vec![0.0; p.hidden1()];
    p.w1.matvec_into(x, &mut a1);
    a1.iter_mut().zip(&p.b1).for_each(|(a, b)| *a += b);
    let mut h1: Vec<f64> = a1.iter().map(|&a| a.max(0.0)).collect();
    if let Some(m) = drop1 {
        h1.iter_mut().zip(m).for_each(|(h, k)| *h *= k);
    }
    let mut a2 = vec![0.0; p.hidden2()];
    p.w2.matvec_into(&h1, &mut a2);
    a2.iter_mut().zip(&p.b2).for_each(|(a, b)| *a += b);
    let mut h2: Vec<f64> = a2.iter().map(|&a| a.max(0.0)).collect();
    if let Some(m) = drop2 {
        h2.iter_mut().zip(m).for_each(|(h, k)| *h *= k);
    }
    let c_raw = sigmoid(dot(&p.w3, &h2) + p.b3);
    TokenTrace {
        a1,
        h1,
        a2,
        h2,
        c_raw,
    }
}

fn check_hidden(hidden: &Matrix, params: &HeadParams) -> Result<()> {
    if !params.is_consistent() {
        return Err(Error::Shape("inconsistent head parameter shapes".into()));
    }
    if hidden.cols() != params.d_model() {
        return Err(Error::Shape(format!(
            "hidden states have width {}, head expects {}",
            hidden.cols(),
            params.d_model()
        )));
    }
    if hidden.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite hidden state".into()));
    }
    Ok(())
}

/// Per-token confidences for a `tokens × d_model` block of hidden states.
pub fn head_forward(hidden: &Matrix, params: &HeadParams, mode: Mode<'_>) -> Result<Vec<f64>> {
    check_hidden(hidden, params)?;
    let masks = match mode {
        Mode::Eval => None,
        Mode::Train { rate, rng } => {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
            }
            Some(DropoutMasks::sample(hidden.rows(), params, rate, rng))
        }
    };
    Ok((0..hidden.rows())
        .map(|t| {
            let trace = forward_token(
                hidden.row(t),
                params,
                masks.as_ref().map(|m| m.layer1.row(t)),
                masks.as_ref().map(|m| m.layer2.row(t)),
            );
            open_unit(trace.c_raw)
        })
        .collect())
}

/// Arithmetic mean over tokens whose mask is `true`.
pub fn mean_confidence(confidences: &[f64], mask: &[bool]) -> Result<f64> {
    if confidences.len() != mask.len() {
        return Err(Error::Invalid(format!(
            "{} confidences but {} mask entries",
            confidences.len(),
            mask.len()
        )));
    }
    let (sum, n) = confidences
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (c, _)| (s + c, n + 1));
    if n == 0 {
        return Err(Error::Invalid("mask selects no tokens".into()));
    }
    Ok(sum / n as f64)
}

/// Mean squared error between mean confidences and targets.
pub fn confidence_loss(mean_confs: &[f64], targets: &[f64]) -> Result<f64> {
    if mean_confs.len() != targets.len() {
        return Err(Error::Invalid(format!(
            "{} mean confidences but {} targets",
            mean_confs.len(),
            targets.len()
        )));
    }
    if mean_confs.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    if let Some(t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Invalid(format!("target {t} outside [0, 1]")));
    }
    Ok(mean_confs
        .iter()
        .zip(targets)
        .map(|(c, s)| (c - s) * (c - s))
        .sum::<f64>()
        / mean_confs.len() as f64)
}

/// Caption cross-entropy from exported token log-probabilities (masked mean).
pub fn caption_cross_entropy(token_logprobs: &[f64], mask: &[bool]) -> Result<f64> {
    let neg: Vec<f64> = token_logprobs.iter().map(|lp| -lp).collect();
    mean_confidence(&neg, mask)
}

/// `L = L_CE + λ · L_conf`, reported only; no gradient reaches the captioner.
pub fn combined_loss(cross_entropy: f64, conf_loss: f64, lambda: f64) -> f64 {
    cross_entropy + lambda * conf_loss
}

/// One training sequence: hidden states, content mask and semantic target.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadExample {
    pub hidden: Matrix,
    pub mask: Vec<bool>,
    pub target: f64,
}

impl HeadExample {
    pub fn new(hidden: Matrix, mask: Vec<bool>, target: f64) -> Result<Self> {
        if hidden.rows() != mask.len() {
            return Err(Error::Shape(format!(
                "{} hidden-state rows but {} mask entries",
                hidden.rows(),
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Invalid("mask selects no tokens".into()));
        }
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::Invalid(format!("target {target} outside [0, 1]")));
        }
        Ok(Self {
            hidden,
            mask,
            target,
        })
    }
}

/// Confidence loss over a batch and its exact gradient with respect to all
/// head parameters. With `masks`, dropout multipliers are fixed to the given
/// values (one entry per example); without, the forward pass is eval mode.
pub fn head_backward(
    batch: &[&HeadExample],
    params: &HeadParams,
    masks: Option<&[DropoutMasks]>,
) -> Result<(f64, HeadParams)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    if let Some(m) = masks {
        if m.len() != batch.len() {
            return Err(Error::Invalid(
                "one dropout mask set per example required".into(),
            ));
        }
    }
    let mut grad = HeadParams {
        w1: Matrix::zeros(params.hidden1(), params.d_model()),
        b1: vec![0.0; params.hidden1()],
        w2: Matrix::zeros(params.hidden2(), params.hidden1()),
        b2: vec![0.0; params.hidden2()],
        w3: vec![0.0; params.hidden2()],
        b3: 0.0,
    };
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut d_h1 = vec![0.0; params.hidden1()];

    for (i, ex) in batch.iter().enumerate() {
        check_hidden(&ex.hidden, params)?;
        let example_masks = masks.map(|m| &m[i]);
        let tokens: Vec<usize> = (0..ex.mask.len()).filter(|&t| ex.mask[t]).collect();
        if tokens.is_empty() {
            return Err(Error::Invalid("mask selects no tokens".into()));
        }
        let traces: Vec<TokenTrace> = tokens
            .iter()
            .map(|&t| {
                forward_token(
                    ex.hidden.row(t),
                    params,
                    example_masks.map(|m| m.layer1.row(t)),
                    example_masks.map(|m| m.layer2.row(t)),
                )
            })
            .collect();
        let n = tokens.len() as f64;
        let mean = traces.iter().map(|tr| tr.c_raw).sum::<f64>() / n;
        let err = mean - ex.target;
        loss += scale * err * err;
        // dL/dc_t for every masked token
        let d_c = scale * 2.0 * err / n;

        for (&t, tr) in tokens.iter().zip(&traces) {
            let d_a3 = d_c * tr.c_raw * (1.0 - tr.c_raw);
            grad.b3 += d_a3;
            for (g, h) in grad.w3.iter_mut().zip(&tr.h2) {
                *g += d_a3 * h;
            }
            let d_a2: Vec<f64> = (0..params.hidden2())
                .map(|j| {
                    let keep = example_masks.map_or(1.0, |m| m.layer2.get(t, j));
                    if tr.a2[j] > 0.0 {
                        d_a3 * params.w3[j] * keep
                    } else {
                        0.0
                    }
                })
                .collect();
            d_h1.iter_mut().for_each(|v| *v = 0.0);
            for (j, &g2) in d_a2.iter().enumerate() {
                if g2 == 0.0 {
                    continue;
                }
                grad.b2[j] += g2;
                let w2_row = params.w2.row(j);
                for (k, gw) in grad.w2.row_mut(j).iter_mut().enumerate() {
                    *gw += g2 * tr.h1[k];
                    d_h1[k] += g2 * w2_row[k];
                }
            }
            let x = ex.hidden.row(t);
            for k in 0..params.hidden1() {
                let keep = example_masks.map_or(1.0, |m| m.layer1.get(t, k));
                if tr.a1[k] <= 0.0 || keep == 0.0 || d_h1[k] == 0.0 {
                    continue;
                }
                let g1 = d_h1[k] * keep;
                grad.b1[k] += g1;
                for (gw, xv) in grad.w1.row_mut(k).iter_mut().zip(x) {
                    *gw += g1 * xv;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Loss over a whole dataset in eval mode.
pub fn dataset_loss(data: &[HeadExample], params: &HeadParams) -> Result<f64> {
    let mut confs = Vec::with_capacity(data.len());
    let mut targets = Vec::with_capacity(data.len());
    for ex in data {
        let c = head_forward(&ex.hidden, params, Mode::Eval)?;
        confs.push(mean_confidence(&c, &ex.mask)?);
        targets.push(ex.target);
    }
    confidence_loss(&confs, &targets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the confidence term in the reported combined loss.
    pub lambda_conf: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 5,
            batch_size: 16,
            lambda_conf: DEFAULT_LAMBDA,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Stateful optimizer over the head parameters.
pub struct Trainer {
    params: HeadParams,
    config: TrainConfig,
    dropout_rate: f64,
    rng: HeadRng,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Trainer {
    pub fn new(params: HeadParams, head: &HeadConfig, config: TrainConfig) -> Result<Self> {
        head.validate()?;
        config.validate()?;
        let n = params.num_params();
        Ok(Self {
            params,
            config,
            dropout_rate: head.dropout_rate,
            rng: HeadRng::seed_from_u64(config.seed),
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        })
    }

    pub fn params(&self) -> &HeadParams {
        &self.params
    }

    pub fn into_params(self) -> HeadParams {
        self.params
    }

    /// One optimizer update on `batch`; returns the pre-update batch loss.
    pub fn step(&mut self, batch: &[&HeadExample]) -> Result<f64> {
        let masks: Option<Vec<DropoutMasks>> = (self.dropout_rate > 0.0).then(|| {
            batch
                .iter()
                .map(|ex| {
                    DropoutMasks::sample(
                        ex.hidden.rows(),
                        &self.params,
                        self.dropout_rate,
                        &mut self.rng,
                    )
                })
                .collect()
        });
        let (loss, grad) = head_backward(batch, &self.params, masks.as_deref())?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "confidence loss became {loss} at step {}",
                self.step
            )));
        }
        self.step += 1;
        let lr = self.config.learning_rate;
        let grad = grad.flatten();
        let mut flat = self.params.flatten();
        match self.config.optimizer {
            Optimizer::Sgd => {
                for (p, g) in flat.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, (p, g)) in flat.iter_mut().zip(&grad).enumerate() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        if flat.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite parameter after step {}",
                self.step
            )));
        }
        self.params.assign_flat(&flat);
        Ok(loss)
    }

    /// One pass over `data` in seeded random minibatch order.
    pub fn epoch(&mut self, data: &[HeadExample]) -> Result<()> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&HeadExample> = chunk.iter().map(|&i| &data[i]).collect();
            self.step(&batch)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: HeadParams,
    /// Eval-mode dataset loss before training, then after each epoch.
    pub loss_history: Vec<f64>,
}

pub fn train_head(
    data: &[HeadExample],
    head: &HeadConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_head_from(data, HeadParams::init(head)?, head, config)
}

pub fn train_head_from(
    data: &[HeadExample],
    init: HeadParams,
    head: &HeadConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut trainer = Trainer::new(init, head, *config)?;
    let mut loss_history = vec![dataset_loss(data, trainer.params())?];
    for epoch in 0..config.epochs {
        trainer.epoch(data)?;
        let loss = dataset_loss(data, trainer.params())?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {loss} after epoch {epoch}"
            )));
        }
        loss_history.push(loss);
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        loss_history,
    })
}

pub const HEAD_FORMAT_VERSION: u32 = 1;
const TENSOR_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeadDescriptor {
    format_version: u32,
    config: HeadConfig,
    tensors: std::collections::BTreeMap<String, String>,
}

/// Writes `head.json` plus one tensor file per parameter into `dir`.
pub fn save_head(
    dir: impl AsRef<Path>,
    params: &HeadParams,
    config: &HeadConfig,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let shapes: [Vec<u64>; 6] = [
        vec![params.hidden1() as u64, params.d_model() as u64],
        vec![params.hidden1() as u64],
        vec![params.hidden2() as u64, params.hidden1() as u64],
        vec![params.hidden2() as u64],
        vec![1, params.hidden2() as u64],
        vec![1],
    ];
    let mut tensors = std::collections::BTreeMap::new();
    for ((name, values), dims) in TENSOR_NAMES.iter().zip(params.slices()).zip(shapes) {
        let file = format!("{name}.semc");
        write_tensor(
            &Tensor::from_f64(values, dims, DType::F64)?,
            dir.join(&file),
        )?;
        tensors.insert(name.to_string(), file);
    }
    let descriptor = HeadDescriptor {
        format_version: HEAD_FORMAT_VERSION,
        config: *config,
        tensors,
    };
    let path = dir.join("head.json");
    let mut text = serde_json::to_string_pretty(&descriptor)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a head written by [`save_head`], given the path of its `head.json`.
pub fn load_head(descriptor_path: impl AsRef<Path>) -> Result<(HeadParams, HeadConfig)> {
    let path = descriptor_path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let descriptor: HeadDescriptor = serde_json::from_str(&text)?;
    if descriptor.format_version != HEAD_FORMAT_VERSION {
        return Err(Error::Invalid(format!(
            "unsupported head format version {}",
            descriptor.format_version
        )));
    }
    let config = descriptor.config;
    config.validate()?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut params = HeadParams::zeros(&config);
    for (name, slot) in TENSOR_NAMES.iter().zip(params.slices_mut()) {
        let file = descriptor
            .tensors
            .get(*name)
            .ok_or_else(|| Error::Invalid(format!("head descriptor lacks tensor {name}")))?;
        let values = read_tensor(base.join(file))?.to_f64();
        if values.len() != slot.len() {
            return Err(Error::Shape(format!(
                "tensor {name} has {} values, expected {}",
                values.len(),
                slot.len()
            )));
        }
        slot.copy_from_slice(&values);
    }
    Ok((params, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_params() -> HeadParams {
        // d_model = 4 → 2 → 1 → 1
        HeadParams {
            w1: Matrix::from_rows(&[vec![0.5, -1.0, 0.25, 0.0], vec![-0.5, 0.5, 1.0, 2.0]])
                .unwrap(),
            b1: vec![0.1, -0.2],
            w2: Matrix::from_rows(&[vec![1.5, -0.5]]).unwrap(),
            b2: vec![0.05],
            w3: vec![2.0],
            b3: -0.3,
        }
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = HeadParams::zeros(&HeadConfig::new(8));
        let h = Matrix::from_vec(3, 8, (0..24).map(|i| i as f64 * 0.3 - 2.0).collect()).unwrap();
        let c = head_forward(&h, &p, Mode::Eval).unwrap();
        assert_eq!(c, vec![0.5; 3]);
    }

    #[test]
    fn hand_evaluated_toy_network() {
        let x = [1.0, 2.0, -1.0, 0.5];
        // a1 = [0.5 - 2 - 0.25 + 0 + 0.1, -0.5 + 1 - 1 + 1 - 0.2] = [-1.65, 0.3]
        // h1 = [0, 0.3]; a2 = 1.5*0 - 0.5*0.3 + 0.05 = -0.1; h2 = 0
        // a3 = 2*0 - 0.3 = -0.3
        let expected = 1.0 / (1.0 + 0.3f64.exp());
        let h = Matrix::from_rows(&[x.to_vec()]).unwrap();
        let c = head_forward(&h, &toy_params(), Mode::Eval).unwrap();
        assert!((c[0] - expected).abs() < 1e-15);

        let x = [0.0, 0.0, 1.0, 1.0];
        // a1 = [0.25 + 0.1, 1 + 2 - 0.2] = [0.35, 2.8]
        // with b2 = 1: a2 = 0.525 - 1.4 + 1.0 = 0.125; a3 = 0.25 - 0.3 = -0.05
        let mut p = toy_params();
        p.b2 = vec![1.0];
        let expected = 1.0 / (1.0 + 0.05f64.exp());
        let h = Matrix::from_rows(&[x.to_vec()]).unwrap();
        let c = head_forward(&h, &p, Mode::Eval).unwrap();
        assert!((c[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn eval_mode_is_deterministic_and_train_mode_uses_rng() {
        let cfg = HeadConfig {
            d_model: 8,
            dropout_rate: 0.5,
            seed: 3,
        };
        let p = HeadParams::init(&cfg).unwrap();
        let h = Matrix::from_vec(4, 8, (0..32).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = head_forward(&h, &p, Mode::Eval).unwrap();
        let b = head_forward(&h, &p, Mode::Eval).unwrap();
        assert_eq!(a, b);
        let mut r1 = HeadRng::seed_from_u64(1);
        let mut r2 = HeadRng::seed_from_u64(1);
        let t1 = head_forward(
            &h,
            &p,
            Mode::Train {
                rate: 0.5,
                rng: &mut r1,
            },
        )
        .unwrap();
        let t2 = head_forward(
            &h,
            &p,
            Mode::Train {
                rate: 0.5,
                rng: &mut r2,
            },
        )
        .unwrap();
        assert_eq!(t1, t2);
        assert!(t1.iter().all(|&c| c > 0.0 && c < 1.0));
    }

    #[test]
    fn saturated_outputs_stay_open() {
        let mut p = HeadParams::zeros(&HeadConfig::new(4));
        p.b3 = 100.0;
        let h = Matrix::zeros(1, 4);
        let c = head_forward(&h, &p, Mode::Eval).unwrap()[0];
        assert!(c < 1.0);
        p.b3 = -1000.0;
        let c = head_forward(&h, &p, Mode::Eval).unwrap()[0];
        assert!(c > 0.0);
    }

    #[test]
    fn forward_errors() {
        let p = HeadParams::zeros(&HeadConfig::new(4));
        assert!(head_forward(&Matrix::zeros(2, 8), &p, Mode::Eval).is_err());
        let h = Matrix::from_vec(1, 4, vec![0.0, f64::NAN, 0.0, 0.0]).unwrap();
        assert!(head_forward(&h, &p, Mode::Eval).is_err());
    }

    #[test]
    fn mean_confidence_examples() {
        assert_eq!(mean_confidence(&[0.7], &[true]).unwrap(), 0.7);
        assert_eq!(mean_confidence(&[0.2, 0.8], &[true, true]).unwrap(), 0.5);
        let m = mean_confidence(&[0.2, 0.8, 0.9], &[false, true, true]).unwrap();
        assert!((m - 0.85).abs() < 1e-15);
        assert!(mean_confidence(&[0.2], &[false]).is_err());
    }

    #[test]
    fn confidence_loss_examples() {
        assert_eq!(confidence_loss(&[0.3, 0.9], &[0.3, 0.9]).unwrap(), 0.0);
        assert_eq!(confidence_loss(&[1.0], &[0.0]).unwrap(), 1.0);
        let l = confidence_loss(&[0.6, 0.8], &[0.5, 0.5]).unwrap();
        assert!((l - 0.05).abs() < 1e-15);
        assert!(confidence_loss(&[0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn zero_error_gives_zero_gradient() {
        let cfg = HeadConfig {
            d_model: 8,
            dropout_rate: 0.0,
            seed: 11,
        };
        let p = HeadParams::init(&cfg).unwrap();
        let h = Matrix::from_vec(3, 8, (0..24).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let c = head_forward(&h, &p, Mode::Eval).unwrap();
        let target = mean_confidence(&c, &[true; 3]).unwrap();
        let ex = HeadExample::new(h, vec![true; 3], target).unwrap();
        let (loss, grad) = head_backward(&[&ex], &p, None).unwrap();
        assert!(loss < 1e-30);
        assert!(grad.flatten().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn dead_relu_unit_has_zero_incoming_gradient() {
        let cfg = HeadConfig {
            d_model: 4,
            dropout_rate: 0.0,
            seed: 5,
        };
        let mut p = HeadParams::init(&cfg).unwrap();
        p.b1[1] = -1e6;
        let h = Matrix::from_vec(2, 4, vec![0.3, -0.2, 0.9, 0.1, 1.0, 0.5, -0.4, 0.2]).unwrap();
        let ex = HeadExample::new(h, vec![true, true], 0.9).unwrap();
        let (_, grad) = head_backward(&[&ex], &p, None).unwrap();
        assert!(grad.w1.row(1).iter().all(|&g| g == 0.0));
        assert_eq!(grad.b1[1], 0.0);
    }

    #[test]
    fn inverted_dropout_is_unbiased_on_a_linear_layer() {
        // Exact expectation over all 2^k masks of a k-unit linear probe.
        let x = [0.7, -1.3, 2.1];
        let p = 0.25;
        let keep = 1.0 - p;
        let k = x.len();
        let mut expectation = [0.0; 3];
        for bits in 0..(1u32 << k) {
            let prob: f64 = (0..k)
                .map(|j| if bits & (1 << j) != 0 { keep } else { p })
                .product();
            for (j, e) in expectation.iter_mut().enumerate() {
                let kept = bits & (1 << j) != 0;
                *e += prob * if kept { x[j] / keep } else { 0.0 };
            }
        }
        for (e, xv) in expectation.iter().zip(x) {
            assert!((e - xv).abs() < 1e-12);
        }

        // Monte Carlo with the sampler the trainer uses.
        let cfg = HeadConfig::new(8);
        let params = HeadParams::zeros(&cfg);
        let mut rng = HeadRng::seed_from_u64(9);
        let n = 40_000;
        let mut mean = vec![0.0; params.hidden1()];
        for _ in 0..n {
            let m = DropoutMasks::sample(1, &params, p, &mut rng);
            for (acc, v) in mean.iter_mut().zip(m.layer1.row(0)) {
                *acc += v / n as f64;
            }
        }
        assert!(mean.iter().all(|m| (m - 1.0).abs() < 0.02), "{mean:?}");
    }

    #[test]
    fn config_validation() {
        assert!(HeadConfig::new(6).validate().is_err());
        assert!(HeadConfig {
            dropout_rate: 1.0,
            ..HeadConfig::new(8)
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            epochs: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(train_head(&[], &HeadConfig::new(8), &TrainConfig::default()).is_err());
    }

    #[test]
    fn combined_loss_and_cross_entropy() {
        let ce = caption_cross_entropy(&[-0.5, -1.5, -9.0], &[true, true, false]).unwrap();
        assert_eq!(ce, 1.0);
        assert!((combined_loss(ce, 0.2, DEFAULT_LAMBDA) - 1.03).abs() < 1e-15);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = HeadConfig {
            d_model: 8,
            dropout_rate: 0.1,
            seed: 42,
        };
        let p = HeadParams::init(&cfg).unwrap();
        let path = save_head(dir.path(), &p, &cfg).unwrap();
        let (back, back_cfg) = load_head(&path).unwrap();
        assert_eq!(back, p);
        assert_eq!(back_cfg, cfg);
    }
}
