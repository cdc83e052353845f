use std::path::Path;

use serde::Serialize;

use semcal::calibration::{fit_temperature_with, FitOptions, Temperature, TemperatureFit};
use semcal::decoding::{
    beam_search, greedy_decode, BeamConfig, BeamHypothesis, GreedyConfidence, Pruning, ToyModel,
};
use semcal::evaluation::{
    comparison_csv, comparison_markdown, evaluate as run_evaluation, head_training_set, rerank_set,
    write_rankings, CalibrationReport, ConfidenceMode, EvalConfig, Selection, TargetKind,
};
use semcal::head::{
    caption_cross_entropy, combined_loss, load_head, save_head, train_head as fit_head, HeadConfig,
    HeadParams, Optimizer, TrainConfig,
};
use semcal::semantic::Family;
use semcal::tensor_io::{load_manifest, read_tensor, TensorData};
use semcal::{Error, Result};

use crate::{
    CalibrateArgs, ConfidenceArg, ConfidenceArgs, DecodeSimArgs, EvaluateArgs, FamilyArg,
    OptimizerArg, PruningArg, ReportArgs, RerankArgs, SelectionArg, TargetArg, TrainHeadArgs,
};

fn family(f: FamilyArg) -> Family {
    match f {
        FamilyArg::Clap => Family::Clap,
        FamilyArg::Sbert => Family::Sbert,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn confidence_source(args: &ConfidenceArgs) -> Result<(ConfidenceMode, Option<HeadParams>)> {
    let mode = match args.confidence {
        ConfidenceArg::Fixed => ConfidenceMode::Fixed,
        ConfidenceArg::Manifest => ConfidenceMode::Manifest,
        ConfidenceArg::Head => ConfidenceMode::Head,
    };
    let head = match (&args.head, mode) {
        (Some(path), _) => Some(load_head(path)?.0),
        (None, ConfidenceMode::Head) => {
            return Err(Error::Config("--confidence head requires --head".into()))
        }
        (None, _) => None,
    };
    Ok((mode, head))
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let (confidence, head) = confidence_source(&args.confidence)?;
    let config = EvalConfig {
        tau: args.tau,
        bins: args.bins,
        alpha: args.scoring.alpha,
        beta: args.scoring.beta,
        selection: match args.selection {
            SelectionArg::First => Selection::First,
            SelectionArg::Rerank => Selection::Rerank,
        },
        confidence,
        families: args.families.iter().map(|&f| family(f)).collect(),
    };
    config.validate()?;
    let set = load_manifest(&args.manifest)?;
    let evaluation = run_evaluation(&set, &config, head.as_ref())?;
    evaluation.write_outputs(&args.out)?;
    let table = comparison_markdown(&[("Value", &evaluation.report)]);
    write_text(&args.out.join("table.md"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn calibrate(args: CalibrateArgs) -> Result<()> {
    let logits = read_tensor(&args.logits)?.to_matrix()?;
    let targets: Vec<usize> = match read_tensor(&args.targets)?.into_data() {
        TensorData::U32(v) => v.into_iter().map(|t| t as usize).collect(),
        _ => return Err(Error::Invalid("targets tensor must have dtype u32".into())),
    };
    let opts = FitOptions {
        lower: args.lower,
        upper: args.upper,
        tolerance: args.tolerance,
        ..FitOptions::default()
    };
    let fit = fit_temperature_with(&logits, &targets, opts)?;
    write_text(&args.out, &to_json(&fit)?)?;
    println!("T = {}", fit.temperature.get());
    Ok(())
}

#[derive(Serialize)]
struct TrainingLog {
    examples: usize,
    head: HeadConfig,
    train: TrainConfig,
    /// Eval-mode confidence loss before training, then after each epoch.
    confidence_loss: Vec<f64>,
    /// Mean caption cross-entropy of the training candidates.
    caption_cross_entropy: f64,
    /// Caption loss plus lambda times the final confidence loss.
    combined_loss: f64,
}

pub fn train_head(args: TrainHeadArgs) -> Result<()> {
    let set = load_manifest(&args.manifest)?;
    let kind = match args.target {
        TargetArg::Similarity => TargetKind::Similarity,
        TargetArg::Binary => TargetKind::Binary,
    };
    let data = head_training_set(&set, family(args.family), kind, args.tau)?;
    let head_cfg = HeadConfig {
        d_model: data[0].hidden.cols(),
        dropout_rate: args.dropout,
        seed: args.seed,
    };
    let train_cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lambda_conf: args.lambda,
        optimizer: match args.optimizer {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
        seed: args.seed,
    };
    let outcome = fit_head(&data, &head_cfg, &train_cfg)?;

    let mut ce = Vec::new();
    for record in set.records() {
        for cand in &record.candidates {
            if cand.hidden_state_ref.is_some() && cand.content_length() > 0 {
                ce.push(caption_cross_entropy(
                    &cand.token_logprobs,
                    &cand.token_mask,
                )?);
            }
        }
    }
    let caption_ce = ce.iter().sum::<f64>() / ce.len() as f64;
    let final_conf = *outcome.loss_history.last().unwrap_or(&f64::NAN);
    let log = TrainingLog {
        examples: data.len(),
        head: head_cfg,
        train: train_cfg,
        caption_cross_entropy: caption_ce,
        combined_loss: combined_loss(caption_ce, final_conf, args.lambda),
        confidence_loss: outcome.loss_history,
    };
    let descriptor = save_head(&args.out, &outcome.params, &head_cfg)?;
    write_text(&args.out.join("training.json"), &to_json(&log)?)?;
    println!(
        "trained on {} candidates, confidence loss {:.6} -> {:.6}, wrote {}",
        log.examples,
        log.confidence_loss[0],
        final_conf,
        descriptor.display()
    );
    Ok(())
}

pub fn rerank(args: RerankArgs) -> Result<()> {
    let (mode, head) = confidence_source(&args.confidence)?;
    let set = load_manifest(&args.manifest)?;
    let rankings = rerank_set(
        &set,
        args.scoring.alpha,
        args.scoring.beta,
        mode,
        head.as_ref(),
    )?;
    write_rankings(&args.out, &set, &rankings)?;
    println!("reranked {} examples", rankings.len());
    Ok(())
}

#[derive(Serialize)]
struct DecodedHypothesis {
    tokens: Vec<u32>,
    logp: f64,
    length: usize,
    mean_confidence: f64,
    score: f64,
    finished: bool,
}

impl DecodedHypothesis {
    fn new(h: &BeamHypothesis, score: f64) -> Self {
        Self {
            tokens: h.tokens.clone(),
            logp: h.logp,
            length: h.length(),
            mean_confidence: h.mean_confidence(),
            score,
            finished: h.finished,
        }
    }
}

#[derive(Serialize)]
struct DecodeSimOutput {
    config: BeamConfig,
    reached_eos: bool,
    beam: Vec<DecodedHypothesis>,
    greedy: DecodedHypothesis,
}

pub fn decode_sim(args: DecodeSimArgs) -> Result<()> {
    let model = match (&args.model, args.random_vocab) {
        (Some(path), _) => ToyModel::from_json_file(path)?,
        (None, Some(v)) => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
            ToyModel::random(v, 0.2, &mut rng)?
        }
        (None, None) => return Err(Error::Config("need --model or --random-vocab".into())),
    };
    let temperature = match (args.temperature, &args.temperature_file) {
        (Some(t), _) => Temperature::new(t)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<TemperatureFit>(&text)?.temperature
        }
        (None, None) => Temperature::default(),
    };
    let config = BeamConfig {
        beam_size: args.beam,
        alpha: args.scoring.alpha,
        beta: args.scoring.beta,
        max_length: args.max_length,
        temperature,
        pruning: match args.pruning {
            PruningArg::Likelihood => Pruning::Likelihood,
            PruningArg::Stepwise => Pruning::Stepwise,
        },
    };
    let beam = beam_search(&model, None, &config)?;
    let greedy = greedy_decode(&model, None, &config, GreedyConfidence::Scored)?;
    let greedy_score = greedy.score(config.alpha, config.beta);
    let output = DecodeSimOutput {
        config,
        reached_eos: beam.reached_eos,
        beam: beam
            .hypotheses
            .iter()
            .zip(&beam.scores)
            .map(|(h, &s)| DecodedHypothesis::new(h, s))
            .collect(),
        greedy: DecodedHypothesis::new(&greedy, greedy_score),
    };
    let json = to_json(&output)?;
    match &args.out {
        Some(path) => write_text(path, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

pub fn report(args: ReportArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            CalibrationReport::from_json(&text)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = if !args.labels.is_empty() {
        if args.labels.len() != reports.len() {
            return Err(Error::Config(format!(
                "{} labels for {} reports",
                args.labels.len(),
                reports.len()
            )));
        }
        args.labels.clone()
    } else if reports.len() == 2 {
        vec!["Greedy".into(), "Beam".into()]
    } else {
        args.reports
            .iter()
            .map(|p| p.display().to_string())
            .collect()
    };
    let columns: Vec<(&str, &CalibrationReport)> =
        labels.iter().map(String::as_str).zip(&reports).collect();
    let table = comparison_markdown(&columns);
    match &args.out {
        Some(dir) => {
            write_text(&dir.join("table.md"), &table)?;
            let csv = comparison_csv(&columns)?;
            let path = dir.join("table.csv");
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }
        None => print!("{table}"),
    }
    Ok(())
}
