//! Regenerates `fixtures/mini`: the synthetic set, a head trained on it, and
//! the golden evaluation produced with that head.
//!
//! cargo run -p semcal-core --example make_fixture -- fixtures/mini

use std::path::PathBuf;

use semcal::evaluation::{
    evaluate, head_training_set, ConfidenceMode, EvalConfig, Selection, TargetKind,
};
use semcal::head::{save_head, train_head, HeadConfig, Optimizer, TrainConfig};
use semcal::semantic::Family;
use semcal::synthetic::{mini_set, MiniSpec};
use semcal::tensor_io::load_manifest;

fn main() -> semcal::Result<()> {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixtures/mini".into())
        .into();
    let spec = MiniSpec::default();
    mini_set(&dir, &spec)?;
    let set = load_manifest(dir.join("manifest.jsonl"))?;

    let data = head_training_set(&set, Family::Clap, TargetKind::Similarity, 0.6)?;
    let head_cfg = HeadConfig {
        d_model: spec.d_model,
        dropout_rate: 0.1,
        seed: 7,
    };
    let train_cfg = TrainConfig {
        learning_rate: 3e-3,
        epochs: 150,
        batch_size: 16,
        lambda_conf: 0.15,
        optimizer: Optimizer::Adam,
        seed: 7,
    };
    let outcome = train_head(&data, &head_cfg, &train_cfg)?;
    println!(
        "head loss {:.5} -> {:.5}",
        outcome.loss_history[0],
        outcome.loss_history.last().unwrap()
    );
    let descriptor = save_head(dir.join("head"), &outcome.params, &head_cfg)?;

    let config = EvalConfig {
        selection: Selection::Rerank,
        confidence: ConfidenceMode::Head,
        ..EvalConfig::default()
    };
    let evaluation = evaluate(&set, &config, Some(&outcome.params))?;
    evaluation.write_outputs(dir.join("golden"))?;
    println!("{}", descriptor.display());
    println!("{}", evaluation.report.to_json()?);
    Ok(())
}
