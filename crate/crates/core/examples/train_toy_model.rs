//! Trains a small transformer for a few epochs and evaluates it on every split.
//!
//! cargo run --release --example train_toy_model

use sglab::analysis::{evaluate, EvalOptions};
use sglab::model::ModelConfig;
use sglab::scenegen::{build_dataset, DatasetConfig, Subset};
use sglab::trainer::{train, TrainConfig};

fn main() -> sglab::Result<()> {
    let data = DatasetConfig { train_size: 256, test_size: 64, image_side: 32, ..DatasetConfig::desk() };
    let dataset = build_dataset(&data)?;
    let model = ModelConfig { hidden_dim: 32, n_layers: 2, n_heads: 4, ..ModelConfig::default() }.fit_to(&data);
    let cfg = TrainConfig { epochs: 8, batch_size: 32, learning_rate: 1e-3, eval_every: 4, eval_samples: 32, ..TrainConfig::desk() };

    let outcome = train(&dataset, &model, &cfg, None)?;
    for e in &outcome.record.epoch_losses {
        println!("epoch {:2}  loss {:.4}", e.epoch, e.loss);
    }
    let trained = outcome.checkpoint.model()?;
    let report = evaluate(&trained, &dataset, &Subset::ALL, &EvalOptions::default())?;
    print!("{}", report.to_csv());
    Ok(())
}
