//! A miniature diversity sweep: trains one small model per palette size and
//! seed, analyzes every run and writes charts and tables.
//!
//! cargo run --release --example sweep_diversity -- [out_dir]

use std::path::PathBuf;

use sglab::experiment::{analyze_study, AnalysisConfig, ExperimentConfig};
use sglab::report::write_report;
use sglab::trainer::{run_sweep, SweepAxis, SweepSpec};

fn main() -> sglab::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-sweep".into()));
    let mut base = ExperimentConfig::desk();
    base.dataset.train_size = 256;
    base.dataset.test_size = 64;
    base.dataset.image_side = 32;
    base.model.hidden_dim = 32;
    base.model.n_layers = 1;
    base.train.epochs = 4;
    base.train.batch_size = 32;
    base.train.learning_rate = 1e-3;
    base.train.eval_every = 4;

    let spec = SweepSpec { axis: SweepAxis::NColors, values: vec![8.0, 27.0, 64.0], seeds: vec![0, 1] };
    for cell in run_sweep(&spec, &base, &out)? {
        println!("{}  {}", cell.dir.display(), cell.error.as_deref().unwrap_or("complete"));
    }
    let analysis = AnalysisConfig { dci: false, ..AnalysisConfig::default() };
    let summary = analyze_study(&out, &analysis, 0)?;
    print!("{}", summary.table.to_csv());
    let report = write_report(&summary, &out.join("report"))?;
    for f in report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
