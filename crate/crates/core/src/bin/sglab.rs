use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sglab::analysis::nmi;
use sglab::experiment::{self, ExperimentConfig, StudySummary, CONFIG_FILE, STUDY_FILE};
use sglab::report;
use sglab::scenegen::{self, dataset_attribute_table, Subset};
use sglab::trainer::{self, SweepAxis, SweepSpec};
use sglab::{Error, Result};

/// Systematic generalization experiments on synthetic scenes.
#[derive(Parser)]
#[command(name = "sglab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write it to disk.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory for the dataset.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per (value, seed) along a sweep axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// n_colors, p_burst, jitter, train_fraction, hidden_dim or common_ratio.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Number of seeds, starting at 0.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Evaluate and measure run directories, or every run under them.
    Analyze {
        /// Run directories or sweep roots.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Experiment config whose analysis section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the study summary. Defaults to the first path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render charts and markdown tables from a study summary.
    Report {
        /// A study summary file or a directory holding one.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config JSON; missing fields take desk defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the full-scale preset instead of the desk preset.
    #[arg(long)]
    full_scale: bool,
    /// Channel divisions; the palette has n³ colors.
    #[arg(long)]
    n: Option<usize>,
    /// Fraction of colors shared by both splits.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    p_burst: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Model and training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    text_only: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if self.full_scale => ExperimentConfig::full_scale(),
            None => ExperimentConfig::desk(),
        };
        let d = &mut cfg.dataset;
        set(&mut d.color_divisions, self.n);
        set(&mut d.common_ratio, self.ratio);
        set(&mut d.p_burst, self.p_burst);
        set(&mut d.jitter, self.jitter);
        set(&mut d.train_size, self.train_size);
        set(&mut d.test_size, self.test_size);
        set(&mut d.train_fraction, self.fraction);
        set(&mut d.seed, self.data_seed);
        let m = &mut cfg.model;
        set(&mut m.hidden_dim, self.hidden_dim);
        set(&mut m.n_layers, self.layers);
        set(&mut m.n_heads, self.heads);
        set(&mut m.seed, self.seed);
        let t = &mut cfg.train;
        set(&mut t.epochs, self.epochs);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.learning_rate, self.lr);
        set(&mut t.seed, self.seed);
        set(&mut t.eval_every, self.eval_every);
        t.text_only |= self.text_only;
        cfg.materialize()
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Archives `cfg` in `dir`, refusing to replace a different configuration.
fn archive_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    if path.exists() {
        let existing = ExperimentConfig::load(&path)?;
        if existing != *cfg {
            return Err(Error::Config(format!("{} holds a different configuration", path.display())));
        }
        return Ok(());
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cfg.save(&path)
}

fn generate(common: &Common, out: &Path) -> Result<()> {
    let cfg = common.resolve()?;
    let dataset = scenegen::build_dataset(&cfg.dataset)?;
    let manifest = scenegen::write_dataset(&dataset, out)?;
    let sizes = dataset.manifest.sizes;
    let table = dataset_attribute_table(&dataset, Subset::Train).color_shape();
    let normalization = cfg.analysis.normalization;
    println!("manifest: {}", manifest.display());
    println!("colors: {}", cfg.dataset.n_colors());
    println!("train: {}  test_id: {}  test_ood: {}", sizes.train, sizes.test_id, sizes.test_ood);
    println!("train nmi(color, shape): {:.4} ({normalization:?})", nmi::nmi(&table, normalization)?);
    Ok(())
}

fn train(common: &Common, out: &Path) -> Result<()> {
    let cfg = common.resolve()?;
    archive_config(&cfg, out)?;
    let dataset = scenegen::build_dataset(&cfg.dataset)?;
    let outcome = trainer::train(&dataset, &cfg.model, &cfg.train, Some(out))?;
    let record = &outcome.record;
    println!("run: {}  params: {}  epochs: {}", out.display(), record.param_count, record.epoch_losses.len());
    if let Some(r) = record.final_eval() {
        print!("{}", r.to_csv());
    }
    Ok(())
}

fn sweep(common: &Common, out: &Path, axis: &str, values: &[f64], seeds: u64) -> Result<()> {
    let axis = SweepAxis::parse(axis)?;
    if seeds == 0 {
        return Err(Error::param("seeds", "must be at least 1"));
    }
    let base = common.resolve()?;
    let spec = SweepSpec { axis, values: values.to_vec(), seeds: (0..seeds).collect() };
    let cells = trainer::run_sweep(&spec, &base, out)?;
    experiment::save_sweep(out, &cells)?;
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    for c in &cells {
        let state = c.error.as_deref().unwrap_or("complete");
        println!("{}  {state}", c.dir.display());
    }
    if failed > 0 {
        return Err(Error::Generation(format!("{failed} of {} sweep cells failed", cells.len())));
    }
    Ok(())
}

fn analyze(paths: &[PathBuf], config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let analysis = match config {
        Some(p) => ExperimentConfig::load(p)?.analysis,
        None => Default::default(),
    };
    let mut dirs = Vec::new();
    for p in paths {
        dirs.extend(experiment::find_runs(p)?);
    }
    dirs.sort();
    dirs.dedup();
    if dirs.is_empty() {
        return Err(Error::Config("no run directories found".into()));
    }
    let summary = experiment::analyze_runs(&dirs, &analysis, experiment::default_workers())?;
    for r in &summary.runs {
        let ood = r.ood_shape_accuracy().map_or("n/a".into(), |a| format!("{a:.4}"));
        let ps = r.pscore.as_ref().map_or("n/a".into(), |p| format!("{:.4}", p.mean));
        let nm = r.nmi.map_or("n/a".into(), |v| format!("{v:.4}"));
        println!("{}  ood_shape={ood}  nmi={nm}  pscore={ps}", r.run_dir.display());
        for w in &r.warnings {
            eprintln!("warning: {}: {w}", r.run_dir.display());
        }
    }
    for (dir, reason) in &summary.failures {
        eprintln!("{}: {reason}", dir.display());
    }
    let c = &summary.correlations;
    if let Some(c) = &c.pscore_vs_ood_shape {
        println!("pscore vs ood shape: r={:.3} p={:.3e} n={}", c.r, c.p_value, c.n);
    }
    if let Some(c) = &c.nmi_vs_ood_shape {
        println!("nmi vs ood shape: r={:.3} p={:.3e} n={}", c.r, c.p_value, c.n);
    }
    let dest = match out {
        Some(p) => p.to_path_buf(),
        None if paths[0].is_dir() => paths[0].join(STUDY_FILE),
        None => PathBuf::from(STUDY_FILE),
    };
    summary.save(&dest)?;
    println!("summary: {}", dest.display());
    if summary.runs.is_empty() {
        // the first failure names the cause, e.g. a missing checkpoint
        let (dir, reason) = &summary.failures[0];
        return Err(Error::Integrity(format!("no run could be analyzed; {}: {reason}", dir.display())));
    }
    Ok(())
}

fn report_cmd(input: &Path, out: &Path) -> Result<()> {
    let path = if input.is_dir() { input.join(STUDY_FILE) } else { input.to_path_buf() };
    let summary = StudySummary::load(&path)?;
    let result = report::write_report(&summary, out)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    for f in &result.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => generate(&common, &out),
        Command::Train { common, out } => train(&common, &out),
        Command::Sweep { common, out, axis, values, seeds } => sweep(&common, &out, &axis, &values, seeds),
        Command::Analyze { paths, config, out } => analyze(&paths, config.as_deref(), out.as_deref()),
        Command::Report { input, out } => report_cmd(&input, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
