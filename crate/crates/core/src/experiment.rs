//! Experiment configuration, per-run analysis and cross-run aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::dci::{dci, Dci, ProbeConfig};
use crate::analysis::embeddings::EmbeddingSet;
use crate::analysis::eval::{evaluate, extract_embeddings, EvalOptions, EvalReport, ExtractOptions};
use crate::analysis::nmi::{nmi, Normalization};
use crate::analysis::pscore::{mean_stderr, pscore, PScore, PScoreOptions};
use crate::analysis::{correlate, Correlation};
use crate::error::{Error, Result};
use crate::latent::Attribute;
use crate::model::{Checkpoint, ModelConfig};
use crate::parallel;
use crate::scenegen::{build_dataset, dataset_attribute_table, DatasetConfig, Subset};
use crate::trainer::{self, RunRecord, SweepAxis, SweepCell, TrainConfig};

pub const CONFIG_FILE: &str = "experiment.json";
pub const ANALYSIS_FILE: &str = "analysis.json";
pub const EVAL_CSV_FILE: &str = "eval.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const SWEEP_FILE: &str = "sweep.json";
pub const STUDY_FILE: &str = "study.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub nmi: bool,
    pub pscore: bool,
    pub dci: bool,
    pub normalization: Normalization,
    pub pscore_options: PScoreOptions,
    pub probe: ProbeConfig,
    pub extract: ExtractOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            nmi: true,
            pscore: true,
            dci: true,
            normalization: Normalization::Arithmetic,
            pscore_options: PScoreOptions::default(),
            probe: ProbeConfig::default(),
            extract: ExtractOptions::default(),
        }
    }
}

/// One experiment: dataset, model, training and analysis settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        let dataset = DatasetConfig::desk();
        Self {
            model: ModelConfig::default().fit_to(&dataset),
            dataset,
            train: TrainConfig::desk(),
            analysis: AnalysisConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }

    pub fn full_scale() -> Self {
        let dataset = DatasetConfig::full_scale();
        let model = ModelConfig { hidden_dim: 256, n_layers: 4, ..ModelConfig::default() }.fit_to(&dataset);
        Self { dataset, model, train: TrainConfig::full_scale(), ..Self::desk() }
    }

    /// Fits model sizes to the dataset and validates every section.
    pub fn materialize(mut self) -> Result<Self> {
        self.model = self.model.fit_to(&self.dataset);
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json("experiment config", e))?;
        trainer::write_atomic(path, json.as_bytes())
    }
}

/// Every measurement of one trained run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub run_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub hidden_dim: usize,
    pub checkpoint_hash: String,
    pub manifest_hash: String,
    pub eval: EvalReport,
    pub nmi: Option<f64>,
    pub normalization: Normalization,
    pub pscore: Option<PScore>,
    pub dci_shape: Option<Dci>,
    pub dci_color: Option<Dci>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunAnalysis {
    pub fn ood_shape_accuracy(&self) -> Option<f64> {
        self.eval.accuracy(Subset::TestOod, Attribute::Shape)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    trainer::write_atomic(path, json.as_bytes())
}

/// Geometry that cannot be measured on a run is reported, not fatal.
fn keep<T>(warnings: &mut Vec<String>, what: &str, r: Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(format!("{what}: {e}"));
            None
        }
    }
}

/// Evaluates a completed run and measures NMI, p-score and DCI. Results are
/// written beside the run and reused while the checkpoint is unchanged.
pub fn analyze_run(dir: &Path, cfg: &AnalysisConfig, workers: usize) -> Result<RunAnalysis> {
    let record = RunRecord::load(dir)?;
    if !record.is_complete() {
        return Err(Error::Integrity(format!("{} has not finished training", dir.display())));
    }
    let ck_path = dir.join(trainer::CHECKPOINT_FILE);
    if !ck_path.exists() {
        return Err(Error::Integrity(format!("missing checkpoint {}", ck_path.display())));
    }
    let checkpoint = Checkpoint::load(&ck_path)?;
    let checkpoint_hash = checkpoint.hash()?;
    let cached = dir.join(ANALYSIS_FILE);
    if cached.exists() {
        let prior: RunAnalysis = read_json(&cached)?;
        if prior.checkpoint_hash == checkpoint_hash {
            return Ok(prior);
        }
    }

    let dataset = build_dataset(&record.dataset)?;
    let manifest_hash = dataset.manifest.hash();
    if manifest_hash != record.manifest_hash || checkpoint.meta.manifest_hash != manifest_hash {
        return Err(Error::Integrity(format!("{}: regenerated dataset does not match the recorded manifest", dir.display())));
    }
    let model = checkpoint.model()?;
    let text_only = record.train.text_only;
    let mut eval = match record.final_eval() {
        Some(r) if record.train.eval_samples == 0 => r.clone(),
        _ => evaluate(&model, &dataset, &Subset::ALL, &EvalOptions { max_samples: 0, text_only, workers })?,
    };
    eval.checkpoint_hash = Some(checkpoint_hash.clone());

    let nmi_value = if cfg.nmi {
        Some(nmi(&dataset_attribute_table(&dataset, Subset::Train).color_shape(), cfg.normalization)?)
    } else {
        None
    };

    let (mut pscore_value, mut dci_shape, mut dci_color) = (None, None, None);
    let mut warnings = Vec::new();
    if cfg.pscore || cfg.dci {
        let opts = ExtractOptions { workers, ..cfg.extract.clone() };
        let mut set = extract_embeddings(&model, &dataset, &opts)?;
        set.checkpoint_hash = Some(checkpoint_hash.clone());
        set.save(&dir.join(EMBEDDINGS_FILE))?;
        let shape_set = set.for_task(Attribute::Shape);
        if cfg.pscore {
            pscore_value = keep(&mut warnings, "p-score", pscore(&shape_set, Attribute::Shape, Attribute::Color, &cfg.pscore_options));
        }
        if cfg.dci {
            dci_shape = keep(&mut warnings, "dci (shape task)", dci(&shape_set, &Attribute::ALL, &cfg.probe));
            let color_set: EmbeddingSet = set.for_task(Attribute::Color);
            if !color_set.is_empty() {
                dci_color = keep(&mut warnings, "dci (color task)", dci(&color_set, &Attribute::ALL, &cfg.probe));
            }
        }
    }

    let analysis = RunAnalysis {
        run_dir: dir.to_path_buf(),
        dataset: record.dataset.clone(),
        hidden_dim: record.model.hidden_dim,
        checkpoint_hash,
        manifest_hash,
        eval,
        nmi: nmi_value,
        normalization: cfg.normalization,
        pscore: pscore_value,
        dci_shape,
        dci_color,
        warnings,
    };
    write_json(&cached, &analysis)?;
    trainer::write_atomic(&dir.join(EVAL_CSV_FILE), analysis.eval.to_csv().as_bytes())?;
    Ok(analysis)
}

/// Completed run directories under `root` (or `root` itself), sorted.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        if dir.join(trainer::RUN_FILE).exists() {
            out.push(dir.to_path_buf());
            return Ok(());
        }
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, &mut out)?;
    out.sort();
    Ok(out)
}

/// The `(axis, value)` encoded in a sweep cell directory `…/{axis}_{value}/seed_{s}`.
pub fn cell_key(run_dir: &Path) -> Option<(String, f64)> {
    let name = run_dir.parent()?.file_name()?.to_str()?;
    SweepAxis::ALL.iter().find_map(|a| {
        let rest = name.strip_prefix(a.label())?.strip_prefix('_')?;
        Some((a.label().to_string(), rest.parse().ok()?))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub value: f64,
    pub attribute: Attribute,
    pub split: Subset,
    pub mean: f64,
    pub stderr: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub value: f64,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub seeds: usize,
}

/// Accuracy and geometry metrics per sweep value, as mean ± standard error over seeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub axis: String,
    pub rows: Vec<AggregateRow>,
    pub metrics: Vec<MetricRow>,
}

impl AggregateTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.metrics.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.rows.iter().map(|r| r.value).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn get(&self, value: f64, attribute: Attribute, split: Subset) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.value == value && r.attribute == attribute && r.split == split)
    }

    pub fn metric(&self, value: f64, metric: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|r| r.value == value && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let stats = |mean: f64, stderr: f64, seeds: usize| [format!("{mean:.6}"), format!("{stderr:.6}"), seeds.to_string()];
        let rows = self.rows.iter().map(|r| {
            let mut row = vec![r.value.to_string(), r.attribute.to_string(), r.split.to_string()];
            row.extend(stats(r.mean, r.stderr, r.seeds));
            row
        });
        let metrics = self.metrics.iter().map(|r| {
            let mut row = vec![r.value.to_string(), r.metric.clone(), String::new()];
            row.extend(stats(r.mean, r.stderr, r.seeds));
            row
        });
        crate::csvfmt::to_string(&[&self.axis, "attribute", "split", "mean", "stderr", "seeds"], rows.chain(metrics))
    }
}

/// Groups `(value, analysis)` pairs by value and reduces each group.
pub fn aggregate(axis: &str, runs: &[(f64, RunAnalysis)]) -> AggregateTable {
    let mut acc: BTreeMap<(u64, Attribute, u8), Vec<f64>> = BTreeMap::new();
    let mut metrics: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
    let split_index = |s: Subset| Subset::ALL.iter().position(|&x| x == s).expect("known subset") as u8;
    for (value, a) in runs {
        let key = value.to_bits();
        for c in &a.eval.cells {
            acc.entry((key, c.attribute, split_index(c.subset))).or_default().push(c.accuracy);
        }
        let mut push = |name: &str, v: Option<f64>| {
            if let Some(v) = v {
                metrics.entry((key, name.to_string())).or_default().push(v);
            }
        };
        push("nmi", a.nmi);
        push("pscore", a.pscore.as_ref().map(|p| p.mean));
        push("dci_d_shape", a.dci_shape.as_ref().map(|d| d.disentanglement));
        push("dci_c_shape", a.dci_shape.as_ref().map(|d| d.completeness));
        push("dci_d_color", a.dci_color.as_ref().map(|d| d.disentanglement));
        push("dci_c_color", a.dci_color.as_ref().map(|d| d.completeness));
    }
    let mut rows: Vec<AggregateRow> = acc
        .into_iter()
        .map(|((v, attribute, s), xs)| {
            let (mean, stderr) = mean_stderr(&xs);
            AggregateRow { value: f64::from_bits(v), attribute, split: Subset::ALL[s as usize], mean, stderr, seeds: xs.len() }
        })
        .collect();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.attribute.cmp(&b.attribute)).then(split_index(a.split).cmp(&split_index(b.split))));
    let mut metric_rows: Vec<MetricRow> = metrics
        .into_iter()
        .map(|((v, metric), xs)| {
            let (mean, stderr) = mean_stderr(&xs);
            MetricRow { value: f64::from_bits(v), metric, mean, stderr, seeds: xs.len() }
        })
        .collect();
    metric_rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.metric.cmp(&b.metric)));
    AggregateTable { axis: axis.to_string(), rows, metrics: metric_rows }
}

/// Pearson correlations across runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossRunCorrelations {
    pub pscore_vs_ood_shape: Option<Correlation>,
    pub nmi_vs_ood_shape: Option<Correlation>,
    pub nmi_vs_pscore: Option<Correlation>,
}

fn pairs(runs: &[RunAnalysis], x: impl Fn(&RunAnalysis) -> Option<f64>, y: impl Fn(&RunAnalysis) -> Option<f64>) -> Option<Correlation> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = runs.iter().filter_map(|r| Some((x(r)?, y(r)?))).unzip();
    correlate(&xs, &ys).ok()
}

pub fn cross_run_correlations(runs: &[RunAnalysis]) -> CrossRunCorrelations {
    let ps = |r: &RunAnalysis| r.pscore.as_ref().map(|p| p.mean);
    let ood = |r: &RunAnalysis| r.ood_shape_accuracy();
    let nm = |r: &RunAnalysis| r.nmi;
    CrossRunCorrelations {
        pscore_vs_ood_shape: pairs(runs, ps, ood),
        nmi_vs_ood_shape: pairs(runs, nm, ood),
        nmi_vs_pscore: pairs(runs, nm, ps),
    }
}

/// Summary written by `analyze` over a set of runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub table: AggregateTable,
    pub correlations: CrossRunCorrelations,
    pub runs: Vec<RunAnalysis>,
    pub failures: Vec<(PathBuf, String)>,
}

/// Analyzes every completed run under `root`, aggregates by sweep value and
/// correlates geometry with OOD shape accuracy.
pub fn analyze_study(root: &Path, cfg: &AnalysisConfig, workers: usize) -> Result<StudySummary> {
    analyze_runs(&find_runs(root)?, cfg, workers)
}

/// [`analyze_study`] over an explicit list of run directories.
pub fn analyze_runs(dirs: &[PathBuf], cfg: &AnalysisConfig, workers: usize) -> Result<StudySummary> {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for d in dirs {
        match analyze_run(d, cfg, workers) {
            Ok(a) => runs.push(a),
            Err(e) => failures.push((d.clone(), e.to_string())),
        }
    }
    let keyed: Vec<(f64, RunAnalysis)> =
        runs.iter().map(|r| (cell_key(&r.run_dir).map_or(0.0, |k| k.1), r.clone())).collect();
    let axis = runs.first().and_then(|r| cell_key(&r.run_dir)).map_or_else(|| "run".to_string(), |k| k.0);
    Ok(StudySummary { table: aggregate(&axis, &keyed), correlations: cross_run_correlations(&runs), runs, failures })
}

impl StudySummary {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Records the cells of a sweep beside its run directories.
pub fn save_sweep(root: &Path, cells: &[SweepCell]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_json(&root.join(SWEEP_FILE), &cells)
}

pub fn default_workers() -> usize {
    parallel::worker_count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::eval::EvalCell;
    use crate::latent::Shape;

    fn fake(ood_shape: f64, nmi_v: f64, p: f64) -> RunAnalysis {
        let cell = |subset, attribute, accuracy| EvalCell { subset, attribute, correct: 0, total: 10, accuracy };
        RunAnalysis {
            run_dir: PathBuf::from("x/n_colors_8/seed_0"),
            dataset: DatasetConfig::desk(),
            hidden_dim: 8,
            checkpoint_hash: String::new(),
            manifest_hash: String::new(),
            eval: EvalReport {
                restricted_to: vec![Shape::Cube, Shape::Cylinder],
                cells: vec![cell(Subset::TestOod, Attribute::Shape, ood_shape), cell(Subset::TestId, Attribute::Shape, 0.9)],
                checkpoint_hash: None,
                manifest_hash: None,
            },
            nmi: Some(nmi_v),
            normalization: Normalization::Arithmetic,
            pscore: Some(PScore {
                mean: p,
                stderr: 0.0,
                run_means: vec![p],
                studied: Attribute::Shape,
                secondary: Attribute::Color,
                order: Default::default(),
            }),
            dci_shape: None,
            dci_color: None,
            warnings: vec![],
        }
    }

    #[test]
    fn aggregate_matches_hand_computed_mean_and_stderr() {
        let runs = vec![(8.0, fake(0.1, 0.5, 0.2)), (8.0, fake(0.2, 0.5, 0.2)), (8.0, fake(0.6, 0.5, 0.2)), (27.0, fake(0.5, 0.1, 0.6))];
        let t = aggregate("n_colors", &runs);
        let r = t.get(8.0, Attribute::Shape, Subset::TestOod).unwrap();
        // mean 0.3; sample sd = sqrt(((-0.2)² + (-0.1)² + 0.3²)/2) = sqrt(0.07); stderr = sqrt(0.07/3)
        assert!((r.mean - 0.3).abs() < 1e-12);
        assert!((r.stderr - (0.07f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.seeds, 3);
        let single = t.get(27.0, Attribute::Shape, Subset::TestOod).unwrap();
        assert_eq!((single.seeds, single.stderr), (1, 0.0));
        assert_eq!(t.values(), vec![8.0, 27.0]);
        assert!(t.to_csv().starts_with("n_colors,attribute,split,mean,stderr,seeds\n"));
    }

    #[test]
    fn correlations_use_ood_shape_accuracy() {
        let runs: Vec<RunAnalysis> =
            [(0.1, 0.9, 0.1), (0.3, 0.6, 0.4), (0.5, 0.4, 0.5), (0.9, 0.1, 0.9)].iter().map(|&(o, n, p)| fake(o, n, p)).collect();
        let c = cross_run_correlations(&runs);
        assert!(c.pscore_vs_ood_shape.unwrap().r > 0.9);
        assert!(c.nmi_vs_ood_shape.unwrap().r < -0.9);
    }

    #[test]
    fn cell_keys_parse_from_directories() {
        assert_eq!(cell_key(Path::new("out/n_colors_216/seed_2")), Some(("n_colors".into(), 216.0)));
        assert_eq!(cell_key(Path::new("out/p_burst_0.5/seed_0")), Some(("p_burst".into(), 0.5)));
        assert_eq!(cell_key(Path::new("out/other/seed_0")), None);
    }

    #[test]
    fn config_roundtrips_losslessly() {
        let cfg = ExperimentConfig::desk();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CONFIG_FILE);
        cfg.save(&path).unwrap();
        assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"dataset": {"color_divisions": 6}}"#).unwrap();
        let m = partial.materialize().unwrap();
        assert_eq!(m.dataset.n_colors(), 216);
        assert_eq!(m.model.vocab_size, 226);
    }
}
