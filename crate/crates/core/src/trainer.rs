//! Adam training loop, resumable runs and sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::eval::{evaluate, EvalOptions, EvalReport, Scorer};
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::model::{AdamState, Checkpoint, Example, Model, ModelConfig};
use crate::parallel;
use crate::render::{self, Image, PatchSequence};
use crate::rng;
use crate::scenegen::{build_dataset, Dataset, DatasetConfig, Subset};
use crate::textgen::{self, QuerySequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub mlm_probability: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Evaluate (and write a resumable checkpoint) every this many epochs.
    pub eval_every: usize,
    /// Samples per subset scored at each evaluation; 0 scores all.
    pub eval_samples: usize,
    /// Train and evaluate without image patches.
    pub text_only: bool,
    /// Gradient workers; 0 reads `SGLAB_WORKERS` or the available parallelism.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 200 epochs, batch 128.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 200,
            mlm_probability: 0.15,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            eval_every: 10,
            eval_samples: 0,
            text_only: false,
            workers: 0,
        }
    }

    /// 1000 epochs, batch 256.
    pub fn full_scale() -> Self {
        Self { batch_size: 256, epochs: 1_000, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if !(self.mlm_probability > 0.0 && self.mlm_probability <= 1.0) {
            return Err(Error::param("mlm_probability", format!("{} is outside (0, 1]", self.mlm_probability)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::param("adam", "betas must lie in [0, 1) and eps must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every", "must be at least 1"));
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        if self.workers == 0 {
            parallel::worker_count()
        } else {
            self.workers
        }
    }
}

/// Bias-corrected Adam without weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn from_config(c: &TrainConfig) -> Self {
        Self { learning_rate: c.learning_rate, beta1: c.beta1, beta2: c.beta2, eps: c.eps }
    }

    pub fn step(&self, params: &mut [f32], grads: &[f32], state: &mut AdamState) {
        assert_eq!(params.len(), grads.len());
        state.t += 1;
        let t = state.t as i32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        // lr·m̂/(√v̂ + ε) with both bias corrections folded into the step size
        let step = (self.learning_rate * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for i in 0..params.len() {
            let g = grads[i];
            state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
            state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
            params[i] -= step * state.m[i] / (state.v[i].sqrt() + eps);
        }
    }
}

/// Rendered training images and token sequences, ready for batch assembly.
pub struct TrainingSet {
    images: Vec<Image>,
    sequences: Vec<QuerySequence>,
    patch_side: usize,
    jitter: f64,
    jitter_redraw: bool,
    text_only: bool,
}

impl TrainingSet {
    pub fn new(dataset: &Dataset, text_only: bool) -> Result<Self> {
        let cfg = dataset.config();
        let mut images = Vec::with_capacity(dataset.train.len());
        let mut sequences = Vec::with_capacity(dataset.train.len());
        for s in &dataset.train {
            images.push(render::rasterize(&s.scene, &dataset.palette, cfg.image_side)?);
            sequences.push(textgen::serialize(&s.scene, dataset.vocabulary())?);
        }
        Ok(Self {
            images,
            sequences,
            patch_side: cfg.patch_side,
            jitter: cfg.jitter,
            jitter_redraw: cfg.jitter_redraw,
            text_only,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The masked (and possibly hue-shifted) example for sample `idx` in `epoch`.
    /// Every random choice is a function of `(seed, epoch, idx)`.
    pub fn example(&self, idx: usize, epoch: usize, mlm_probability: f64, seed: u64) -> Result<Example> {
        let mut mask_rng = rng::stream(seed, &[rng::TAG_MASK, epoch as u64, idx as u64]);
        let masked = textgen::mask_for_training(&self.sequences[idx], mlm_probability, &mut mask_rng);
        let patches = if self.text_only {
            PatchSequence::empty(self.patch_side)
        } else if self.jitter > 0.0 {
            let draw = if self.jitter_redraw { epoch as u64 } else { u64::MAX };
            let mut jrng = rng::stream(seed, &[rng::TAG_JITTER, draw, idx as u64]);
            let shifted = render::hue_jitter(&self.images[idx], self.jitter, &mut jrng)?;
            render::patchify(&shifted, self.patch_side)?
        } else {
            render::patchify(&self.images[idx], self.patch_side)?
        };
        Ok(Example { n_patches: patches.len(), patches: patches.data, tokens: masked.ids, targets: masked.mask_positions })
    }

    /// Sample order of `epoch`.
    pub fn order(&self, epoch: usize, seed: u64) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed, &[rng::TAG_SHUFFLE, epoch as u64]));
        idx
    }
}

/// Model, optimizer state and position in the schedule.
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub manifest_hash: String,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig, manifest_hash: &str) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::zeros(model.param_count());
        Ok(Self { model, adam, config, epoch: 0, step: 0, manifest_hash: manifest_hash.to_string() })
    }

    pub fn from_checkpoint(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ck.model()?;
        let adam = ck.adam.clone().unwrap_or_else(|| AdamState::zeros(model.param_count()));
        Ok(Self { model, adam, config, epoch: ck.meta.epoch, step: ck.meta.step, manifest_hash: ck.meta.manifest_hash.clone() })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.model, Some(self.adam.clone()), self.step, self.epoch, &self.manifest_hash)
    }

    /// Mean-loss gradient of `batch`, reduced over workers in a fixed order.
    pub fn gradients(&self, batch: &[Example]) -> Result<(f64, Vec<f32>)> {
        let total: usize = batch.iter().map(|e| e.targets.len()).sum();
        if total == 0 {
            return Err(Error::Contract("batch has no masked positions".into()));
        }
        let scale = 1.0 / total as f32;
        let n = self.model.param_count();
        let parts = parallel::map_chunks(batch, self.config.worker_count(), |chunk| -> Result<(f64, Vec<f32>)> {
            let mut g = vec![0.0f32; n];
            let mut sum = 0.0f64;
            for ex in chunk.iter().filter(|e| !e.targets.is_empty()) {
                sum += self.model.accumulate_example(ex, scale, &mut g)? as f64;
            }
            Ok((sum, g))
        });
        let mut grads = vec![0.0f32; n];
        let mut sum = 0.0;
        for p in parts {
            let (s, g) = p?;
            sum += s;
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += *b;
            }
        }
        Ok((sum / total as f64, grads))
    }

    /// One Adam update; returns the batch loss before the update.
    pub fn train_step(&mut self, batch: &[Example]) -> Result<f64> {
        let (loss, grads) = self.gradients(batch)?;
        if !loss.is_finite() {
            return Err(Error::Numerical { layer: self.model.config.n_layers, what: format!("loss at step {}", self.step) });
        }
        Adam::from_config(&self.config).step(&mut self.model.params, &grads, &mut self.adam);
        self.step += 1;
        Ok(loss)
    }

    /// One pass over the shuffled training set; returns the mask-weighted mean loss.
    pub fn run_epoch(&mut self, data: &TrainingSet) -> Result<f64> {
        let epoch = self.epoch;
        let seed = self.config.seed;
        let order = data.order(epoch, seed);
        let mut weighted = 0.0;
        let mut masked = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<Example> = chunk
                .iter()
                .map(|&i| data.example(i, epoch, self.config.mlm_probability, seed))
                .collect::<Result<_>>()?;
            let n: usize = batch.iter().map(|e| e.targets.len()).sum();
            let loss = self.train_step(&batch)?;
            weighted += loss * n as f64;
            masked += n;
        }
        self.epoch += 1;
        Ok(weighted / masked.max(1) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub report: EvalReport,
}

/// Everything needed to re-execute and inspect one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub status: RunStatus,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifest_hash: String,
    pub param_count: usize,
    pub epoch_losses: Vec<EpochLoss>,
    pub evals: Vec<EpochEval>,
    pub wall_clock_secs: f64,
    pub source: String,
    pub checkpoint: Option<PathBuf>,
}

pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RESUME_FILE: &str = "last.ckpt";

pub fn source_id() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

impl RunRecord {
    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.evals.last().map(|e| &e.report)
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    pub fn metrics_csv(&self) -> String {
        let losses = self.epoch_losses.iter().map(|l| vec![l.epoch.to_string(), format!("{:.6}", l.loss), String::new(), String::new(), String::new()]);
        let evals = self.evals.iter().flat_map(|e| {
            e.report.cells.iter().map(move |c| {
                vec![e.epoch.to_string(), String::new(), c.subset.to_string(), c.attribute.to_string(), format!("{:.6}", c.accuracy)]
            })
        });
        crate::csvfmt::to_string(&["epoch", "loss", "split", "attribute", "accuracy"], losses.chain(evals))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// Writes `run.json` and `metrics.csv` atomically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json(RUN_FILE, e))?;
        write_atomic(&dir.join(RUN_FILE), json.as_bytes())?;
        write_atomic(&dir.join(METRICS_FILE), self.metrics_csv().as_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

/// Trains a model on `dataset`. With `out_dir`, the run is resumable: a
/// completed run is returned as is, and an interrupted one continues from its
/// last checkpoint.
pub fn train(dataset: &Dataset, model_config: &ModelConfig, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let manifest_hash = dataset.manifest.hash();
    if let Some(dir) = out_dir {
        if dir.join(RUN_FILE).exists() {
            let record = RunRecord::load(dir)?;
            if record.is_complete() {
                let path = dir.join(CHECKPOINT_FILE);
                if !path.exists() {
                    return Err(Error::Integrity(format!("{} is complete but has no checkpoint", dir.display())));
                }
                return Ok(TrainOutcome { record, checkpoint: Checkpoint::load(&path)? });
            }
        }
    }

    let started = Instant::now();
    let mut record = RunRecord {
        status: RunStatus::Running,
        dataset: dataset.config().clone(),
        model: model_config.clone(),
        train: config.clone(),
        manifest_hash: manifest_hash.clone(),
        param_count: model_config.param_count(),
        epoch_losses: Vec::new(),
        evals: Vec::new(),
        wall_clock_secs: 0.0,
        source: source_id(),
        checkpoint: None,
    };
    let mut trainer = match out_dir.map(|d| d.join(RESUME_FILE)).filter(|p| p.exists()) {
        Some(path) => {
            let ck = Checkpoint::load(&path)?;
            if ck.meta.manifest_hash != manifest_hash || ck.meta.config != *model_config {
                return Err(Error::Compatibility(format!("{} belongs to a different run", path.display())));
            }
            let prior = RunRecord::load(out_dir.expect("resume implies a directory"))?;
            record.epoch_losses = prior.epoch_losses.into_iter().filter(|l| l.epoch < ck.meta.epoch).collect();
            record.evals = prior.evals.into_iter().filter(|e| e.epoch <= ck.meta.epoch).collect();
            record.wall_clock_secs = prior.wall_clock_secs;
            Trainer::from_checkpoint(&ck, config.clone())?
        }
        None => Trainer::new(Model::new(model_config.clone())?, config.clone(), &manifest_hash)?,
    };
    trainer.model.check_compatible(dataset)?;

    let data = TrainingSet::new(dataset, config.text_only)?;
    let eval_opts = EvalOptions { max_samples: config.eval_samples, text_only: config.text_only, workers: config.worker_count() };
    let prior_secs = record.wall_clock_secs;
    while trainer.epoch < config.epochs {
        let epoch = trainer.epoch;
        match trainer.run_epoch(&data) {
            Ok(loss) => record.epoch_losses.push(EpochLoss { epoch, loss }),
            Err(e) => {
                record.status = RunStatus::Failed { reason: e.to_string() };
                record.wall_clock_secs = prior_secs + started.elapsed().as_secs_f64();
                if let Some(dir) = out_dir {
                    record.save(dir)?;
                }
                return Err(e);
            }
        }
        let done = trainer.epoch;
        if done % config.eval_every == 0 || done == config.epochs {
            let report = evaluate(&trainer.model, dataset, &Subset::ALL, &eval_opts)?;
            record.evals.push(EpochEval { epoch: done, report });
            record.wall_clock_secs = prior_secs + started.elapsed().as_secs_f64();
            if let Some(dir) = out_dir {
                if done < config.epochs {
                    trainer.checkpoint().save(&dir.join(RESUME_FILE))?;
                    record.save(dir)?;
                }
            }
        }
    }

    let checkpoint = trainer.checkpoint();
    let hash = checkpoint.hash()?;
    for e in &mut record.evals {
        e.report.checkpoint_hash.get_or_insert_with(|| hash.clone());
    }
    record.status = RunStatus::Complete;
    record.wall_clock_secs = prior_secs + started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        let path = dir.join(CHECKPOINT_FILE);
        checkpoint.save(&path)?;
        record.checkpoint = Some(path);
        record.save(dir)?;
        let resume = dir.join(RESUME_FILE);
        if resume.exists() {
            fs::remove_file(&resume).map_err(|e| Error::io(&resume, e))?;
        }
    }
    Ok(TrainOutcome { record, checkpoint })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NColors,
    PBurst,
    Jitter,
    TrainFraction,
    HiddenDim,
    CommonRatio,
}

/// Palette sizes of the diversity sweep.
pub const DIVERSITY_VALUES: [usize; 5] = [8, 27, 64, 125, 216];

/// Hidden sizes of the capacity sweep for a palette size.
pub fn capacity_values(n_colors: usize) -> Vec<usize> {
    if n_colors >= 216 {
        vec![256, 512, 1024]
    } else {
        vec![32, 64, 128, 256]
    }
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] =
        [SweepAxis::NColors, SweepAxis::PBurst, SweepAxis::Jitter, SweepAxis::TrainFraction, SweepAxis::HiddenDim, SweepAxis::CommonRatio];

    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::NColors => "n_colors",
            SweepAxis::PBurst => "p_burst",
            SweepAxis::Jitter => "jitter",
            SweepAxis::TrainFraction => "train_fraction",
            SweepAxis::HiddenDim => "hidden_dim",
            SweepAxis::CommonRatio => "common_ratio",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.label() == s).ok_or_else(|| {
            let known: Vec<&str> = Self::ALL.iter().map(|a| a.label()).collect();
            Error::param("axis", format!("unknown sweep axis `{s}` (expected one of {})", known.join(", ")))
        })
    }

    /// Sets this axis to `value` in `cfg`.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> Result<()> {
        match self {
            SweepAxis::NColors => {
                let n = value.cbrt().round() as usize;
                if (n.pow(3) as f64 - value).abs() > 1e-9 {
                    return Err(Error::param("n_colors", format!("{value} is not a perfect cube")));
                }
                cfg.dataset.color_divisions = n;
            }
            SweepAxis::PBurst => cfg.dataset.p_burst = value,
            SweepAxis::Jitter => cfg.dataset.jitter = value,
            SweepAxis::TrainFraction => cfg.dataset.train_fraction = value,
            SweepAxis::CommonRatio => cfg.dataset.common_ratio = value,
            SweepAxis::HiddenDim => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::param("hidden_dim", format!("{value} is not a positive integer")));
                }
                cfg.model.hidden_dim = value as usize;
            }
        }
        cfg.dataset.validate()?;
        cfg.model.validate()
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// Three seeds, 0..3.
    pub fn new(axis: SweepAxis, values: Vec<f64>) -> Self {
        Self { axis, values, seeds: vec![0, 1, 2] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub dir: PathBuf,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

/// Run directory of one sweep cell.
pub fn cell_dir(root: &Path, axis: SweepAxis, value: f64, seed: u64) -> PathBuf {
    root.join(format!("{axis}_{value}")).join(format!("seed_{seed}"))
}

/// The configuration of one sweep cell: `base` with the axis set and the
/// model and training seeds set to `seed`. Datasets are shared across seeds.
pub fn cell_config(base: &ExperimentConfig, axis: SweepAxis, value: f64, seed: u64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    axis.apply(&mut cfg, value)?;
    cfg.model.seed = seed;
    cfg.train.seed = seed;
    cfg.model = cfg.model.fit_to(&cfg.dataset);
    Ok(cfg)
}

/// One run per `(value, seed)`. Completed cells are skipped; a failing cell is
/// recorded and the sweep continues.
pub fn run_sweep(spec: &SweepSpec, base: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SweepCell>> {
    if spec.values.is_empty() || spec.seeds.is_empty() {
        return Err(Error::param("values", "a sweep needs at least one value and one seed"));
    }
    // validate every cell before spending compute on any of them
    let configs: Vec<ExperimentConfig> = spec
        .values
        .iter()
        .map(|&v| cell_config(base, spec.axis, v, spec.seeds[0]))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (&value, cfg0) in spec.values.iter().zip(&configs) {
        let dataset = build_dataset(&cfg0.dataset);
        for &seed in &spec.seeds {
            let dir = cell_dir(out_dir, spec.axis, value, seed);
            let cfg = cell_config(base, spec.axis, value, seed)?;
            let result = dataset.as_ref().map_err(|e| Error::Generation(e.to_string())).and_then(|ds| {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                cfg.save(&dir.join(crate::experiment::CONFIG_FILE))?;
                train(ds, &cfg.model, &cfg.train, Some(&dir))
            });
            let (record, error) = match result {
                Ok(o) => (Some(o.record), None),
                Err(e) => (None, Some(e.to_string())),
            };
            cells.push(SweepCell { axis: spec.axis, value, seed, dir, record, error });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> Dataset {
        build_dataset(&DatasetConfig { train_size: 32, test_size: 8, image_side: 32, patch_side: 8, seed: 1, ..DatasetConfig::desk() })
            .unwrap()
    }

    fn toy_model(ds: &Dataset, seed: u64) -> ModelConfig {
        ModelConfig { hidden_dim: 16, n_layers: 1, n_heads: 2, mlp_ratio: 2, seed, ..ModelConfig::default() }.fit_to(ds.config())
    }

    fn toy_train(seed: u64) -> TrainConfig {
        TrainConfig { learning_rate: 1e-3, batch_size: 8, epochs: 1, seed, workers: 1, eval_every: 1, eval_samples: 2, ..TrainConfig::desk() }
    }

    fn eval_loss(model: &Model<f32>, data: &TrainingSet) -> f64 {
        let batch: Vec<Example> = (0..data.len()).map(|i| data.example(i, 0, 0.15, 1234).unwrap()).collect();
        model.loss(&batch).unwrap() as f64
    }

    #[test]
    fn one_epoch_reduces_loss_for_most_seeds() {
        let ds = toy_dataset();
        let data = TrainingSet::new(&ds, false).unwrap();
        let mut improved = 0;
        for seed in 0..10 {
            let mut t = Trainer::new(Model::new(toy_model(&ds, seed)).unwrap(), toy_train(seed), "").unwrap();
            let before = eval_loss(&t.model, &data);
            t.run_epoch(&data).unwrap();
            if eval_loss(&t.model, &data) < before {
                improved += 1;
            }
        }
        assert!(improved >= 9, "{improved}/10 seeds improved");
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let ds = toy_dataset();
        let data = TrainingSet::new(&ds, false).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, ..toy_train(0) };
        let mut t = Trainer::new(Model::new(toy_model(&ds, 0)).unwrap(), cfg, "").unwrap();
        let before = t.model.params.clone();
        for _ in 0..2 {
            t.run_epoch(&data).unwrap();
        }
        assert_eq!(t.step, 8);
        assert!(t.model.params.iter().zip(&before).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn resume_is_bitwise_identical() {
        let ds = toy_dataset();
        let data = TrainingSet::new(&ds, false).unwrap();
        let mut straight = Trainer::new(Model::new(toy_model(&ds, 3)).unwrap(), toy_train(3), "h").unwrap();
        straight.run_epoch(&data).unwrap();
        straight.run_epoch(&data).unwrap();

        let mut first = Trainer::new(Model::new(toy_model(&ds, 3)).unwrap(), toy_train(3), "h").unwrap();
        first.run_epoch(&data).unwrap();
        let bytes = first.checkpoint().to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(&bytes, "mem").unwrap();
        let mut resumed = Trainer::from_checkpoint(&ck, toy_train(3)).unwrap();
        resumed.run_epoch(&data).unwrap();
        assert_eq!(resumed.step, straight.step);
        assert!(resumed.model.params.iter().zip(&straight.model.params).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn worker_count_does_not_change_the_gradient_much() {
        let ds = toy_dataset();
        let data = TrainingSet::new(&ds, false).unwrap();
        let batch: Vec<Example> = (0..8).map(|i| data.example(i, 0, 0.15, 0).unwrap()).collect();
        let m = Model::new(toy_model(&ds, 0)).unwrap();
        let one = Trainer::new(m.clone(), toy_train(0), "").unwrap().gradients(&batch).unwrap();
        let three = Trainer::new(m, TrainConfig { workers: 3, ..toy_train(0) }, "").unwrap().gradients(&batch).unwrap();
        assert!((one.0 - three.0).abs() < 1e-6);
        assert!(one.1.iter().zip(&three.1).all(|(a, b)| (a - b).abs() <= 1e-6 + 1e-4 * a.abs()));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let adam = Adam { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = vec![1.0f32, -2.0, 0.5];
        let mut s = AdamState::zeros(3);
        adam.step(&mut p, &[0.3, -4.0, 0.0], &mut s);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn training_examples_are_deterministic() {
        let ds = build_dataset(&DatasetConfig { jitter: 0.3, ..toy_dataset().manifest.config.clone() }).unwrap();
        let data = TrainingSet::new(&ds, false).unwrap();
        assert_eq!(data.example(3, 2, 0.15, 9).unwrap(), data.example(3, 2, 0.15, 9).unwrap());
        assert_ne!(data.example(3, 2, 0.15, 9).unwrap().patches, data.example(3, 4, 0.15, 9).unwrap().patches);
        assert_eq!(data.order(1, 5), data.order(1, 5));
        assert_ne!(data.order(1, 5), data.order(2, 5));
    }

    #[test]
    fn run_directory_is_resumable_and_idempotent() {
        let ds = toy_dataset();
        let dir = tempfile::tempdir().unwrap();
        let m = toy_model(&ds, 0);
        let cfg = TrainConfig { epochs: 2, ..toy_train(0) };
        // stop after the first epoch by training a 1-epoch-shorter schedule
        let straight = train(&ds, &m, &cfg, None).unwrap();
        let partial_dir = dir.path().join("run");
        {
            let mut t = Trainer::new(Model::new(m.clone()).unwrap(), cfg.clone(), &ds.manifest.hash()).unwrap();
            let data = TrainingSet::new(&ds, false).unwrap();
            let loss = t.run_epoch(&data).unwrap();
            t.checkpoint().save(&partial_dir.join(RESUME_FILE)).unwrap();
            let record = RunRecord {
                status: RunStatus::Running,
                dataset: ds.config().clone(),
                model: m.clone(),
                train: cfg.clone(),
                manifest_hash: ds.manifest.hash(),
                param_count: m.param_count(),
                epoch_losses: vec![EpochLoss { epoch: 0, loss }],
                evals: vec![],
                wall_clock_secs: 0.0,
                source: source_id(),
                checkpoint: None,
            };
            record.save(&partial_dir).unwrap();
        }
        let resumed = train(&ds, &m, &cfg, Some(&partial_dir)).unwrap();
        assert_eq!(resumed.checkpoint.params, straight.checkpoint.params);
        assert!(resumed.record.is_complete());
        assert_eq!(resumed.record.epoch_losses.len(), 2);
        assert!(!partial_dir.join(RESUME_FILE).exists());
        let again = train(&ds, &m, &cfg, Some(&partial_dir)).unwrap();
        assert_eq!(again.record, resumed.record);
        let csv = fs::read_to_string(partial_dir.join(METRICS_FILE)).unwrap();
        assert!(csv.starts_with("epoch,loss,split,attribute,accuracy\n"));
    }

    #[test]
    fn sweep_axes_parse_and_apply() {
        assert!(SweepAxis::parse("n_colors").is_ok());
        assert!(matches!(SweepAxis::parse("colour"), Err(e) if e.is_usage()));
        let mut cfg = ExperimentConfig::default();
        SweepAxis::NColors.apply(&mut cfg, 216.0).unwrap();
        assert_eq!(cfg.dataset.color_divisions, 6);
        assert!(SweepAxis::NColors.apply(&mut cfg, 10.0).is_err());
        assert_eq!(DIVERSITY_VALUES, [8, 27, 64, 125, 216]);
        assert_eq!(capacity_values(8), vec![32, 64, 128, 256]);
        assert_eq!(capacity_values(216), vec![256, 512, 1024]);
    }
}
