//! Per-attribute accuracy on cubes and cylinders, and representation extraction.

use serde::{Deserialize, Serialize};

use super::embeddings::{EmbeddingMeta, EmbeddingSet};
use crate::error::{Error, Result};
use crate::latent::{Attribute, Shape};
use crate::linalg::Real;
use crate::model::{Input, Model};
use crate::parallel;
use crate::render::{self, PatchSequence};
use crate::scenegen::{Dataset, Sample, Subset};
use crate::textgen::{self, QuerySequence};

/// Anything that produces vocabulary logits at masked text positions.
pub trait Scorer: Sync {
    fn vocab_size(&self) -> usize;

    /// `n_masked × vocab_size` logits, one row per masked position of `seq`.
    fn masked_logits(&self, patches: &PatchSequence, seq: &QuerySequence) -> Result<Vec<f32>>;

    fn check_compatible(&self, dataset: &Dataset) -> Result<()> {
        let v = dataset.vocabulary().len();
        if self.vocab_size() != v {
            return Err(Error::Compatibility(format!("scorer vocabulary {} != dataset vocabulary {v}", self.vocab_size())));
        }
        Ok(())
    }
}

impl<T: Real> Scorer for Model<T> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn masked_logits(&self, patches: &PatchSequence, seq: &QuerySequence) -> Result<Vec<f32>> {
        let positions: Vec<usize> = seq.mask_positions.iter().map(|&(p, _)| p).collect();
        let out = self.run(&Input::new(patches, &seq.ids), &positions)?;
        Ok(out.logits.iter().map(|v| v.f64() as f32).collect())
    }

    fn check_compatible(&self, dataset: &Dataset) -> Result<()> {
        let v = dataset.vocabulary().len();
        if self.config.vocab_size != v {
            return Err(Error::Compatibility(format!("model vocabulary {} != dataset vocabulary {v}", self.config.vocab_size)));
        }
        let cfg = dataset.config();
        let patch_dim = cfg.patch_side * cfg.patch_side * 3;
        let n_patches = (cfg.image_side / cfg.patch_side).pow(2);
        if self.config.patch_dim != patch_dim || self.config.max_patches < n_patches {
            return Err(Error::Compatibility(format!(
                "model expects patch_dim {} and at most {} patches, dataset has {patch_dim} and {n_patches}",
                self.config.patch_dim, self.config.max_patches
            )));
        }
        Ok(())
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub subset: Subset,
    pub attribute: Attribute,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

impl EvalCell {
    /// Normal-approximation 95% half-width of the accuracy.
    pub fn ci95(&self) -> f64 {
        if self.total == 0 {
            return f64::NAN;
        }
        1.96 * (self.accuracy * (1.0 - self.accuracy) / self.total as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Shapes whose entities were scored.
    pub restricted_to: Vec<Shape>,
    pub cells: Vec<EvalCell>,
    pub checkpoint_hash: Option<String>,
    pub manifest_hash: Option<String>,
}

impl EvalReport {
    pub fn cell(&self, subset: Subset, attribute: Attribute) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.subset == subset && c.attribute == attribute)
    }

    pub fn accuracy(&self, subset: Subset, attribute: Attribute) -> Option<f64> {
        self.cell(subset, attribute).map(|c| c.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let rows = self.cells.iter().map(|c| {
            vec![c.subset.to_string(), c.attribute.to_string(), c.correct.to_string(), c.total.to_string(), format!("{:.6}", c.accuracy)]
        });
        crate::csvfmt::to_string(&["split", "attribute", "correct", "total", "accuracy"], rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Score at most this many samples per subset; 0 scores all.
    pub max_samples: usize,
    /// Drop the image and score from text alone.
    pub text_only: bool,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { max_samples: 0, text_only: false, workers: 1 }
    }
}

fn is_scored(shape: Shape) -> bool {
    shape.is_systematic()
}

/// Patches and unmasked tokens for one sample.
pub fn sample_inputs(dataset: &Dataset, sample: &Sample, text_only: bool) -> Result<(PatchSequence, QuerySequence)> {
    let cfg = dataset.config();
    let seq = textgen::serialize(&sample.scene, dataset.vocabulary())?;
    let patches = if text_only {
        PatchSequence::empty(cfg.patch_side)
    } else {
        let image = render::rasterize(&sample.scene, &dataset.palette, cfg.image_side)?;
        render::patchify(&image, cfg.patch_side)?
    };
    Ok((patches, seq))
}

/// `[correct; 4]` and `[total; 4]` in `Attribute::ALL` order for one sample.
fn score_sample<S: Scorer + ?Sized>(scorer: &S, dataset: &Dataset, sample: &Sample, text_only: bool) -> Result<([u64; 4], [u64; 4])> {
    let (patches, seq) = sample_inputs(dataset, sample, text_only)?;
    let v = scorer.vocab_size();
    let mut correct = [0u64; 4];
    let mut total = [0u64; 4];
    for (e, entity) in sample.scene.entities.iter().enumerate() {
        if !is_scored(entity.shape) {
            continue;
        }
        for (k, &attribute) in Attribute::ALL.iter().enumerate() {
            let masked = textgen::mask_for_eval(&seq, e, attribute)?;
            let logits = scorer.masked_logits(&patches, &masked)?;
            if logits.len() != v {
                return Err(Error::Contract(format!("scorer returned {} logits for vocabulary {v}", logits.len())));
            }
            let (_, truth) = masked.mask_positions[0];
            total[k] += 1;
            if argmax(&logits) == truth as usize {
                correct[k] += 1;
            }
        }
    }
    Ok((correct, total))
}

/// Masks every attribute of every cube and cylinder in turn and scores the
/// argmax over the full vocabulary against the true token.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, dataset: &Dataset, subsets: &[Subset], opts: &EvalOptions) -> Result<EvalReport> {
    scorer.check_compatible(dataset)?;
    let mut cells = Vec::new();
    for &subset in subsets {
        let samples = dataset.subset(subset);
        let n = if opts.max_samples == 0 { samples.len() } else { opts.max_samples.min(samples.len()) };
        let per_sample = parallel::map(&samples[..n], opts.workers, |s| score_sample(scorer, dataset, s, opts.text_only));
        let mut correct = [0u64; 4];
        let mut total = [0u64; 4];
        for r in per_sample {
            let (c, t) = r?;
            for k in 0..4 {
                correct[k] += c[k];
                total[k] += t[k];
            }
        }
        for (k, &attribute) in Attribute::ALL.iter().enumerate() {
            if total[k] == 0 {
                continue;
            }
            cells.push(EvalCell {
                subset,
                attribute,
                correct: correct[k],
                total: total[k],
                accuracy: correct[k] as f64 / total[k] as f64,
            });
        }
    }
    Ok(EvalReport {
        restricted_to: vec![Shape::Cube, Shape::Cylinder],
        cells,
        checkpoint_hash: None,
        manifest_hash: Some(dataset.manifest.hash()),
    })
}

/// Final-layer hidden state at the masked position of `(entity, attribute)`.
pub fn extract_representation<T: Real>(
    model: &Model<T>,
    patches: &PatchSequence,
    seq: &QuerySequence,
    entity: usize,
    attribute: Attribute,
) -> Result<Vec<f32>> {
    let masked = textgen::mask_for_eval(seq, entity, attribute)?;
    let (pos, _) = masked.mask_positions[0];
    let input = Input::new(patches, &masked.ids);
    let out = model.run(&input, &[pos])?;
    let d = model.config.hidden_dim;
    let row = patches.len() + pos;
    Ok(out.hidden[row * d..(row + 1) * d].iter().map(|v| v.f64() as f32).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    /// Images drawn equally from test-ID and test-OOD.
    pub n_images: usize,
    /// Attributes whose masked positions are read out.
    pub tasks: Vec<Attribute>,
    pub workers: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { n_images: 1_024, tasks: vec![Attribute::Shape, Attribute::Color], workers: 1 }
    }
}

/// Representations of every cube and cylinder in the first `n_images / 2`
/// samples of test-ID and of test-OOD.
pub fn extract_embeddings<T: Real>(model: &Model<T>, dataset: &Dataset, opts: &ExtractOptions) -> Result<EmbeddingSet> {
    model.check_compatible(dataset)?;
    let half = opts.n_images / 2;
    let mut work: Vec<(Subset, &Sample)> = Vec::new();
    for subset in [Subset::TestId, Subset::TestOod] {
        work.extend(dataset.subset(subset).iter().take(half).map(|s| (subset, s)));
    }
    let per_sample = parallel::map(&work, opts.workers, |&(subset, sample)| -> Result<Vec<(Vec<f32>, EmbeddingMeta)>> {
        let (patches, seq) = sample_inputs(dataset, sample, false)?;
        let mut out = Vec::new();
        for (e, entity) in sample.scene.entities.iter().enumerate() {
            if !is_scored(entity.shape) {
                continue;
            }
            let attributes = Attribute::ALL.map(|a| entity.value(a));
            for &task in &opts.tasks {
                let v = extract_representation(model, &patches, &seq, e, task)?;
                out.push((v, EmbeddingMeta { subset, sample_id: sample.id, entity_index: e, attributes, masked: task }));
            }
        }
        Ok(out)
    });
    let mut set = EmbeddingSet::new(model.config.hidden_dim);
    set.manifest_hash = Some(dataset.manifest.hash());
    for r in per_sample {
        for (v, meta) in r? {
            set.push(v, meta)?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::scenegen::{build_dataset, DatasetConfig};

    fn tiny() -> Dataset {
        build_dataset(&DatasetConfig { train_size: 20, test_size: 40, image_side: 32, patch_side: 8, seed: 3, ..DatasetConfig::desk() })
            .unwrap()
    }

    struct Oracle {
        v: usize,
    }

    impl Scorer for Oracle {
        fn vocab_size(&self) -> usize {
            self.v
        }
        fn masked_logits(&self, _: &PatchSequence, seq: &QuerySequence) -> Result<Vec<f32>> {
            let mut out = vec![0.0; self.v * seq.mask_positions.len()];
            for (i, &(_, t)) in seq.mask_positions.iter().enumerate() {
                out[i * self.v + t as usize] = 1.0;
            }
            Ok(out)
        }
    }

    struct Uniform {
        v: usize,
    }

    impl Scorer for Uniform {
        fn vocab_size(&self) -> usize {
            self.v
        }
        fn masked_logits(&self, _: &PatchSequence, seq: &QuerySequence) -> Result<Vec<f32>> {
            // seeded by the masked content so the stub is deterministic
            let key = seq.mask_positions.iter().fold(seq.ids.len() as u64, |h, &(p, t)| h * 131 + p as u64 * 7 + t as u64);
            let h = seq.ids.iter().fold(key, |h, &id| h.wrapping_mul(1_000_003).wrapping_add(id as u64));
            let mut rng = crate::rng::stream(h, &[]);
            Ok((0..self.v * seq.mask_positions.len()).map(|_| rng.gen::<f32>()).collect())
        }
    }

    #[test]
    fn oracle_scores_one_everywhere() {
        let ds = tiny();
        let r = evaluate(&Oracle { v: ds.vocabulary().len() }, &ds, &Subset::ALL, &EvalOptions::default()).unwrap();
        assert_eq!(r.cells.len(), 12);
        assert!(r.cells.iter().all(|c| c.accuracy == 1.0));
    }

    #[test]
    fn counts_match_cube_and_cylinder_entities() {
        let ds = tiny();
        let r = evaluate(&Oracle { v: ds.vocabulary().len() }, &ds, &Subset::ALL, &EvalOptions { workers: 3, ..Default::default() })
            .unwrap();
        for subset in Subset::ALL {
            let expect: usize = ds
                .subset(subset)
                .iter()
                .map(|s| s.scene.entities.iter().filter(|e| e.shape != Shape::Sphere).count())
                .sum();
            for a in Attribute::ALL {
                assert_eq!(r.cell(subset, a).unwrap().total, expect as u64);
            }
        }
    }

    #[test]
    fn uniform_logits_score_one_over_vocabulary() {
        let ds = tiny();
        let v = ds.vocabulary().len();
        let r = evaluate(&Uniform { v }, &ds, &Subset::ALL, &EvalOptions::default()).unwrap();
        let (correct, total) = r.cells.iter().fold((0, 0), |(c, t), x| (c + x.correct, t + x.total));
        let p = correct as f64 / total as f64;
        let ci = 3.0 * ((1.0 / v as f64) * (1.0 - 1.0 / v as f64) / total as f64).sqrt();
        assert!((p - 1.0 / v as f64).abs() <= ci, "accuracy {p} vs 1/{v} ± {ci}");
    }

    #[test]
    fn vocabulary_mismatch_is_a_compatibility_error() {
        let ds = tiny();
        let err = evaluate(&Oracle { v: 3 }, &ds, &[Subset::TestId], &EvalOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Compatibility(_)));
    }

    #[test]
    fn argmax_takes_first_on_ties() {
        assert_eq!(argmax(&[0.0, 2.0, 2.0, 1.0]), 1);
    }
}
