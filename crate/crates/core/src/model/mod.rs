//! Multimodal masked-language transformer encoder.
//!
//! Image patches go through a linear projection and text ids through an
//! embedding table; each element gets a learned per-modality position
//! embedding plus a learned modality embedding, and the two sequences are
//! concatenated image-first. The encoder is a stack of pre-norm blocks
//! (LN → multi-head self-attention → residual, LN → GELU MLP → residual)
//! followed by a final LN and an untied linear head applied at masked
//! positions. Gradients are computed by explicit reverse-mode passes over the
//! cached activations of each block.

mod backward;
mod checkpoint;
mod forward;

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use backward::Example;
pub use checkpoint::{AdamState, Checkpoint, CheckpointMeta};
pub use forward::{ForwardOutput, Input, Trace};

use crate::error::{Error, Result};
use crate::latent::{Material, Shape, Size};
use crate::linalg::Real;
use crate::rng;
use crate::scenegen::{DatasetConfig, MAX_ENTITIES};
use crate::textgen;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    /// `patch_side² · 3`.
    pub patch_dim: usize,
    /// Image position table size.
    pub max_patches: usize,
    /// Text position table size.
    pub max_text_len: usize,
    pub mlp_ratio: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(0, 0, 0, 0).fit_to(&DatasetConfig::desk())
    }
}

impl ModelConfig {
    /// Desk preset: d = 128, 2 layers, 4 heads.
    pub fn desk(vocab_size: usize, patch_dim: usize, max_patches: usize, max_text_len: usize) -> Self {
        Self { hidden_dim: 128, n_layers: 2, n_heads: 4, vocab_size, patch_dim, max_patches, max_text_len, mlp_ratio: 4, seed: 0 }
    }

    /// d = 256, 4 layers, 4 heads.
    pub fn full_scale(vocab_size: usize, patch_dim: usize, max_patches: usize, max_text_len: usize) -> Self {
        Self { hidden_dim: 256, n_layers: 4, ..Self::desk(vocab_size, patch_dim, max_patches, max_text_len) }
    }

    /// Sets vocabulary, patch and sequence sizes from a dataset configuration.
    pub fn fit_to(self, data: &DatasetConfig) -> Self {
        let specials = 3;
        let vocab_size = specials + Size::ALL.len() + data.n_colors() + Material::ALL.len() + Shape::ALL.len();
        Self {
            vocab_size,
            patch_dim: data.patch_side * data.patch_side * 3,
            max_patches: (data.image_side / data.patch_side.max(1)).pow(2),
            max_text_len: textgen::sequence_len(MAX_ENTITIES),
            ..self
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.hidden_dim * self.mlp_ratio
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_patches + self.max_text_len
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::Config(why));
        if self.hidden_dim == 0 || self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return bad(format!("hidden_dim {} not divisible by n_heads {}", self.hidden_dim, self.n_heads));
        }
        if self.n_layers == 0 || self.vocab_size == 0 || self.mlp_ratio == 0 {
            return bad("n_layers, vocab_size and mlp_ratio must be positive".into());
        }
        if self.max_text_len == 0 {
            return bad("max_text_len must be positive".into());
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        ParamLayout::new(self).total
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub ln1_gain: Range<usize>,
    pub ln1_bias: Range<usize>,
    pub qkv_weight: Range<usize>,
    pub qkv_bias: Range<usize>,
    pub out_weight: Range<usize>,
    pub out_bias: Range<usize>,
    pub ln2_gain: Range<usize>,
    pub ln2_bias: Range<usize>,
    pub fc1_weight: Range<usize>,
    pub fc1_bias: Range<usize>,
    pub fc2_weight: Range<usize>,
    pub fc2_bias: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub start: usize,
    pub end: usize,
    pub init: Init,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Offsets of every parameter tensor within one flat buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub entries: Vec<ParamInfo>,
    pub patch_weight: Range<usize>,
    pub patch_bias: Range<usize>,
    pub token_embedding: Range<usize>,
    pub image_position: Range<usize>,
    pub text_position: Range<usize>,
    pub modality: Range<usize>,
    pub layers: Vec<LayerSlots>,
    pub final_gain: Range<usize>,
    pub final_bias: Range<usize>,
    pub head_weight: Range<usize>,
    pub head_bias: Range<usize>,
    pub total: usize,
}

struct LayoutBuilder {
    entries: Vec<ParamInfo>,
    next: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> Range<usize> {
        let len: usize = shape.iter().product();
        let r = self.next..self.next + len;
        self.entries.push(ParamInfo { name, shape: shape.to_vec(), start: r.start, end: r.end, init });
        self.next += len;
        r
    }
}

impl ParamLayout {
    /// Weight matrices are stored `in × out`, row-major.
    pub fn new(c: &ModelConfig) -> Self {
        let d = c.hidden_dim;
        let h = c.mlp_dim();
        let mut b = LayoutBuilder { entries: Vec::new(), next: 0 };
        let patch_weight = b.add("embed.patch.weight".into(), &[c.patch_dim, d], Init::Normal);
        let patch_bias = b.add("embed.patch.bias".into(), &[d], Init::Zeros);
        let token_embedding = b.add("embed.token".into(), &[c.vocab_size, d], Init::Normal);
        let image_position = b.add("embed.image_position".into(), &[c.max_patches, d], Init::Normal);
        let text_position = b.add("embed.text_position".into(), &[c.max_text_len, d], Init::Normal);
        let modality = b.add("embed.modality".into(), &[2, d], Init::Normal);
        let layers = (0..c.n_layers)
            .map(|l| {
                let p = |s: &str| format!("layers.{l}.{s}");
                LayerSlots {
                    ln1_gain: b.add(p("ln1.gain"), &[d], Init::Ones),
                    ln1_bias: b.add(p("ln1.bias"), &[d], Init::Zeros),
                    qkv_weight: b.add(p("attn.qkv.weight"), &[d, 3 * d], Init::Normal),
                    qkv_bias: b.add(p("attn.qkv.bias"), &[3 * d], Init::Zeros),
                    out_weight: b.add(p("attn.out.weight"), &[d, d], Init::Normal),
                    out_bias: b.add(p("attn.out.bias"), &[d], Init::Zeros),
                    ln2_gain: b.add(p("ln2.gain"), &[d], Init::Ones),
                    ln2_bias: b.add(p("ln2.bias"), &[d], Init::Zeros),
                    fc1_weight: b.add(p("mlp.fc1.weight"), &[d, h], Init::Normal),
                    fc1_bias: b.add(p("mlp.fc1.bias"), &[h], Init::Zeros),
                    fc2_weight: b.add(p("mlp.fc2.weight"), &[h, d], Init::Normal),
                    fc2_bias: b.add(p("mlp.fc2.bias"), &[d], Init::Zeros),
                }
            })
            .collect();
        let final_gain = b.add("final_ln.gain".into(), &[d], Init::Ones);
        let final_bias = b.add("final_ln.bias".into(), &[d], Init::Zeros);
        let head_weight = b.add("head.weight".into(), &[d, c.vocab_size], Init::Normal);
        let head_bias = b.add("head.bias".into(), &[c.vocab_size], Init::Zeros);
        Self {
            total: b.next,
            entries: b.entries,
            patch_weight,
            patch_bias,
            token_embedding,
            image_position,
            text_position,
            modality,
            layers,
            final_gain,
            final_bias,
            head_weight,
            head_bias,
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamInfo> {
        self.entries.iter().find(|e| e.name == name)
    }
}

pub const INIT_STD: f64 = 0.02;

/// Normal(0, σ) truncated to ±2σ by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

/// Transformer parameters in one flat buffer, plus the layout describing them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut rng = rng::stream(config.seed, &[rng::TAG_INIT]);
        let mut params = vec![T::zero(); layout.total];
        for e in &layout.entries {
            for v in &mut params[e.start..e.end] {
                *v = match e.init {
                    Init::Normal => T::lit(truncated_normal(&mut rng, INIT_STD)),
                    Init::Zeros => T::zero(),
                    Init::Ones => T::one(),
                };
            }
        }
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Integrity(format!("{} parameters, config implies {}", params.len(), layout.total)));
        }
        Ok(Self { config, layout, params })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|e| &self.params[e.start..e.end])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let (s, e) = self.layout.get(name).map(|e| (e.start, e.end))?;
        Some(&mut self.params[s..e])
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::lit(v.f64())).collect(),
        }
    }

    pub(crate) fn p(&self, r: &Range<usize>) -> &[T] {
        &self.params[r.clone()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            hidden_dim: 8,
            n_layers: 2,
            n_heads: 2,
            vocab_size: 11,
            patch_dim: 12,
            max_patches: 4,
            max_text_len: 6,
            mlp_ratio: 4,
            seed: 1,
        }
    }

    #[test]
    fn param_count_is_a_function_of_config() {
        let c = cfg();
        let (d, h, v) = (8, 32, 11);
        let per_layer = 2 * d + d * 3 * d + 3 * d + d * d + d + 2 * d + d * h + h + h * d + d;
        let expect = 12 * d + d + v * d + 4 * d + 6 * d + 2 * d + 2 * per_layer + 2 * d + d * v + v;
        assert_eq!(c.param_count(), expect);
        let m = Model::<f32>::new(c.clone()).unwrap();
        assert_eq!(m.param_count(), expect);
        assert_eq!(m.layout.entries.last().unwrap().end, expect);
    }

    #[test]
    fn init_is_seeded_and_truncated() {
        let a = Model::<f32>::new(cfg()).unwrap();
        let b = Model::<f32>::new(cfg()).unwrap();
        assert_eq!(a.params, b.params);
        let w = a.param("layers.1.mlp.fc1.weight").unwrap();
        assert!(w.iter().all(|v| v.abs() <= 0.04 + 1e-7));
        assert!(w.iter().any(|&v| v != 0.0));
        assert!(a.param("layers.0.ln1.gain").unwrap().iter().all(|&v| v == 1.0));
        assert!(a.param("head.bias").unwrap().iter().all(|&v| v == 0.0));
        let c = Model::<f32>::new(ModelConfig { seed: 2, ..cfg() }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn fitted_sizes_match_the_dataset() {
        let data = DatasetConfig::desk();
        let c = ModelConfig::default();
        let palette = crate::latent::build_palette(data.color_divisions).unwrap();
        assert_eq!(c.vocab_size, textgen::Vocabulary::new(&palette).len());
        assert_eq!((c.patch_dim, c.max_patches, c.max_text_len), (192, 64, 49));
        assert_eq!((c.hidden_dim, c.n_layers, c.n_heads), (128, 2, 4));
    }

    #[test]
    fn rejects_indivisible_heads() {
        assert!(Model::<f32>::new(ModelConfig { n_heads: 3, ..cfg() }).is_err());
    }
}
