use super::Model;
use crate::error::{Error, Result};
use crate::linalg::{add_row_bias, matmul, Real};
use crate::render::PatchSequence;
use crate::textgen::TokenId;

pub const LN_EPS: f64 = 1e-6;

/// One model input: image patches followed by text tokens.
#[derive(Clone, Copy, Debug)]
pub struct Input<'a> {
    /// `n_patches × patch_dim`, row-major.
    pub patches: &'a [f32],
    pub n_patches: usize,
    pub tokens: &'a [TokenId],
    /// Position index of every text token; `0..len` when `None`.
    pub text_positions: Option<&'a [usize]>,
}

impl<'a> Input<'a> {
    pub fn new(patches: &'a PatchSequence, tokens: &'a [TokenId]) -> Self {
        Self { patches: &patches.data, n_patches: patches.len(), tokens, text_positions: None }
    }

    pub fn text_only(tokens: &'a [TokenId]) -> Self {
        Self { patches: &[], n_patches: 0, tokens, text_positions: None }
    }

    pub fn seq_len(&self) -> usize {
        self.n_patches + self.tokens.len()
    }

    pub(crate) fn text_position(&self, j: usize) -> usize {
        self.text_positions.map_or(j, |p| p[j])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerCache<T> {
    pub ln1: LnCache<T>,
    pub h1: Vec<T>,
    pub qkv: Vec<T>,
    /// `heads × L × L` attention weights.
    pub probs: Vec<T>,
    pub attn: Vec<T>,
    pub ln2: LnCache<T>,
    pub h2: Vec<T>,
    pub pre_act: Vec<T>,
    pub act: Vec<T>,
}

/// Every intermediate activation of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub(crate) layers: Vec<LayerCache<T>>,
    pub(crate) final_ln: LnCache<T>,
    /// Final layer-normed hidden states, `L × d`.
    pub hidden: Vec<T>,
    pub seq_len: usize,
}

impl<T: Real> Trace<T> {
    /// Attention weights of `layer`, `heads × L × L`.
    pub fn attention(&self, layer: usize) -> &[T] {
        &self.layers[layer].probs
    }

    /// Normalized (pre-affine) outputs of every layer norm, in evaluation order.
    pub fn normalized_activations(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.ln1.xhat.as_slice(), l.ln2.xhat.as_slice()])
            .chain(std::iter::once(self.final_ln.xhat.as_slice()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// `n_masked × vocab_size`.
    pub logits: Vec<T>,
    /// Final-layer hidden states for all positions, `seq_len × d`.
    pub hidden: Vec<T>,
    pub seq_len: usize,
    pub n_masked: usize,
}

impl<T: Real> ForwardOutput<T> {
    pub fn logits_row(&self, i: usize) -> &[T] {
        let v = self.logits.len() / self.n_masked.max(1);
        &self.logits[i * v..(i + 1) * v]
    }
}

pub(crate) fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: &[T], d: usize) -> (Vec<T>, LnCache<T>) {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::one() / T::lit(d as f64);
    let eps = T::lit(LN_EPS);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let xh = (row[i] - mean) * rs;
            xhat[r * d + i] = xh;
            y[r * d + i] = xh * gain[i] + bias[i];
        }
    }
    (y, LnCache { xhat, rstd })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu<T: Real>(u: T) -> T {
    let half = T::lit(0.5);
    half * u * (T::one() + (T::lit(GELU_C) * (u + T::lit(GELU_A) * u * u * u)).tanh())
}

pub(crate) fn gelu_grad<T: Real>(u: T) -> T {
    let half = T::lit(0.5);
    let t = (T::lit(GELU_C) * (u + T::lit(GELU_A) * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * u * u)
}

/// In-place numerically stable softmax of a row.
pub(crate) fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

fn check_finite<T: Real>(x: &[T], layer: usize, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { layer, what: what.to_string() })
    }
}

impl<T: Real> Model<T> {
    /// Input embedding sequence, `seq_len × d`, image first.
    pub fn embed(&self, input: &Input<'_>) -> Result<Vec<T>> {
        let c = &self.config;
        let l = &self.layout;
        let d = c.hidden_dim;
        if input.n_patches > c.max_patches {
            return Err(Error::Capacity { what: "image patches", len: input.n_patches, max: c.max_patches });
        }
        if input.patches.len() != input.n_patches * c.patch_dim {
            return Err(Error::Contract(format!(
                "{} patch values for {} patches of dim {}",
                input.patches.len(),
                input.n_patches,
                c.patch_dim
            )));
        }
        let n_text = input.tokens.len();
        if let Some(p) = input.text_positions {
            if p.len() != n_text {
                return Err(Error::Contract("text_positions length differs from token count".into()));
            }
        }
        let max_pos = (0..n_text).map(|j| input.text_position(j) + 1).max().unwrap_or(0);
        if n_text > c.max_text_len || max_pos > c.max_text_len {
            return Err(Error::Capacity { what: "text tokens", len: n_text.max(max_pos), max: c.max_text_len });
        }
        let seq_len = input.seq_len();
        let mut x = vec![T::zero(); seq_len * d];

        if input.n_patches > 0 {
            let patches: Vec<T> = input.patches.iter().map(|&v| T::lit(v as f64)).collect();
            matmul(&patches, self.p(&l.patch_weight), &mut x[..input.n_patches * d], input.n_patches, c.patch_dim, d, false);
            add_row_bias(&mut x[..input.n_patches * d], self.p(&l.patch_bias));
        }
        let pos_img = self.p(&l.image_position);
        let pos_txt = self.p(&l.text_position);
        let modality = self.p(&l.modality);
        let tok = self.p(&l.token_embedding);
        for i in 0..input.n_patches {
            let row = &mut x[i * d..(i + 1) * d];
            for k in 0..d {
                row[k] += pos_img[i * d + k] + modality[k];
            }
        }
        for (j, &id) in input.tokens.iter().enumerate() {
            let id = id as usize;
            if id >= c.vocab_size {
                return Err(Error::Vocabulary(format!("token id {id} outside vocabulary of {}", c.vocab_size)));
            }
            let pos = input.text_position(j);
            let row = &mut x[(input.n_patches + j) * d..(input.n_patches + j + 1) * d];
            for k in 0..d {
                row[k] = tok[id * d + k] + pos_txt[pos * d + k] + modality[d + k];
            }
        }
        Ok(x)
    }

    /// Runs the encoder on an embedded sequence, keeping every activation.
    pub fn trace(&self, embedded: &[T]) -> Result<Trace<T>> {
        let c = &self.config;
        let d = c.hidden_dim;
        let hd = c.mlp_dim();
        let heads = c.n_heads;
        let dh = c.head_dim();
        if !embedded.len().is_multiple_of(d) {
            return Err(Error::Contract("embedded sequence length is not a multiple of hidden_dim".into()));
        }
        let seq = embedded.len() / d;
        if seq == 0 {
            return Err(Error::Contract("empty sequence".into()));
        }
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut x = embedded.to_vec();
        let mut layers = Vec::with_capacity(c.n_layers);

        for (li, slots) in self.layout.layers.iter().enumerate() {
            let (h1, ln1) = layer_norm(&x, self.p(&slots.ln1_gain), self.p(&slots.ln1_bias), d);
            let mut qkv = vec![T::zero(); seq * 3 * d];
            matmul(&h1, self.p(&slots.qkv_weight), &mut qkv, seq, d, 3 * d, false);
            add_row_bias(&mut qkv, self.p(&slots.qkv_bias));

            let mut probs = vec![T::zero(); heads * seq * seq];
            let mut attn = vec![T::zero(); seq * d];
            let (rs3, ls) = ((3 * d) as isize, seq as isize);
            for h in 0..heads {
                let p = &mut probs[h * seq * seq..(h + 1) * seq * seq];
                // S = Q·Kᵀ·scale
                T::gemm_strided(seq, dh, seq, scale, &qkv[h * dh..], rs3, 1, &qkv[d + h * dh..], 1, rs3, T::zero(), p, ls, 1);
                for row in p.chunks_exact_mut(seq) {
                    softmax_row(row);
                }
                // O = P·V, written into this head's columns
                T::gemm_strided(seq, seq, dh, T::one(), p, ls, 1, &qkv[2 * d + h * dh..], rs3, 1, T::zero(), &mut attn[h * dh..], d as isize, 1);
            }
            let mut y = vec![T::zero(); seq * d];
            matmul(&attn, self.p(&slots.out_weight), &mut y, seq, d, d, false);
            add_row_bias(&mut y, self.p(&slots.out_bias));
            for (xv, yv) in x.iter_mut().zip(&y) {
                *xv += *yv;
            }

            let (h2, ln2) = layer_norm(&x, self.p(&slots.ln2_gain), self.p(&slots.ln2_bias), d);
            let mut pre_act = vec![T::zero(); seq * hd];
            matmul(&h2, self.p(&slots.fc1_weight), &mut pre_act, seq, d, hd, false);
            add_row_bias(&mut pre_act, self.p(&slots.fc1_bias));
            let act: Vec<T> = pre_act.iter().map(|&u| gelu(u)).collect();
            let mut z = vec![T::zero(); seq * d];
            matmul(&act, self.p(&slots.fc2_weight), &mut z, seq, hd, d, false);
            add_row_bias(&mut z, self.p(&slots.fc2_bias));
            for (xv, zv) in x.iter_mut().zip(&z) {
                *xv += *zv;
            }
            check_finite(&x, li, "residual stream")?;
            layers.push(LayerCache { ln1, h1, qkv, probs, attn, ln2, h2, pre_act, act });
        }
        let l = &self.layout;
        let (hidden, final_ln) = layer_norm(&x, self.p(&l.final_gain), self.p(&l.final_bias), d);
        check_finite(&hidden, c.n_layers, "final hidden state")?;
        Ok(Trace { layers, final_ln, hidden, seq_len: seq })
    }

    /// Output head applied to the given rows of the final hidden states.
    pub fn logits_at(&self, hidden: &[T], positions: &[usize]) -> Result<Vec<T>> {
        let d = self.config.hidden_dim;
        let v = self.config.vocab_size;
        let seq = hidden.len() / d;
        let mut rows = Vec::with_capacity(positions.len() * d);
        for &p in positions {
            if p >= seq {
                return Err(Error::Contract(format!("masked position {p} outside sequence of {seq}")));
            }
            rows.extend_from_slice(&hidden[p * d..(p + 1) * d]);
        }
        let mut logits = vec![T::zero(); positions.len() * v];
        matmul(&rows, self.p(&self.layout.head_weight), &mut logits, positions.len(), d, v, false);
        add_row_bias(&mut logits, self.p(&self.layout.head_bias));
        Ok(logits)
    }

    /// Encoder pass plus head logits at `mask_positions` (absolute sequence indices).
    pub fn forward(&self, embedded: &[T], mask_positions: &[usize]) -> Result<ForwardOutput<T>> {
        let trace = self.trace(embedded)?;
        let logits = self.logits_at(&trace.hidden, mask_positions)?;
        Ok(ForwardOutput { logits, hidden: trace.hidden, seq_len: trace.seq_len, n_masked: mask_positions.len() })
    }

    /// Embeds and runs the model; `text_mask_positions` index into the text tokens.
    pub fn run(&self, input: &Input<'_>, text_mask_positions: &[usize]) -> Result<ForwardOutput<T>> {
        let embedded = self.embed(input)?;
        let abs: Vec<usize> = text_mask_positions.iter().map(|p| p + input.n_patches).collect();
        self.forward(&embedded, &abs)
    }
}
