use std::ops::Range;

use super::forward::{gelu_grad, softmax_row, Input, LnCache};
use super::Model;
use crate::error::{Error, Result};
use crate::linalg::{col_sums_acc, matmul_nt, matmul_tn_acc, Real};
use crate::textgen::TokenId;

/// A masked training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// `n_patches × patch_dim`.
    pub patches: Vec<f32>,
    pub n_patches: usize,
    pub tokens: Vec<TokenId>,
    /// `(text position, true token)` for every masked position.
    pub targets: Vec<(usize, TokenId)>,
}

impl Example {
    pub fn input(&self) -> Input<'_> {
        Input { patches: &self.patches, n_patches: self.n_patches, tokens: &self.tokens, text_positions: None }
    }
}

fn two_mut<'a, T>(buf: &'a mut [T], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.end - b.start])
}

fn ln_backward<T: Real>(dy: &[T], cache: &LnCache<T>, gain: &[T], dgain: &mut [T], dbias: &mut [T], d: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    let inv_d = T::one() / T::lit(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for i in 0..d {
            dgain[i] += dyr[i] * xh[i];
            dbias[i] += dyr[i];
            dxhat[i] = dyr[i] * gain[i];
            m1 += dxhat[i];
            m2 += dxhat[i] * xh[i];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for i in 0..d {
            dx[r * d + i] = rs * (dxhat[i] - m1 - xh[i] * m2);
        }
    }
    dx
}

impl<T: Real> Model<T> {
    /// Forward and backward pass for one example. Adds `scale ·` ∂(Σ CE)/∂θ
    /// into `grads` and returns the unscaled cross-entropy sum.
    pub fn accumulate_example(&self, ex: &Example, scale: T, grads: &mut [T]) -> Result<T> {
        let c = &self.config;
        let l = &self.layout;
        let d = c.hidden_dim;
        let hd = c.mlp_dim();
        let v = c.vocab_size;
        let heads = c.n_heads;
        let dh = c.head_dim();
        assert_eq!(grads.len(), l.total, "gradient buffer does not match the parameter layout");

        let input = ex.input();
        let embedded = self.embed(&input)?;
        let trace = self.trace(&embedded)?;
        let seq = trace.seq_len;
        let positions: Vec<usize> = ex.targets.iter().map(|&(p, _)| p + ex.n_patches).collect();
        let mut logits = self.logits_at(&trace.hidden, &positions)?;

        // cross-entropy and its gradient w.r.t. the logits
        let mut loss = T::zero();
        for (row, &(_, target)) in logits.chunks_exact_mut(v).zip(&ex.targets) {
            let t = target as usize;
            if t >= v {
                return Err(Error::Vocabulary(format!("target id {t} outside vocabulary of {v}")));
            }
            softmax_row(row);
            loss -= row[t].max(T::min_positive_value()).ln();
            row[t] -= T::one();
            for x in row.iter_mut() {
                *x *= scale;
            }
        }
        let dlogits = logits;

        // output head
        let n_m = positions.len();
        let mut rows = Vec::with_capacity(n_m * d);
        for &p in &positions {
            rows.extend_from_slice(&trace.hidden[p * d..(p + 1) * d]);
        }
        matmul_tn_acc(&rows, &dlogits, &mut grads[l.head_weight.clone()], n_m, d, v);
        col_sums_acc(&dlogits, &mut grads[l.head_bias.clone()]);
        let mut drows = vec![T::zero(); n_m * d];
        matmul_nt(&dlogits, self.p(&l.head_weight), &mut drows, n_m, v, d, false);
        let mut dhidden = vec![T::zero(); seq * d];
        for (i, &p) in positions.iter().enumerate() {
            for k in 0..d {
                dhidden[p * d + k] += drows[i * d + k];
            }
        }

        let (dg, db) = two_mut(grads, &l.final_gain, &l.final_bias);
        let mut dx = ln_backward(&dhidden, &trace.final_ln, self.p(&l.final_gain), dg, db, d);

        let scale_attn = T::one() / T::lit(dh as f64).sqrt();
        let (rs3, ls, ds) = ((3 * d) as isize, seq as isize, d as isize);
        for (slots, cache) in l.layers.iter().zip(&trace.layers).rev() {
            // feed-forward block
            matmul_tn_acc(&cache.act, &dx, &mut grads[slots.fc2_weight.clone()], seq, hd, d);
            col_sums_acc(&dx, &mut grads[slots.fc2_bias.clone()]);
            let mut dpre = vec![T::zero(); seq * hd];
            matmul_nt(&dx, self.p(&slots.fc2_weight), &mut dpre, seq, d, hd, false);
            for (g, &u) in dpre.iter_mut().zip(&cache.pre_act) {
                *g *= gelu_grad(u);
            }
            matmul_tn_acc(&cache.h2, &dpre, &mut grads[slots.fc1_weight.clone()], seq, d, hd);
            col_sums_acc(&dpre, &mut grads[slots.fc1_bias.clone()]);
            let mut dh2 = vec![T::zero(); seq * d];
            matmul_nt(&dpre, self.p(&slots.fc1_weight), &mut dh2, seq, hd, d, false);
            let (dg, db) = two_mut(grads, &slots.ln2_gain, &slots.ln2_bias);
            let dres = ln_backward(&dh2, &cache.ln2, self.p(&slots.ln2_gain), dg, db, d);
            for (a, b) in dx.iter_mut().zip(&dres) {
                *a += *b;
            }

            // attention block
            matmul_tn_acc(&cache.attn, &dx, &mut grads[slots.out_weight.clone()], seq, d, d);
            col_sums_acc(&dx, &mut grads[slots.out_bias.clone()]);
            let mut dattn = vec![T::zero(); seq * d];
            matmul_nt(&dx, self.p(&slots.out_weight), &mut dattn, seq, d, d, false);

            let mut dqkv = vec![T::zero(); seq * 3 * d];
            let mut dp = vec![T::zero(); seq * seq];
            for h in 0..heads {
                let p = &cache.probs[h * seq * seq..(h + 1) * seq * seq];
                // dP = dO·Vᵀ
                T::gemm_strided(seq, dh, seq, T::one(), &dattn[h * dh..], ds, 1, &cache.qkv[2 * d + h * dh..], 1, rs3, T::zero(), &mut dp, ls, 1);
                // dV = Pᵀ·dO
                T::gemm_strided(seq, seq, dh, T::one(), p, 1, ls, &dattn[h * dh..], ds, 1, T::zero(), &mut dqkv[2 * d + h * dh..], rs3, 1);
                // softmax backward, in place: dS = P ⊙ (dP − Σ_j dP·P)
                for (dprow, prow) in dp.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                    let dot: T = dprow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                    for (a, &b) in dprow.iter_mut().zip(prow) {
                        *a = b * (*a - dot);
                    }
                }
                // dQ = dS·K·scale, dK = dSᵀ·Q·scale
                T::gemm_strided(seq, seq, dh, scale_attn, &dp, ls, 1, &cache.qkv[d + h * dh..], rs3, 1, T::zero(), &mut dqkv[h * dh..], rs3, 1);
                T::gemm_strided(seq, seq, dh, scale_attn, &dp, 1, ls, &cache.qkv[h * dh..], rs3, 1, T::zero(), &mut dqkv[d + h * dh..], rs3, 1);
            }
            matmul_tn_acc(&cache.h1, &dqkv, &mut grads[slots.qkv_weight.clone()], seq, d, 3 * d);
            col_sums_acc(&dqkv, &mut grads[slots.qkv_bias.clone()]);
            let mut dh1 = vec![T::zero(); seq * d];
            matmul_nt(&dqkv, self.p(&slots.qkv_weight), &mut dh1, seq, 3 * d, d, false);
            let (dg, db) = two_mut(grads, &slots.ln1_gain, &slots.ln1_bias);
            let dres = ln_backward(&dh1, &cache.ln1, self.p(&slots.ln1_gain), dg, db, d);
            for (a, b) in dx.iter_mut().zip(&dres) {
                *a += *b;
            }
        }

        // embeddings
        let np = ex.n_patches;
        if np > 0 {
            let patches: Vec<T> = ex.patches.iter().map(|&x| T::lit(x as f64)).collect();
            matmul_tn_acc(&patches, &dx[..np * d], &mut grads[l.patch_weight.clone()], np, c.patch_dim, d);
            col_sums_acc(&dx[..np * d], &mut grads[l.patch_bias.clone()]);
            let gpos = &mut grads[l.image_position.clone()];
            for k in 0..np * d {
                gpos[k] += dx[k];
            }
            col_sums_acc(&dx[..np * d], &mut grads[l.modality.start..l.modality.start + d]);
        }
        for (j, &id) in ex.tokens.iter().enumerate() {
            let row = &dx[(np + j) * d..(np + j + 1) * d];
            let id = id as usize;
            let pos = input.text_position(j);
            for k in 0..d {
                grads[l.token_embedding.start + id * d + k] += row[k];
                grads[l.text_position.start + pos * d + k] += row[k];
                grads[l.modality.start + d + k] += row[k];
            }
        }
        Ok(loss)
    }

    /// Mean cross-entropy over every masked position of the batch, and its gradient.
    pub fn loss_and_grads(&self, batch: &[Example]) -> Result<(T, Vec<T>)> {
        let mut grads = vec![T::zero(); self.layout.total];
        let loss = self.accumulate_batch(batch, &mut grads)?;
        Ok((loss, grads))
    }

    /// Like [`Model::loss_and_grads`], accumulating into an existing buffer.
    pub fn accumulate_batch(&self, batch: &[Example], grads: &mut [T]) -> Result<T> {
        let total: usize = batch.iter().map(|e| e.targets.len()).sum();
        if total == 0 {
            return Err(Error::Contract("batch has no masked positions".into()));
        }
        let scale = T::one() / T::lit(total as f64);
        let mut sum = T::zero();
        for ex in batch {
            if ex.targets.is_empty() {
                continue;
            }
            sum += self.accumulate_example(ex, scale, grads)?;
        }
        Ok(sum * scale)
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, batch: &[Example]) -> Result<T> {
        let total: usize = batch.iter().map(|e| e.targets.len()).sum();
        if total == 0 {
            return Err(Error::Contract("batch has no masked positions".into()));
        }
        let v = self.config.vocab_size;
        let mut sum = T::zero();
        for ex in batch {
            if ex.targets.is_empty() {
                continue;
            }
            let positions: Vec<usize> = ex.targets.iter().map(|&(p, _)| p).collect();
            let out = self.run(&ex.input(), &positions)?;
            for (row, &(_, t)) in out.logits.chunks_exact(v).zip(&ex.targets) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
                sum += lse - row[t as usize];
            }
        }
        Ok(sum / T::lit(total as f64))
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::model::ModelConfig;

    fn toy(d: usize, layers: usize, heads: usize) -> (Model<f64>, Example) {
        let cfg = ModelConfig {
            hidden_dim: d,
            n_layers: layers,
            n_heads: heads,
            vocab_size: 7,
            patch_dim: 6,
            max_patches: 3,
            max_text_len: 6,
            mlp_ratio: 2,
            seed: 11,
        };
        let mut m = Model::<f64>::new(cfg).unwrap();
        // move away from the init so every block contributes
        let mut rng = crate::rng::stream(99, &[d as u64, layers as u64, heads as u64]);
        for p in m.params.iter_mut() {
            *p += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let ex = Example {
            patches: (0..18).map(|_| rng.gen::<f32>()).collect(),
            n_patches: 3,
            tokens: vec![3, 1, 5, 2, 1],
            targets: vec![(1, 4), (4, 6)],
        };
        (m, ex)
    }

    fn check_gradients(d: usize, layers: usize, heads: usize) {
        let (mut m, ex) = toy(d, layers, heads);
        let batch = [ex];
        let (_, grads) = m.loss_and_grads(&batch).unwrap();
        let eps = 1e-3;
        let mut worst = 0.0f64;
        for i in 0..m.params.len() {
            let orig = m.params[i];
            m.params[i] = orig + eps;
            let up = m.loss(&batch).unwrap();
            m.params[i] = orig - eps;
            let down = m.loss(&batch).unwrap();
            m.params[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            // floor keeps near-zero entries from dividing truncation noise by ~0
            let err = (grads[i] - numeric).abs() / grads[i].abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(err);
        }
        assert!(worst <= 1e-3, "d={d} layers={layers} heads={heads}: worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (d, l, h) in [(8, 1, 1), (8, 2, 2), (16, 1, 2), (16, 2, 1)] {
            check_gradients(d, l, h);
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let (mut m, ex) = toy(8, 1, 1);
        let hw = m.layout.head_weight.clone();
        let hb = m.layout.head_bias.clone();
        m.params[hw].iter_mut().for_each(|v| *v = 0.0);
        m.params[hb].iter_mut().for_each(|v| *v = 0.0);
        let loss = m.loss(&[ex]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_keeps_loss() {
        let (m, ex) = toy(8, 2, 2);
        let (a, ga) = m.loss_and_grads(std::slice::from_ref(&ex)).unwrap();
        let (b, gb) = m.loss_and_grads(&[ex.clone(), ex]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(ga.iter().zip(&gb).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn no_masked_positions_is_a_contract_violation() {
        let (m, mut ex) = toy(8, 1, 1);
        ex.targets.clear();
        assert!(matches!(m.loss_and_grads(&[ex]), Err(Error::Contract(_))));
    }
}
