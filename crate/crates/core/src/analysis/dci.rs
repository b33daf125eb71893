//! Disentanglement and completeness from a probe importance matrix.
//!
//! Importances come from one L1-regularized multinomial logistic probe per
//! factor, fit on standardized representation dimensions. `R[j][k]` is the sum
//! over classes of `|w|` for dimension `j` in the probe of factor `k`; columns
//! are then normalized to sum to one.

use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::latent::Attribute;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dci {
    pub disentanglement: f64,
    pub completeness: f64,
    /// `dims × factors`.
    pub importance: Vec<Vec<f64>>,
    pub factors: Vec<Attribute>,
    pub probe: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l1: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { l1: 1e-3, max_iters: 500, tolerance: 1e-7 }
    }
}

/// Entropy of `p` with logarithm base `base`; zero entries contribute nothing.
fn entropy_base(p: impl Iterator<Item = f64>, base: usize) -> f64 {
    if base <= 1 {
        return 0.0;
    }
    let ln_base = (base as f64).ln();
    -p.filter(|&x| x > 0.0).map(|x| x * x.ln() / ln_base).sum::<f64>()
}

/// Normalizes each column of a non-negative matrix to sum to one. All-zero
/// columns stay zero.
pub fn normalize_columns(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = r.first().map_or(0, Vec::len);
    let sums: Vec<f64> = (0..cols).map(|k| r.iter().map(|row| row[k]).sum()).collect();
    r.iter()
        .map(|row| row.iter().zip(&sums).map(|(&v, &s)| if s > 0.0 { v / s } else { 0.0 }).collect())
        .collect()
}

/// `(D, C)` for an importance matrix with dimensions on rows and factors on columns.
pub fn disentanglement_completeness(r: &[Vec<f64>]) -> Result<(f64, f64)> {
    let dims = r.len();
    let factors = r.first().map_or(0, Vec::len);
    if dims == 0 || factors == 0 || r.iter().any(|row| row.len() != factors) {
        return Err(Error::param("importance", "matrix must be non-empty and rectangular"));
    }
    if r.iter().flatten().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::param("importance", "entries must be finite and non-negative"));
    }
    let total: f64 = r.iter().flatten().sum();
    if total == 0.0 {
        return Ok((0.0, 0.0));
    }

    let mut d = 0.0;
    for row in r {
        let row_sum: f64 = row.iter().sum();
        if row_sum == 0.0 {
            continue;
        }
        let h = entropy_base(row.iter().map(|v| v / row_sum), factors);
        d += (row_sum / total) * (1.0 - h);
    }

    let mut c = 0.0;
    for k in 0..factors {
        let col_sum: f64 = r.iter().map(|row| row[k]).sum();
        if col_sum == 0.0 {
            continue;
        }
        let h = entropy_base(r.iter().map(|row| row[k] / col_sum), dims);
        c += (col_sum / total) * (1.0 - h);
    }
    Ok((d.clamp(0.0, 1.0), c.clamp(0.0, 1.0)))
}

/// Standardizes columns of a row-major `n × d` matrix; constant columns become zero.
fn standardize(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for j in 0..d {
        let mean = (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            out[i * d + j] = if sd > 1e-12 { (x[i * d + j] - mean) / sd } else { 0.0 };
        }
    }
    out
}

/// Weights (`d × classes`, row-major) of an L1-regularized multinomial
/// logistic regression fit by accelerated proximal gradient (FISTA). The
/// intercept is unpenalized.
pub fn fit_l1_multinomial(
    x: &[f64],
    labels: &[usize],
    n: usize,
    d: usize,
    classes: usize,
    cfg: &ProbeConfig,
    factor: &str,
) -> Result<Vec<f64>> {
    let fail = |why: String| Error::ProbeDivergence { factor: factor.to_string(), reason: why };
    // Step size from the largest eigenvalue of XᵀX/n (power iteration);
    // the softmax cross-entropy Hessian is bounded by ½·XᵀX/n ⊗ I.
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda_max = 1.0;
    for _ in 0..50 {
        let xv: Vec<f64> = (0..n).map(|i| (0..d).map(|j| x[i * d + j] * v[j]).sum()).collect();
        let mut w = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                w[j] += x[i * d + j] * xv[i];
            }
        }
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt() / n as f64;
        if norm == 0.0 {
            break;
        }
        lambda_max = norm;
        let inv = 1.0 / (norm * n as f64);
        v = w.into_iter().map(|a| a * inv).collect();
    }
    let step = 1.0 / (0.5 * lambda_max.max(1e-12) + 1e-12);

    let nw = d * classes;
    let mut w = vec![0.0; nw];
    let mut b = vec![0.0; classes];
    let mut w_prev = w.clone();
    let mut b_prev = b.clone();
    let mut yw = w.clone();
    let mut yb = b.clone();
    let mut t = 1.0f64;
    let mut prev_obj = f64::INFINITY;
    let mut logits = vec![0.0; classes];

    let objective_and_grad = |w: &[f64], b: &[f64], gw: &mut [f64], gb: &mut [f64], logits: &mut [f64]| -> f64 {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for i in 0..n {
            let xi = &x[i * d..(i + 1) * d];
            logits.copy_from_slice(b);
            for (j, &xv) in xi.iter().enumerate() {
                if xv != 0.0 {
                    for (l, &wv) in logits.iter_mut().zip(&w[j * classes..(j + 1) * classes]) {
                        *l += xv * wv;
                    }
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            loss += z.ln() + max - logits[labels[i]];
            for c in 0..classes {
                let p = (logits[c] - max).exp() / z - if c == labels[i] { 1.0 } else { 0.0 };
                gb[c] += p / n as f64;
                for (j, &xv) in xi.iter().enumerate() {
                    gw[j * classes + c] += p * xv / n as f64;
                }
            }
        }
        loss / n as f64
    };

    let mut gw = vec![0.0; nw];
    let mut gb = vec![0.0; classes];
    for _ in 0..cfg.max_iters {
        let _ = objective_and_grad(&yw, &yb, &mut gw, &mut gb, &mut logits);
        for k in 0..nw {
            let z = yw[k] - step * gw[k];
            let thr = step * cfg.l1;
            w[k] = z.signum() * (z.abs() - thr).max(0.0);
        }
        for c in 0..classes {
            b[c] = yb[c] - step * gb[c];
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        for k in 0..nw {
            yw[k] = w[k] + momentum * (w[k] - w_prev[k]);
        }
        for c in 0..classes {
            yb[c] = b[c] + momentum * (b[c] - b_prev[c]);
        }
        t = t_next;
        w_prev.copy_from_slice(&w);
        b_prev.copy_from_slice(&b);

        let obj = objective_and_grad(&w, &b, &mut gw, &mut gb, &mut logits)
            + cfg.l1 * w.iter().map(|v| v.abs()).sum::<f64>();
        if !obj.is_finite() {
            return Err(fail(format!("objective became {obj}")));
        }
        if (prev_obj - obj).abs() <= cfg.tolerance * obj.abs().max(1.0) {
            return Ok(w);
        }
        prev_obj = obj;
    }
    Ok(w)
}

/// Probe importance matrix (`dims × factors`), column-normalized.
pub fn importance_matrix(set: &EmbeddingSet, factors: &[Attribute], cfg: &ProbeConfig) -> Result<Vec<Vec<f64>>> {
    let n = set.len();
    let d = set.dim;
    let raw: Vec<f64> = set.records.iter().flat_map(|r| r.vector.iter().map(|&v| v as f64)).collect();
    let x = standardize(&raw, n, d);
    let mut r = vec![vec![0.0; factors.len()]; d];
    for (k, &factor) in factors.iter().enumerate() {
        // relabel observed values densely
        let mut values: Vec<usize> = set.records.iter().map(|rec| rec.value(factor)).collect();
        values.sort_unstable();
        values.dedup();
        let labels: Vec<usize> =
            set.records.iter().map(|rec| values.binary_search(&rec.value(factor)).expect("present")).collect();
        if values.len() < 2 {
            return Err(Error::Coverage(vec![format!("{factor} takes a single value")]));
        }
        let w = fit_l1_multinomial(&x, &labels, n, d, values.len(), cfg, factor.label())?;
        for (j, row) in r.iter_mut().enumerate() {
            row[k] = w[j * values.len()..(j + 1) * values.len()].iter().map(|v| v.abs()).sum();
        }
    }
    Ok(normalize_columns(&r))
}

pub const MIN_RECORDS: usize = 200;

pub fn dci(set: &EmbeddingSet, factors: &[Attribute], cfg: &ProbeConfig) -> Result<Dci> {
    if set.len() < MIN_RECORDS {
        return Err(Error::param("embeddings", format!("{} records, need at least {MIN_RECORDS}", set.len())));
    }
    let importance = importance_matrix(set, factors, cfg)?;
    let (disentanglement, completeness) = disentanglement_completeness(&importance)?;
    Ok(Dci {
        disentanglement,
        completeness,
        importance,
        factors: factors.to_vec(),
        probe: format!("l1-multinomial-logistic(l1={}, fista, max_iters={})", cfg.l1, cfg.max_iters),
    })
}
