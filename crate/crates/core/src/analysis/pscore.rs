//! Parallelism score: how consistently a change of one latent attribute maps
//! to the same direction in representation space across contexts.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::latent::Attribute;
use crate::rng;

/// Which differences are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingOrder {
    /// `V_A = v(o1) − v(o1′)`, `V_B = v(o2) − v(o2′)`: each difference realizes
    /// the change in the studied attribute.
    #[default]
    AcrossStudied,
    /// `V_A = v(o1) − v(o2)`, `V_B = v(o1′) − v(o2′)`: each difference realizes
    /// the change in the secondary attribute.
    WithinPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PScoreOptions {
    pub n_pairs: usize,
    pub n_runs: usize,
    pub order: PairingOrder,
    pub seed: u64,
    /// Redraw budget per requested trial.
    pub redraws_per_trial: usize,
}

impl Default for PScoreOptions {
    fn default() -> Self {
        Self { n_pairs: 3_500, n_runs: 5, order: PairingOrder::AcrossStudied, seed: 0, redraws_per_trial: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PScore {
    pub mean: f64,
    pub stderr: f64,
    pub run_means: Vec<f64>,
    pub studied: Attribute,
    pub secondary: Attribute,
    pub order: PairingOrder,
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn diff(a: &[f32], b: &[f32]) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| x as f64 - y as f64).collect()
}

/// Mean and standard error of the mean (sample standard deviation / √n).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

type Cells = BTreeMap<(usize, usize), Vec<usize>>;

fn coverage_error(cells: &Cells, studied: Attribute, secondary: Attribute) -> Error {
    let s_vals: BTreeSet<usize> = cells.keys().map(|k| k.0).collect();
    let c_vals: BTreeSet<usize> = cells.keys().map(|k| k.1).collect();
    let mut missing = Vec::new();
    for &s in &s_vals {
        for &c in &c_vals {
            if !cells.contains_key(&(s, c)) {
                missing.push(format!("{studied}={s}/{secondary}={c}"));
            }
        }
    }
    if missing.is_empty() {
        missing.push(format!(
            "need >= 2 values of each attribute, have {} {studied} and {} {secondary}",
            s_vals.len(),
            c_vals.len()
        ));
    }
    Error::Coverage(missing)
}

pub fn pscore(set: &EmbeddingSet, studied: Attribute, secondary: Attribute, opts: &PScoreOptions) -> Result<PScore> {
    if studied == secondary {
        return Err(Error::param("secondary", "must differ from the studied attribute"));
    }
    if opts.n_pairs == 0 || opts.n_runs == 0 {
        return Err(Error::param("n_pairs", "n_pairs and n_runs must be positive"));
    }
    let mut cells: Cells = BTreeMap::new();
    for (i, r) in set.records.iter().enumerate() {
        cells.entry((r.value(studied), r.value(secondary))).or_default().push(i);
    }
    // studied value -> records, for drawing the base pair partner
    let mut by_studied: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in set.records.iter().enumerate() {
        by_studied.entry(r.value(studied)).or_default().push(i);
    }
    let s_values: Vec<usize> = by_studied.keys().copied().collect();
    let feasible = cells.keys().any(|&(s1, c1)| {
        cells.keys().any(|&(s, c2)| {
            s == s1 && c2 != c1 && s_values.iter().any(|&s2| s2 != s1 && cells.contains_key(&(s2, c1)) && cells.contains_key(&(s2, c2)))
        })
    });
    if !feasible {
        return Err(coverage_error(&cells, studied, secondary));
    }

    let mut run_means = Vec::with_capacity(opts.n_runs);
    for run in 0..opts.n_runs {
        let mut rng = rng::stream(opts.seed, &[rng::TAG_PSCORE, run as u64]);
        let mut total = 0.0;
        let mut done = 0usize;
        let budget = opts.n_pairs.saturating_mul(opts.redraws_per_trial.max(1));
        let mut attempts = 0usize;
        while done < opts.n_pairs {
            attempts += 1;
            if attempts > budget {
                return Err(coverage_error(&cells, studied, secondary));
            }
            let o1 = rng.gen_range(0..set.records.len());
            let (s1, c1) = (set.records[o1].value(studied), set.records[o1].value(secondary));
            let partners = &by_studied[&s1];
            let o2 = partners[rng.gen_range(0..partners.len())];
            let c2 = set.records[o2].value(secondary);
            if c2 == c1 {
                continue;
            }
            let targets: Vec<usize> = s_values
                .iter()
                .copied()
                .filter(|&s2| s2 != s1 && cells.contains_key(&(s2, c1)) && cells.contains_key(&(s2, c2)))
                .collect();
            let Some(&s2) = targets.choose(&mut rng) else { continue };
            let o1p = *cells[&(s2, c1)].choose(&mut rng).expect("non-empty cell");
            let o2p = *cells[&(s2, c2)].choose(&mut rng).expect("non-empty cell");
            let v = |i: usize| set.records[i].vector.as_slice();
            let (va, vb) = match opts.order {
                PairingOrder::AcrossStudied => (diff(v(o1), v(o1p)), diff(v(o2), v(o2p))),
                PairingOrder::WithinPair => (diff(v(o1), v(o2)), diff(v(o1p), v(o2p))),
            };
            total += cosine(&va, &vb);
            done += 1;
        }
        run_means.push(total / opts.n_pairs as f64);
    }
    let (mean, stderr) = mean_stderr(&run_means);
    Ok(PScore { mean, stderr, run_means, studied, secondary, order: opts.order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::embeddings::EmbeddingMeta;
    use crate::scenegen::Subset;

    fn meta(shape: usize, color: usize) -> EmbeddingMeta {
        EmbeddingMeta {
            subset: Subset::TestId,
            sample_id: 0,
            entity_index: 0,
            attributes: [shape, color, 0, 0],
            masked: Attribute::Shape,
        }
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 0.0], &[0.0, 1.0])).abs() < 1e-15);
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn mean_stderr_hand_cases() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        // sample sd = 1, se = 1/√3
        assert!((se - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[0.4]), (0.4, 0.0));
    }

    #[test]
    fn missing_cells_are_reported() {
        let mut set = EmbeddingSet::new(2);
        set.push(vec![1.0, 0.0], meta(1, 0)).unwrap();
        set.push(vec![0.0, 1.0], meta(1, 1)).unwrap();
        set.push(vec![1.0, 1.0], meta(2, 0)).unwrap();
        let err = pscore(&set, Attribute::Shape, Attribute::Color, &PScoreOptions::default()).unwrap_err();
        match err {
            Error::Coverage(cells) => assert_eq!(cells, vec!["shape=2/color=1".to_string()]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn within_pair_order_differs() {
        // studied direction is consistent, secondary direction flips with the studied value
        let mut set = EmbeddingSet::new(2);
        set.push(vec![0.0, 0.0], meta(1, 0)).unwrap();
        set.push(vec![0.0, 1.0], meta(1, 1)).unwrap();
        set.push(vec![1.0, 0.0], meta(2, 0)).unwrap();
        set.push(vec![1.0, -1.0], meta(2, 1)).unwrap();
        let opts = PScoreOptions { n_pairs: 200, n_runs: 2, ..PScoreOptions::default() };
        let across = pscore(&set, Attribute::Shape, Attribute::Color, &opts).unwrap();
        let within =
            pscore(&set, Attribute::Shape, Attribute::Color, &PScoreOptions { order: PairingOrder::WithinPair, ..opts }).unwrap();
        assert!((within.mean + 1.0).abs() < 1e-12);
        assert!(across.mean > 0.0 && across.mean < 1.0);
    }
}
