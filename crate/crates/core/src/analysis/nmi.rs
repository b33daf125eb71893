//! Normalized mutual information between two categorical variables, from counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contingency table of two categorical variables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointTable {
    pub row_var: String,
    pub col_var: String,
    pub counts: Vec<Vec<u64>>,
}

impl JointTable {
    pub fn zeros(row_var: &str, col_var: &str, rows: usize, cols: usize) -> Self {
        Self { row_var: row_var.into(), col_var: col_var.into(), counts: vec![vec![0; cols]; rows] }
    }

    pub fn from_counts(row_var: &str, col_var: &str, counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != cols) {
            return Err(Error::param("table", "ragged rows"));
        }
        Ok(Self { row_var: row_var.into(), col_var: col_var.into(), counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_marginals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_marginals(&self) -> Vec<u64> {
        let cols = self.counts.first().map_or(0, Vec::len);
        (0..cols).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn transposed(&self) -> Self {
        let cols = self.counts.first().map_or(0, Vec::len);
        Self {
            row_var: self.col_var.clone(),
            col_var: self.row_var.clone(),
            counts: (0..cols).map(|j| self.counts.iter().map(|r| r[j]).collect()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Arithmetic,
    Geometric,
    Min,
    Max,
}

impl Normalization {
    pub fn mean(self, a: f64, b: f64) -> f64 {
        match self {
            Normalization::Arithmetic => 0.5 * (a + b),
            Normalization::Geometric => (a * b).sqrt(),
            Normalization::Min => a.min(b),
            Normalization::Max => a.max(b),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "arithmetic" => Ok(Self::Arithmetic),
            "geometric" => Ok(Self::Geometric),
            "min" => Ok(Self::Min),
            "max" => Ok(Self::Max),
            _ => Err(Error::param("normalization", format!("unknown normalization `{s}`"))),
        }
    }
}

fn entropy(counts: &[u64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information (nats) and the two marginal entropies.
pub fn mutual_information(table: &JointTable) -> Result<(f64, f64, f64)> {
    let total = table.total();
    if total == 0 {
        return Err(Error::param("table", "joint table has zero total count"));
    }
    let n = total as f64;
    let rows = table.row_marginals();
    let cols = table.col_marginals();
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            // p_ij · ln(p_ij / (p_i p_j)) = (c/n) · ln(c·n / (r_i c_j))
            mi += c as f64 / n * ((c as f64 * n) / (rows[i] as f64 * cols[j] as f64)).ln();
        }
    }
    Ok((mi.max(0.0), entropy(&rows, n), entropy(&cols, n)))
}

/// `I(X;Y) / mean(H(X), H(Y))`, clamped to [0, 1].
///
/// When the normalizer is zero: 1 if both variables are constant (the
/// degenerate table is trivially a bijection), otherwise 0.
pub fn nmi(table: &JointTable, normalization: Normalization) -> Result<f64> {
    let (mi, hx, hy) = mutual_information(table)?;
    let denom = normalization.mean(hx, hy);
    if denom <= 0.0 {
        return Ok(if hx == 0.0 && hy == 0.0 { 1.0 } else { 0.0 });
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(counts: Vec<Vec<u64>>) -> JointTable {
        JointTable::from_counts("x", "y", counts).unwrap()
    }

    #[test]
    fn independent_uniform_is_zero() {
        assert_eq!(nmi(&t(vec![vec![5; 4]; 4]), Normalization::Arithmetic).unwrap(), 0.0);
    }

    #[test]
    fn bijection_is_one() {
        let mut c = vec![vec![0; 4]; 4];
        for (i, row) in c.iter_mut().enumerate() {
            row[(i + 1) % 4] = 3 + i as u64;
        }
        for norm in [Normalization::Arithmetic, Normalization::Geometric, Normalization::Min, Normalization::Max] {
            let v = nmi(&t(c.clone()), norm).unwrap();
            assert!((v - 1.0).abs() < 1e-12, "{norm:?}: {v}");
        }
    }

    #[test]
    fn two_by_two_example() {
        // I = (2/3)ln(4/3) + (1/3)ln(2/3) = 0.0566330 nats, H(X) = H(Y) = ln 2.
        let v = nmi(&t(vec![vec![2, 1], vec![1, 2]]), Normalization::Arithmetic).unwrap();
        assert!((v - 0.081_704_165_945_510_4).abs() < 1e-12, "{v}");
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(nmi(&t(vec![vec![0, 0]]), Normalization::Arithmetic).is_err());
    }

    #[test]
    fn degenerate_conventions() {
        assert_eq!(nmi(&t(vec![vec![7]]), Normalization::Arithmetic).unwrap(), 1.0);
        assert_eq!(nmi(&t(vec![vec![3, 4]]), Normalization::Min).unwrap(), 0.0);
        assert_eq!(nmi(&t(vec![vec![3, 4]]), Normalization::Arithmetic).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn symmetric_relabel_and_scale_invariant(
            cells in proptest::collection::vec(0u64..20, 12),
            k in 1u64..5,
        ) {
            prop_assume!(cells.iter().sum::<u64>() > 0);
            let table = t(cells.chunks(4).map(<[u64]>::to_vec).collect());
            let base = nmi(&table, Normalization::Arithmetic).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            let transposed = nmi(&table.transposed(), Normalization::Arithmetic).unwrap();
            prop_assert!((base - transposed).abs() < 1e-12);
            let mut relabeled = table.clone();
            relabeled.counts.reverse();
            for row in &mut relabeled.counts {
                row.rotate_left(1);
            }
            prop_assert!((base - nmi(&relabeled, Normalization::Arithmetic).unwrap()).abs() < 1e-12);
            let mut scaled = table.clone();
            for row in &mut scaled.counts {
                for c in row.iter_mut() {
                    *c *= k;
                }
            }
            prop_assert!((base - nmi(&scaled, Normalization::Arithmetic).unwrap()).abs() < 1e-12);
        }
    }
}
