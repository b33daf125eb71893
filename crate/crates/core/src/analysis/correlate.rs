use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided, from Student's t with n − 2 degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation with a two-sided p-value.
pub fn correlate(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::param("ys", format!("length {} differs from xs length {}", ys.len(), xs.len())));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::param("xs", format!("need at least 3 points, got {n}")));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance in one of the series".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if 1.0 - r.abs() < 1e-15 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Correlation { r, p_value, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_correlations() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let c = correlate(&xs, &xs).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
        assert!(c.p_value < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((correlate(&xs, &neg).unwrap().r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_case() {
        // r = 0.8 exactly; t = 0.8·√(3/0.36) = 2.3094, two-sided p with 3 df
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [1.0, 3.0, 2.0, 5.0, 4.0];
        let c = correlate(&xs, &ys).unwrap();
        assert!((c.r - 0.8).abs() < 1e-12);
        assert!((c.p_value - 0.104_088).abs() < 1e-5, "{}", c.p_value);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(correlate(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(correlate(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(correlate(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }
}
