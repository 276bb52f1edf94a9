use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilliamsResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Williams' t-test for two dependent correlations sharing one variable.
///
/// Variables 1 and 2 are the competing methods and variable 3 the reference:
/// `r13` and `r23` are each method's correlation with the reference, `r12`
/// the correlation between the methods. `t > 0` when method 1 correlates
/// more strongly with the reference.
pub fn williams_test(r13: f64, r23: f64, r12: f64, n: usize) -> Result<WilliamsResult> {
    for (name, r) in [("r13", r13), ("r23", r23), ("r12", r12)] {
        if !(r.is_finite() && r.abs() <= 1.0) {
            return Err(Error::Validation(format!("{name} = {r} is not a correlation")));
        }
    }
    if n < 4 {
        return Err(Error::Validation(format!("need n >= 4 subjects, got {n}")));
    }
    let det = 1.0 - r12 * r12 - r13 * r13 - r23 * r23 + 2.0 * r12 * r13 * r23;
    if det <= 0.0 {
        return Err(Error::Degenerate(format!(
            "correlation matrix is singular or not positive definite (|R| = {det})"
        )));
    }
    let nf = n as f64;
    let rbar = (r13 + r23) / 2.0;
    let denom = 2.0 * (nf - 1.0) / (nf - 3.0) * det + rbar * rbar * (1.0 - r12).powi(3);
    let t = (r13 - r23) * ((nf - 1.0) * (1.0 + r12) / denom).sqrt();
    let df = nf - 3.0;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Validation(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(WilliamsResult { t, df, p })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_correlations_give_zero() {
        let w = williams_test(0.7, 0.7, 0.5, 100).unwrap();
        assert_eq!(w.t, 0.0);
        assert!((w.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn antisymmetric_in_methods() {
        let a = williams_test(0.75, 0.63, 0.7, 405).unwrap();
        let b = williams_test(0.63, 0.75, 0.7, 405).unwrap();
        assert!((a.t + b.t).abs() < 1e-12);
        assert_eq!(a.p, b.p);
        assert_eq!(a.df, 402.0);
    }

    #[test]
    fn hand_computed_value() {
        // |R| = 1 - .49 - .5625 - .3969 + 2(.7)(.75)(.63) = 0.2121
        // denom = 2 (404/402) 0.2121 + 0.69^2 (0.3)^3 = 0.426310 + 0.012855
        // t = 0.12 sqrt(404 * 1.7 / 0.439165)
        let det: f64 = 1.0 - 0.49 - 0.5625 - 0.3969 + 2.0 * 0.7 * 0.75 * 0.63;
        let denom = 2.0 * 404.0 / 402.0 * det + 0.69f64.powi(2) * 0.3f64.powi(3);
        let want = 0.12 * (404.0 * 1.7 / denom).sqrt();
        let w = williams_test(0.75, 0.63, 0.7, 405).unwrap();
        assert!((w.t - want).abs() < 1e-12);
        assert!((w.t - 4.746).abs() < 5e-3, "{}", w.t);
        assert!(w.p < 1e-5);
    }

    #[test]
    fn rejects_singular_matrix() {
        assert!(matches!(williams_test(1.0, 1.0, 0.2, 50), Err(Error::Degenerate(_))));
        assert!(williams_test(1.2, 0.5, 0.5, 50).is_err());
    }
}
