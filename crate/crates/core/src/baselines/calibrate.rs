use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{icc_pair, IccKind};

/// Affine output map `a * x + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub a: f64,
    pub b: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self { a: 1.0, b: 0.0 }
    }
}

impl CalibrationParams {
    pub fn apply(&self, x: f64) -> f64 {
        self.a * x + self.b
    }

    pub fn apply_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Finds `(a, b)` maximizing ICC(2,1) of `a * pred + b` against `labels`.
///
/// Golden-section search over `a >= 0` with `b` chosen to match means; the
/// identity map is kept when it scores at least as well, so the fitted ICC
/// is never below the uncalibrated one.
pub fn calibrate_linear(pred: &[f64], labels: &[f64]) -> Result<CalibrationParams> {
    if pred.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: pred.len(),
            found: labels.len(),
        });
    }
    if pred.len() < 3 {
        return Err(Error::Validation("calibration needs at least 3 pairs".into()));
    }
    if pred.iter().all(|&p| p == pred[0]) {
        return Err(Error::Degenerate("cannot calibrate constant predictions".into()));
    }
    let (mp, ml) = (mean(pred), mean(labels));
    let sd = |x: &[f64], m: f64| (x.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sqrt();
    let scale = sd(labels, ml) / sd(pred, mp);
    let score = |c: CalibrationParams| icc_pair(&c.apply_all(pred), labels, IccKind::Icc21).unwrap_or(f64::NEG_INFINITY);
    let at = |a: f64| CalibrationParams { a, b: ml - a * mp };

    let (mut lo, mut hi) = (0.0, if scale > 0.0 { 10.0 * scale } else { 10.0 });
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (score(at(x1)), score(at(x2)));
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = score(at(x2));
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = score(at(x1));
        }
    }
    let found = at((lo + hi) / 2.0);
    let identity = CalibrationParams::default();
    Ok(if score(identity) >= score(found) { identity } else { found })
}
