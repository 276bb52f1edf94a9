use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap interval for a paired statistic.
///
/// Resamples whose statistic is undefined (a constant resample, say) are
/// dropped; more than half dropped is an error.
pub fn bootstrap_ci(
    metric: impl Fn(&[f64], &[f64]) -> Result<f64>,
    x: &[f64],
    y: &[f64],
    reps: usize,
    level: f64,
    seed: u64,
) -> Result<Interval> {
    if reps < 100 {
        return Err(Error::Usage(format!("bootstrap needs at least 100 replicates, got {reps}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Usage(format!("confidence level {level} must lie in (0, 1)")));
    }
    let estimate = metric(x, y)?;
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
    let mut stats = Vec::with_capacity(reps);
    for _ in 0..reps {
        for i in 0..n {
            let j = rng.random_range(0..n);
            bx[i] = x[j];
            by[i] = y[j];
        }
        match metric(&bx, &by) {
            Ok(v) => stats.push(v),
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if stats.len() * 2 < reps {
        return Err(Error::Degenerate(format!(
            "{} of {reps} bootstrap resamples were degenerate",
            reps - stats.len()
        )));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(Interval {
        estimate,
        lo: quantile_sorted(&stats, alpha),
        hi: quantile_sorted(&stats, 1.0 - alpha),
    })
}

/// Linear-interpolated quantile of ascending data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mse, pearson};

    #[test]
    fn interval_brackets_estimate_and_is_deterministic() {
        let x: Vec<f64> = (0..60).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v + ((v * 7.3).sin() * 9.0)).collect();
        let a = bootstrap_ci(pearson, &x, &y, 500, 0.95, 3).unwrap();
        let b = bootstrap_ci(pearson, &x, &y, 500, 0.95, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.lo <= a.estimate && a.estimate <= a.hi);
        assert!(a.hi - a.lo > 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = [1.0, 2.0, 3.0];
        assert!(matches!(bootstrap_ci(mse, &x, &x, 10, 0.95, 0), Err(Error::Usage(_))));
        assert!(matches!(bootstrap_ci(mse, &x, &x, 100, 1.5, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn constant_metric_has_zero_width() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let ci = bootstrap_ci(|_, _| Ok(0.7), &x, &x, 200, 0.9, 1).unwrap();
        assert_eq!((ci.lo, ci.estimate, ci.hi), (0.7, 0.7, 0.7));
    }

    #[test]
    fn coverage_near_nominal() {
        use rand_distr::{Distribution, StandardNormal};
        // Mean paired difference of Gaussian pairs with true value 0.5.
        let mean_diff = |a: &[f64], b: &[f64]| Ok(a.iter().zip(b).map(|(p, q)| p - q).sum::<f64>() / a.len() as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let trials = 300;
        let mut hits = 0;
        for t in 0..trials {
            let x: Vec<f64> = (0..60).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    0.5 * v - 0.5 + e
                })
                .collect();
            let ci = bootstrap_ci(mean_diff, &x, &y, 300, 0.9, t).unwrap();
            if ci.lo <= 0.5 && 0.5 <= ci.hi {
                hits += 1;
            }
        }
        let cov = hits as f64 / trials as f64;
        // 3 binomial standard errors around the nominal level.
        let se = (0.9f64 * 0.1 / trials as f64).sqrt();
        assert!((cov - 0.9).abs() < 3.0 * se + 0.02, "coverage {cov}");
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&s, 0.5), 1.5);
        assert_eq!(quantile_sorted(&s, 1.0), 3.0);
    }
}
