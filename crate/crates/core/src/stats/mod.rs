//! Agreement and association statistics.

mod bootstrap;
mod optim;
mod williams;
mod zinb;

pub use bootstrap::{bootstrap_ci, quantile_sorted, Interval};
pub use optim::{minimize_bfgs, BfgsOptions, BfgsResult};
pub use williams::{williams_test, WilliamsResult};
pub use zinb::{zinb_fit, zinb_loglik, Inflation, ZinbFit, ZinbOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::Validation(format!("need at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value".into()));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation undefined for a constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties given their average rank.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&mid_ranks(x), &mid_ranks(y))
}

pub fn mse(pred: &[f64], labels: &[f64]) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: pred.len(),
            found: labels.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Validation("mse of an empty set".into()));
    }
    Ok(pred.iter().zip(labels).map(|(p, l)| (p - l) * (p - l)).sum::<f64>() / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum IccKind {
    /// Two-way random effects, absolute agreement, single rater.
    #[default]
    #[serde(rename = "ICC(2,1)")]
    Icc21,
    /// Two-way mixed effects, consistency, single rater.
    #[serde(rename = "ICC(3,1)")]
    Icc31,
}

/// Two-way ANOVA mean squares of an `n × k` table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnovaTable {
    pub n: usize,
    pub k: usize,
    pub ms_rows: f64,
    pub ms_cols: f64,
    pub ms_error: f64,
}

pub fn two_way_anova(rows: &[Vec<f64>]) -> Result<AnovaTable> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if n < 3 || k < 2 {
        return Err(Error::Validation(format!("need n >= 3 subjects and k >= 2 raters, got {n}×{k}")));
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::Validation("ragged ratings table".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite rating".into()));
    }
    let grand = rows.iter().flatten().sum::<f64>() / (n * k) as f64;
    let row_means: Vec<f64> = rows.iter().map(|r| mean(r)).collect();
    let col_means: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let ss_total: f64 = rows.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_rows = k as f64 * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = n as f64 * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    if ss_total == 0.0 {
        return Err(Error::Degenerate("ratings table has zero total variance".into()));
    }
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);
    Ok(AnovaTable {
        n,
        k,
        ms_rows: ss_rows / (n - 1) as f64,
        ms_cols: ss_cols / (k - 1) as f64,
        ms_error: ss_error / ((n - 1) * (k - 1)) as f64,
    })
}

/// Intraclass correlation of an `n × k` table (one row per subject).
pub fn icc(rows: &[Vec<f64>], kind: IccKind) -> Result<f64> {
    let a = two_way_anova(rows)?;
    let k = a.k as f64;
    let denom = match kind {
        IccKind::Icc21 => a.ms_rows + (k - 1.0) * a.ms_error + k / a.n as f64 * (a.ms_cols - a.ms_error),
        IccKind::Icc31 => a.ms_rows + (k - 1.0) * a.ms_error,
    };
    if denom == 0.0 {
        return Err(Error::Degenerate("ICC denominator is zero".into()));
    }
    Ok((a.ms_rows - a.ms_error) / denom)
}

/// ICC of two paired rating vectors.
pub fn icc_pair(a: &[f64], b: &[f64], kind: IccKind) -> Result<f64> {
    check_pair(a, b)?;
    let rows: Vec<Vec<f64>> = a.iter().zip(b).map(|(&x, &y)| vec![x, y]).collect();
    icc(&rows, kind)
}

/// Confidence intervals attached to an [`EvalReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCis {
    pub level: f64,
    pub reps: usize,
    pub seed: u64,
    pub pearson: Interval,
    pub spearman: Interval,
    pub icc: Interval,
    pub mse: Interval,
}

/// The four agreement metrics of predictions against labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub pearson: f64,
    pub spearman: f64,
    pub icc: f64,
    pub mse: f64,
    pub icc_kind: IccKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci: Option<ReportCis>,
}

impl EvalReport {
    pub fn compute(pred: &[f64], labels: &[f64], kind: IccKind) -> Result<Self> {
        Ok(Self {
            n: pred.len(),
            pearson: pearson(pred, labels)?,
            spearman: spearman(pred, labels)?,
            icc: icc_pair(pred, labels, kind)?,
            mse: mse(pred, labels)?,
            icc_kind: kind,
            ci: None,
        })
    }

    /// Adds percentile bootstrap intervals for every metric.
    pub fn with_bootstrap(mut self, pred: &[f64], labels: &[f64], reps: usize, level: f64, seed: u64) -> Result<Self> {
        let kind = self.icc_kind;
        self.ci = Some(ReportCis {
            level,
            reps,
            seed,
            pearson: bootstrap_ci(pearson, pred, labels, reps, level, seed)?,
            spearman: bootstrap_ci(spearman, pred, labels, reps, level, seed)?,
            icc: bootstrap_ci(|a, b| icc_pair(a, b, kind), pred, labels, reps, level, seed)?,
            mse: bootstrap_ci(mse, pred, labels, reps, level, seed)?,
        });
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 5.0];
        assert_abs_diff_eq!(pearson(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-12);
        // cov = 1.5, var x = 1, var y = 7/3 (sample)
        let want = 1.5 / (1.0f64 * 7.0 / 3.0).sqrt() / 1.0;
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(r, want, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 0.98198, epsilon = 1e-5);
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Degenerate(_))));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), -0.5, epsilon = 1e-12);
        let x = [0.1, 0.5, 0.9, 2.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert_abs_diff_eq!(spearman(&x, &y).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mid_ranks_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0, 3.0]), vec![4.0, 1.0, 4.0, 2.0, 4.0]);
        assert_eq!(mid_ranks(&[5.0, 5.0]), vec![1.5, 1.5]);
    }

    #[test]
    fn icc_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(icc_pair(&a, &a, IccKind::Icc21).unwrap(), 1.0, epsilon = 1e-12);
        let b = [3.0, 4.0, 5.0, 6.0];
        // SSR = 10, SSC = 8, SSE = 0
        let want = (10.0 / 3.0) / (10.0 / 3.0 + 2.0 / 4.0 * 8.0);
        let got = icc_pair(&a, &b, IccKind::Icc21).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 0.4545, epsilon = 1e-4);
        // Consistency ignores the offset.
        assert_abs_diff_eq!(icc_pair(&a, &b, IccKind::Icc31).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(icc_pair(&[2.0; 4], &[2.0; 4], IccKind::Icc21), Err(Error::Degenerate(_))));
    }

    #[test]
    fn report_and_mse() {
        assert_eq!(mse(&[3.0], &[5.0]).unwrap(), 4.0);
        let p = [1.0, 2.5, 2.0, 4.0, 6.0];
        let l = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = EvalReport::compute(&p, &l, IccKind::Icc21).unwrap();
        assert_eq!(r.n, 5);
        assert!(r.pearson > 0.9 && r.icc <= 1.0 && r.mse >= 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("ICC(2,1)"));
    }
}
