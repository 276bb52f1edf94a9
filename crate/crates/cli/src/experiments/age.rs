use anyhow::{Context, Result};

use volcount_core::regnet::Model;
use volcount_core::stats::{zinb_fit, ZinbFit, ZinbOptions};

use super::{models_for, score_all};
use crate::data::Pool;
use crate::manifest::RunContext;
use crate::spec::ExperimentSpec;
use crate::table::Table;

/// Automated scores become counts by rounding to the nearest non-negative integer.
pub fn score_to_count(s: f64) -> u64 {
    s.round().max(0.0) as u64
}

pub struct AgeOutcome {
    pub visual: ZinbFit,
    pub automated: ZinbFit,
    pub bins: Table,
    pub ages: Vec<f64>,
    pub counts: Vec<u64>,
    pub scores: Vec<f64>,
}

impl AgeOutcome {
    pub fn visual_rate_ratio(&self) -> f64 {
        self.visual.rate_ratio.map_or(f64::NAN, |r| r.estimate)
    }

    pub fn automated_rate_ratio(&self) -> f64 {
        self.automated.rate_ratio.map_or(f64::NAN, |r| r.estimate)
    }
}

fn mean_ci(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN, f64::NAN);
    }
    let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let h = 1.96 * sd / n.sqrt();
    (m, m - h, m + h)
}

/// Count regression on age for the true counts and for the model's
/// rounded scores on one synthetic cohort.
pub fn run_age(ctx: &mut RunContext, spec: &ExperimentSpec, threads: usize) -> Result<AgeOutcome> {
    let model = models_for(ctx, spec, 1, threads)?.remove(0);
    evaluate(ctx, spec, &model, threads)
}

pub fn evaluate(ctx: &mut RunContext, spec: &ExperimentSpec, model: &Model, threads: usize) -> Result<AgeOutcome> {
    let pool = Pool::synthetic(&spec.age_phantom(), spec.seed, "age", spec.age.cohort);
    ctx.record_split("age_cohort", pool.ids.clone())?;
    let idx: Vec<usize> = (0..pool.len()).collect();
    let batch = pool.load(&idx, &spec.preprocess, false, threads)?;
    let scores = score_all(model, &batch.inputs(), threads)?;
    let ages: Vec<f64> = batch.meta.iter().map(|m| m.age.context("cohort scan without age")).collect::<Result<_>>()?;
    let counts: Vec<u64> = batch.meta.iter().map(|m| m.score as u64).collect();
    let rounded: Vec<u64> = scores.iter().map(|&s| score_to_count(s)).collect();
    let x: Vec<Vec<f64>> = ages.iter().map(|&a| vec![a]).collect();
    let opts = ZinbOptions::default();
    let visual = zinb_fit(&counts, &x, &opts).context("fitting true counts")?;
    let automated = zinb_fit(&rounded, &x, &opts).context("fitting automated scores")?;

    let mut fits = Table::new(&["source", "rate_ratio", "ci_lo", "ci_hi", "per_years", "size", "log_likelihood", "converged"]);
    for (name, f) in [("visual", &visual), ("automated", &automated)] {
        let rr = f.rate_ratio.context("fit without a rate ratio")?;
        fits.push(vec![
            name.into(),
            rr.estimate.into(),
            rr.lo.into(),
            rr.hi.into(),
            rr.scale.into(),
            f.size.into(),
            f.log_likelihood.into(),
            if f.converged { "true" } else { "false" }.into(),
        ]);
    }
    ctx.write_csv("metrics.csv", &fits)?;

    let w = spec.age.bin_years;
    let lo = (ages.iter().cloned().fold(f64::INFINITY, f64::min) / w).floor() * w;
    let mut bins = Table::new(&[
        "age_lo",
        "age_hi",
        "n",
        "visual_mean",
        "visual_ci_lo",
        "visual_ci_hi",
        "automated_mean",
        "automated_ci_lo",
        "automated_ci_hi",
    ]);
    let mut start = lo;
    let max_age = ages.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    while start <= max_age {
        let members: Vec<usize> = (0..ages.len()).filter(|&i| ages[i] >= start && ages[i] < start + w).collect();
        if !members.is_empty() {
            let v: Vec<f64> = members.iter().map(|&i| counts[i] as f64).collect();
            let a: Vec<f64> = members.iter().map(|&i| scores[i]).collect();
            let (vm, vl, vh) = mean_ci(&v);
            let (am, al, ah) = mean_ci(&a);
            bins.push(vec![
                start.into(),
                (start + w).into(),
                members.len().into(),
                vm.into(),
                vl.into(),
                vh.into(),
                am.into(),
                al.into(),
                ah.into(),
            ]);
        }
        start += w;
    }
    ctx.write_csv("age_bins.csv", &bins)?;
    Ok(AgeOutcome {
        visual,
        automated,
        bins,
        ages,
        counts,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_rule() {
        assert_eq!(score_to_count(-0.7), 0);
        assert_eq!(score_to_count(2.49), 2);
        assert_eq!(score_to_count(2.5), 3);
    }
}
