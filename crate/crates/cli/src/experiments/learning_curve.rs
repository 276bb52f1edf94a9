use anyhow::{Context, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volcount_core::regnet::Model;
use volcount_core::stats::{icc_pair, mse, pearson, quantile_sorted, spearman, EvalReport, IccKind};

use super::{score_all, train_cnn, MainSplit};
use crate::data::ids_of;
use crate::manifest::RunContext;
use crate::spec::{derive_seed, spec_err, ExperimentSpec};
use crate::table::{Cell, Table};

#[derive(Clone, Debug)]
pub struct CurvePoint {
    pub size: usize,
    pub reports: Vec<EvalReport>,
    pub mean: [f64; 4],
    /// Bootstrap intervals of the mean metrics, `[lo, hi]` per metric; absent for one repetition.
    pub ci: Option<[[f64; 2]; 4]>,
}

impl CurvePoint {
    pub fn mean_icc(&self) -> f64 {
        self.mean[2]
    }
}

pub struct CurveOutcome {
    pub points: Vec<CurvePoint>,
    /// Trained models per size, one per repetition.
    pub models: Vec<(usize, Vec<Model>)>,
    pub runs: Table,
    pub summary: Table,
}

const METRICS: [&str; 4] = ["pearson", "spearman", "icc", "mse"];

fn metric_values(pred: &[f64], y: &[f64], kind: IccKind) -> Option<[f64; 4]> {
    Some([
        pearson(pred, y).ok()?,
        spearman(pred, y).ok()?,
        icc_pair(pred, y, kind).ok()?,
        mse(pred, y).ok()?,
    ])
}

/// Percentile intervals for the mean over repetitions of each metric,
/// resampling test scans jointly across repetitions.
pub fn mean_metric_ci(preds: &[Vec<f64>], y: &[f64], kind: IccKind, reps: usize, level: f64, seed: u64) -> Result<[[f64; 2]; 4]> {
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: [Vec<f64>; 4] = Default::default();
    let (mut ys, mut ps) = (vec![0.0; n], vec![0.0; n]);
    let mut idx = vec![0usize; n];
    for _ in 0..reps {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        for (k, &i) in idx.iter().enumerate() {
            ys[k] = y[i];
        }
        let mut acc = [0.0; 4];
        let mut ok = true;
        for p in preds {
            for (k, &i) in idx.iter().enumerate() {
                ps[k] = p[i];
            }
            match metric_values(&ps, &ys, kind) {
                Some(v) => (0..4).for_each(|m| acc[m] += v[m]),
                None => ok = false,
            }
        }
        if ok {
            for m in 0..4 {
                draws[m].push(acc[m] / preds.len() as f64);
            }
        }
    }
    if draws[0].len() * 2 < reps {
        anyhow::bail!("more than half of the bootstrap resamples were degenerate");
    }
    let alpha = (1.0 - level) / 2.0;
    let mut out = [[0.0; 2]; 4];
    for m in 0..4 {
        draws[m].sort_by(f64::total_cmp);
        out[m] = [quantile_sorted(&draws[m], alpha), quantile_sorted(&draws[m], 1.0 - alpha)];
    }
    Ok(out)
}

/// Test metrics against training-set size. The test split of the main
/// split is held out; every repetition draws a fresh budget from the
/// remaining scans and cuts it into train and validation parts.
pub fn run_learning_curve(ctx: &mut RunContext, spec: &ExperimentSpec, threads: usize) -> Result<CurveOutcome> {
    let lc = &spec.learning_curve;
    let split = MainSplit::new(spec)?;
    let budget_pool: Vec<usize> = split.idx.train.iter().chain(&split.idx.val).copied().collect();
    if let Some(&too_big) = lc.sizes.iter().find(|&&n| n > budget_pool.len()) {
        return Err(spec_err(format!(
            "learning-curve size {too_big} exceeds the {} scans outside the test split",
            budget_pool.len()
        )));
    }
    ctx.record_split("test", ids_of(&split.pool, &split.idx.test))?;
    let test = split.test(spec, false, threads)?;

    let mut models = Vec::new();
    let mut all_preds: Vec<(usize, usize, usize, usize, Vec<f64>)> = Vec::new();
    for &size in &lc.sizes {
        let mut size_models = Vec::new();
        for rep in 0..lc.repetitions {
            let tag = format!("lc_{size}_r{rep}");
            let mut draw = budget_pool.clone();
            draw.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "lc_split", (size * 1000 + rep) as u64)));
            let n_val = ((size as f64 * lc.val_fraction).round() as usize).clamp(1, size - 1);
            let (va_idx, tr_idx) = draw[..size].split_at(n_val);
            ctx.record_split(&format!("{tag}_train"), ids_of(&split.pool, tr_idx))?;
            ctx.record_split(&format!("{tag}_val"), ids_of(&split.pool, va_idx))?;
            let tr = split.pool.load(tr_idx, &spec.preprocess, false, threads)?;
            let va = split.pool.load(va_idx, &spec.preprocess, false, threads)?;
            let seed = derive_seed(spec.seed, "lc_cnn", (size * 1000 + rep) as u64);
            ctx.record_seed(&tag, seed)?;
            let t = train_cnn(&spec.network, &spec.augment, &spec.training, &tr, &va, seed)
                .with_context(|| format!("training {tag}"))?;
            ctx.save_model(&tag, &t.model, &t.sidecar)?;
            all_preds.push((size, rep, tr.len(), va.len(), score_all(&t.model, &test.inputs(), threads)?));
            size_models.push(t.model);
        }
        models.push((size, size_models));
    }

    let y = test.unseal().labels();
    let mut runs = Table::new(&["train_size", "repetition", "n_train", "n_val", "pearson", "spearman", "icc", "mse"]);
    let mut points = Vec::new();
    for &size in &lc.sizes {
        let mine: Vec<&(usize, usize, usize, usize, Vec<f64>)> = all_preds.iter().filter(|p| p.0 == size).collect();
        let mut reports = Vec::new();
        for (_, rep, ntr, nva, p) in &mine {
            let r = super::evaluate(p, &y, spec.icc_kind)?;
            runs.push(vec![
                size.into(),
                (*rep).into(),
                (*ntr).into(),
                (*nva).into(),
                r.pearson.into(),
                r.spearman.into(),
                r.icc.into(),
                r.mse.into(),
            ]);
            reports.push(r);
        }
        let k = reports.len() as f64;
        let mean = [
            reports.iter().map(|r| r.pearson).sum::<f64>() / k,
            reports.iter().map(|r| r.spearman).sum::<f64>() / k,
            reports.iter().map(|r| r.icc).sum::<f64>() / k,
            reports.iter().map(|r| r.mse).sum::<f64>() / k,
        ];
        let ci = if lc.repetitions > 1 {
            let preds: Vec<Vec<f64>> = mine.iter().map(|p| p.4.clone()).collect();
            Some(mean_metric_ci(
                &preds,
                &y,
                spec.icc_kind,
                lc.bootstrap_reps,
                lc.ci_level,
                derive_seed(spec.seed, "lc_boot", size as u64),
            )?)
        } else {
            None
        };
        points.push(CurvePoint { size, reports, mean, ci });
    }
    ctx.write_csv("learning_curve_runs.csv", &runs)?;

    let mut header = vec!["train_size", "repetitions", "mean_pearson", "mean_spearman", "mean_icc", "mean_mse"];
    let ci_cols: Vec<String> = METRICS.iter().flat_map(|m| [format!("{m}_ci_lo"), format!("{m}_ci_hi")]).collect();
    if lc.repetitions > 1 {
        header.extend(ci_cols.iter().map(String::as_str));
    }
    let mut summary = Table::new(&header);
    for p in &points {
        let mut row: Vec<Cell> = vec![p.size.into(), lc.repetitions.into()];
        row.extend(p.mean.iter().map(|&m| Cell::from(m)));
        if let Some(ci) = &p.ci {
            for m in ci {
                row.push(m[0].into());
                row.push(m[1].into());
            }
        }
        summary.push(row);
    }
    ctx.write_csv("metrics.csv", &summary)?;
    Ok(CurveOutcome {
        points,
        models,
        runs,
        summary,
    })
}

/// Whether mean ICC rises with size, allowing at most one drop whose two
/// points have overlapping intervals.
pub fn icc_is_monotone(points: &[CurvePoint]) -> bool {
    let mut inversions = 0;
    for w in points.windows(2) {
        if w[1].mean_icc() < w[0].mean_icc() {
            let overlap = match (&w[0].ci, &w[1].ci) {
                (Some(a), Some(b)) => a[2][0] <= b[2][1] && b[2][0] <= a[2][1],
                _ => false,
            };
            if !overlap {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(size: usize, icc: f64, ci: Option<[f64; 2]>) -> CurvePoint {
        CurvePoint {
            size,
            reports: Vec::new(),
            mean: [0.0, 0.0, icc, 0.0],
            ci: ci.map(|c| [[0.0; 2], [0.0; 2], c, [0.0; 2]]),
        }
    }

    #[test]
    fn monotone_rule() {
        let up = [point(1, 0.5, None), point(2, 0.6, None), point(3, 0.7, None)];
        assert!(icc_is_monotone(&up));
        let overlap = [
            point(1, 0.5, Some([0.4, 0.6])),
            point(2, 0.48, Some([0.4, 0.55])),
            point(3, 0.7, Some([0.6, 0.8])),
        ];
        assert!(icc_is_monotone(&overlap));
        let apart = [point(1, 0.7, Some([0.65, 0.75])), point(2, 0.5, Some([0.45, 0.55]))];
        assert!(!icc_is_monotone(&apart));
        let two = [
            point(1, 0.5, Some([0.4, 0.6])),
            point(2, 0.49, Some([0.4, 0.6])),
            point(3, 0.48, Some([0.4, 0.6])),
        ];
        assert!(!icc_is_monotone(&two));
    }

    #[test]
    fn mean_ci_brackets_the_estimate() {
        let y: Vec<f64> = (0..60).map(|i| (i % 13) as f64).collect();
        let p1: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + ((i * 7) % 5) as f64 - 2.0).collect();
        let p2: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + ((i * 3) % 7) as f64 - 3.0).collect();
        let ci = mean_metric_ci(&[p1.clone(), p2.clone()], &y, IccKind::Icc21, 400, 0.95, 1).unwrap();
        let est = (icc_pair(&p1, &y, IccKind::Icc21).unwrap() + icc_pair(&p2, &y, IccKind::Icc21).unwrap()) / 2.0;
        assert!(ci[2][0] < est && est < ci[2][1], "{ci:?} vs {est}");
    }
}
