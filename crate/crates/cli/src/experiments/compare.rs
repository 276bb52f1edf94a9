use std::collections::BTreeMap;

use anyhow::{Context, Result};

use volcount_core::baselines::{
    baseline_components, baseline_intensity, baseline_volume, bow_features, calibrate_linear, threshold_grid,
    tune_threshold, write_forest, BowConfig, BowDictionary, CalibrationParams, FittedBaselines, Forest, ForestConfig,
};
use volcount_core::regnet::Model;
use volcount_core::stats::{pearson, williams_test, EvalReport, WilliamsResult};
use volcount_core::Volume;

use super::{evaluate, score_all, train_cnn, MainSplit};
use crate::data::{par_map, Batch};
use crate::manifest::RunContext;
use crate::spec::{derive_seed, ExperimentSpec, Method};
use crate::table::Table;

/// Baselines fitted on a training set and calibrated on a validation set.
pub struct BaselineSuite {
    pub fitted: FittedBaselines,
    pub forest: Option<Forest>,
}

fn volume_scores(inputs: &[&Volume], f: impl Fn(&Volume) -> Result<f64> + Sync + Send, threads: usize) -> Result<Vec<f64>> {
    par_map(threads, inputs, |v| f(v))
}

impl BaselineSuite {
    pub fn fit(spec: &ExperimentSpec, methods: &[Method], train: &Batch, val: &Batch, threads: usize) -> Result<Self> {
        let wanted = |m| methods.contains(&m);
        let tr_in = train.inputs();
        let tr_y = train.labels();
        let va_in = val.inputs();
        let va_y = val.labels();
        let mut fitted = FittedBaselines {
            volume_threshold: 0.0,
            components_threshold: 0.0,
            calibration_intensity: CalibrationParams::default(),
            calibration_volume: CalibrationParams::default(),
            calibration_components: CalibrationParams::default(),
            calibration_forest: CalibrationParams::default(),
            forest: ForestConfig {
                seed: derive_seed(spec.seed, "forest", spec.baselines.forest.seed),
                ..spec.baselines.forest.clone()
            },
            dictionary: BowDictionary::unfitted(BowConfig {
                seed: derive_seed(spec.seed, "bow", spec.baselines.bow.seed),
                ..spec.baselines.bow.clone()
            }),
        };
        let needs_grid = wanted(Method::Volume) || wanted(Method::Components);
        let grid = if needs_grid {
            threshold_grid(&tr_in, spec.baselines.threshold_steps)?
        } else {
            Vec::new()
        };

        if wanted(Method::Intensity) {
            let p = volume_scores(&va_in, |v| Ok(baseline_intensity(v)), threads)?;
            fitted.calibration_intensity = calibrate_linear(&p, &va_y).context("calibrating intensity")?;
        }
        if wanted(Method::Volume) {
            fitted.volume_threshold = tune_threshold(&tr_in, &tr_y, &grid, baseline_volume)?.0;
            let t = fitted.volume_threshold;
            let p = volume_scores(&va_in, |v| Ok(baseline_volume(v, t)?), threads)?;
            fitted.calibration_volume = calibrate_linear(&p, &va_y).context("calibrating volume")?;
        }
        if wanted(Method::Components) {
            fitted.components_threshold = tune_components(&tr_in, &tr_y, &grid, threads)?;
            let t = fitted.components_threshold;
            let p = volume_scores(&va_in, |v| Ok(baseline_components(v, t)?), threads)?;
            fitted.calibration_components = calibrate_linear(&p, &va_y).context("calibrating components")?;
        }
        let mut forest = None;
        if wanted(Method::BowForest) {
            fitted.dictionary = BowDictionary::fit(fitted.dictionary.config.clone(), &tr_in)?;
            let dict = &fitted.dictionary;
            let x = volume_features(&tr_in, dict, threads)?;
            let f = Forest::fit(&x, &tr_y, &fitted.forest)?;
            let xv = volume_features(&va_in, dict, threads)?;
            let p = xv.iter().map(|x| f.predict(x)).collect::<Result<Vec<_>, _>>()?;
            fitted.calibration_forest = calibrate_linear(&p, &va_y).context("calibrating forest")?;
            forest = Some(f);
        }
        Ok(Self { fitted, forest })
    }

    /// Calibrated scores of `method` on `inputs`.
    pub fn predict(&self, method: Method, inputs: &[&Volume], threads: usize) -> Result<Vec<f64>> {
        let f = &self.fitted;
        let raw = match method {
            Method::Cnn => anyhow::bail!("the network is not a baseline"),
            Method::Intensity => volume_scores(inputs, |v| Ok(baseline_intensity(v)), threads)?,
            Method::Volume => volume_scores(inputs, |v| Ok(baseline_volume(v, f.volume_threshold)?), threads)?,
            Method::Components => {
                volume_scores(inputs, |v| Ok(baseline_components(v, f.components_threshold)?), threads)?
            }
            Method::BowForest => {
                let forest = self.forest.as_ref().context("forest was not fitted")?;
                volume_features(inputs, &f.dictionary, threads)?
                    .iter()
                    .map(|x| forest.predict(x))
                    .collect::<Result<Vec<_>, _>>()?
            }
        };
        let cal = match method {
            Method::Intensity => f.calibration_intensity,
            Method::Volume => f.calibration_volume,
            Method::Components => f.calibration_components,
            _ => f.calibration_forest,
        };
        Ok(cal.apply_all(&raw))
    }
}

fn volume_features(inputs: &[&Volume], dict: &BowDictionary, threads: usize) -> Result<Vec<Vec<f64>>> {
    par_map(threads, inputs, |v| Ok(bow_features(v, dict)?))
}

/// Threshold search for the components baseline; grid points are scored in parallel.
fn tune_components(inputs: &[&Volume], labels: &[f64], grid: &[f64], threads: usize) -> Result<f64> {
    if threads <= 1 {
        return Ok(tune_threshold(inputs, labels, grid, baseline_components)?.0);
    }
    let per_point: Vec<Option<(f64, f64)>> = par_map(threads, grid, |&t| {
        match tune_threshold(inputs, labels, &[t], baseline_components) {
            Ok(r) => Ok(Some(r)),
            Err(volcount_core::Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    })?;
    // Same rule as the serial search: highest rho, lowest threshold on ties.
    let mut best: Option<(f64, f64)> = None;
    for (t, rho) in per_point.into_iter().flatten() {
        if best.is_none_or(|(_, b)| rho > b) {
            best = Some((t, rho));
        }
    }
    best.map(|b| b.0).context("every threshold gave constant scores")
}

pub struct CompareOutcome {
    pub metrics: Table,
    pub williams: Table,
    pub reports: BTreeMap<Method, EvalReport>,
    pub williams_results: BTreeMap<Method, WilliamsResult>,
    pub predictions: BTreeMap<Method, Vec<f64>>,
    pub labels: Vec<f64>,
    pub model: Option<Model>,
    /// Components baseline on noise-free renders, when requested.
    pub noise_free_components: Option<EvalReport>,
    pub test: Batch,
}

pub const METRIC_HEADER: [&str; 6] = ["method", "n", "pearson", "spearman", "icc", "mse"];

pub fn report_row(t: &mut Table, name: &str, r: &EvalReport) {
    t.push(vec![
        name.into(),
        r.n.into(),
        r.pearson.into(),
        r.spearman.into(),
        r.icc.into(),
        r.mse.into(),
    ]);
}

/// The network and the four baselines on one train/val/test split.
pub fn run_compare(ctx: &mut RunContext, spec: &ExperimentSpec, threads: usize) -> Result<CompareOutcome> {
    let split = MainSplit::new(spec)?;
    split.record(ctx)?;
    let (train, val) = split.train_val(spec, threads)?;
    let test = split.test(spec, false, threads)?;
    let methods: Vec<Method> = Method::ALL.iter().copied().filter(|m| spec.methods.contains(m)).collect();

    let mut predictions = BTreeMap::new();
    let mut model = None;
    if methods.contains(&Method::Cnn) {
        let seed = derive_seed(spec.seed, "cnn", 0);
        ctx.record_seed("cnn", seed)?;
        let t = train_cnn(&spec.network, &spec.augment, &spec.training, &train, &val, seed)?;
        ctx.save_model("cnn", &t.model, &t.sidecar)?;
        ctx.write_csv("training.csv", &super::history_table(&t.state_summary))?;
        predictions.insert(Method::Cnn, score_all(&t.model, &test.inputs(), threads)?);
        model = Some(t.model);
    }
    let baselines: Vec<Method> = methods.iter().copied().filter(|&m| m != Method::Cnn).collect();
    if !baselines.is_empty() {
        let suite = BaselineSuite::fit(spec, &baselines, &train, &val, threads)?;
        suite.fitted.save_json(ctx.dir().join("models/baselines.json"))?;
        ctx.record_output("models/baselines.json")?;
        if let Some(f) = &suite.forest {
            write_forest(ctx.dir().join("models/forest.frst"), f)?;
            ctx.record_output("models/forest.frst")?;
        }
        for &m in &baselines {
            predictions.insert(m, suite.predict(m, &test.inputs(), threads)?);
        }
    }

    let noise_free = if spec.baselines.noise_free_reference {
        Some(noise_free_components(spec, &split, threads)?)
    } else {
        None
    };

    // Every prediction is fixed; the held-out labels are read from here on.
    let test = test.unseal();
    let labels = test.labels();
    let mut metrics = Table::new(&METRIC_HEADER);
    let mut reports = BTreeMap::new();
    for &m in &methods {
        let r = evaluate(&predictions[&m], &labels, spec.icc_kind)
            .with_context(|| format!("evaluating {}", m.name()))?;
        report_row(&mut metrics, m.name(), &r);
        reports.insert(m, r);
    }
    ctx.write_csv("metrics.csv", &metrics)?;

    let mut per_scan = Table::new(&[&["id", "label"][..], &methods.iter().map(|m| m.name()).collect::<Vec<_>>()].concat());
    for (i, id) in test.ids().iter().enumerate() {
        let mut row: Vec<crate::table::Cell> = vec![id.into(), labels[i].into()];
        row.extend(methods.iter().map(|m| predictions[m][i].into()));
        per_scan.push(row);
    }
    ctx.write_csv("predictions.csv", &per_scan)?;

    let mut williams = Table::new(&["method_a", "method_b", "r_a", "r_b", "r_ab", "t", "df", "p"]);
    let mut williams_results = BTreeMap::new();
    if let Some(cnn) = predictions.get(&Method::Cnn) {
        let r = |a: &[f64], b: &[f64]| pearson(a, b).unwrap_or(f64::NAN);
        let r13 = r(cnn, &labels);
        for &m in &baselines {
            let r23 = r(&predictions[&m], &labels);
            let r12 = r(cnn, &predictions[&m]);
            // Undefined when a correlation is missing or the matrix is singular.
            let w = williams_test(r13, r23, r12, labels.len()).unwrap_or(WilliamsResult {
                t: f64::NAN,
                df: labels.len().saturating_sub(3) as f64,
                p: f64::NAN,
            });
            williams.push(vec![
                "cnn".into(),
                m.name().into(),
                r13.into(),
                r23.into(),
                r12.into(),
                w.t.into(),
                w.df.into(),
                w.p.into(),
            ]);
            williams_results.insert(m, w);
        }
        ctx.write_csv("williams.csv", &williams)?;
    }

    let noise_free_components = match noise_free {
        Some((preds, nf_labels)) => {
            let r = evaluate(&preds, &nf_labels, spec.icc_kind)?;
            let mut t = Table::new(&METRIC_HEADER);
            report_row(&mut t, "components_noise_free", &r);
            ctx.write_csv("noise_free.csv", &t)?;
            Some(r)
        }
        None => None,
    };

    Ok(CompareOutcome {
        metrics,
        williams,
        reports,
        williams_results,
        predictions,
        labels,
        model,
        noise_free_components,
        test,
    })
}

/// Components baseline on noise-free renders: threshold tuned on the
/// training renders, raw counts on the test renders. Returns the test
/// predictions and labels.
fn noise_free_components(spec: &ExperimentSpec, split: &MainSplit, threads: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let train = split.pool.load_noise_free(&split.idx.train, &spec.preprocess, threads)?;
    let test = crate::data::Sealed::new(split.pool.load_noise_free(&split.idx.test, &spec.preprocess, threads)?);
    let tr_in = train.inputs();
    let grid = threshold_grid(&tr_in, spec.baselines.threshold_steps)?;
    let t = tune_components(&tr_in, &train.labels(), &grid, threads)?;
    let preds = volume_scores(&test.inputs(), |v| Ok(baseline_components(v, t)?), threads)?;
    Ok((preds, test.unseal().labels()))
}
