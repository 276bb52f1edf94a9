use anyhow::{Context, Result};

use volcount_core::phantom::generate_rescan_pair;
use volcount_core::regnet::Model;
use volcount_core::stats::{icc_pair, IccKind};
use volcount_core::Volume;

use super::{mean_sd, models_for, score_all};
use crate::data::{par_map, prepare};
use crate::manifest::RunContext;
use crate::spec::{derive_seed, ExperimentSpec};
use crate::table::Table;

/// Preprocessed scan-rescan pairs.
pub struct RescanPairs {
    pub ids: Vec<String>,
    pub first: Vec<Volume>,
    pub second: Vec<Volume>,
}

impl RescanPairs {
    pub fn generate(spec: &ExperimentSpec, threads: usize) -> Result<Self> {
        let seeds: Vec<u64> = (0..spec.repro.pairs as u64).map(|i| derive_seed(spec.seed, "rescan", i)).collect();
        let pairs = par_map(threads, &seeds, |&s| {
            let (a, b) = generate_rescan_pair(&spec.phantom, s)?;
            let id = crate::data::scan_id(s);
            let pa = prepare(&a, id.clone(), &spec.preprocess, false)?.0.input;
            let pb = prepare(&b, id.clone(), &spec.preprocess, false)?.0.input;
            Ok((id, pa, pb))
        })?;
        let mut out = Self {
            ids: Vec::new(),
            first: Vec::new(),
            second: Vec::new(),
        };
        for (id, a, b) in pairs {
            out.ids.push(id);
            out.first.push(a);
            out.second.push(b);
        }
        Ok(out)
    }

    /// ICC between the model's scores on the two acquisitions.
    pub fn icc(&self, model: &Model, kind: IccKind, threads: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let a = score_all(model, &self.first.iter().collect::<Vec<_>>(), threads)?;
        let b = score_all(model, &self.second.iter().collect::<Vec<_>>(), threads)?;
        let icc = icc_pair(&a, &b, kind).context("scan-rescan ICC")?;
        Ok((icc, a, b))
    }
}

pub struct ReproOutcome {
    pub iccs: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// Scan-rescan agreement of every model in the ensemble.
pub fn run_repro(ctx: &mut RunContext, spec: &ExperimentSpec, threads: usize) -> Result<ReproOutcome> {
    let models = models_for(ctx, spec, spec.repro.ensemble, threads)?;
    let pairs = RescanPairs::generate(spec, threads)?;
    ctx.record_split("rescan_pairs", pairs.ids.clone())?;
    evaluate(ctx, &models, &pairs, threads)
}

pub fn evaluate(
    ctx: &mut RunContext,
    models: &[Model],
    pairs: &RescanPairs,
    threads: usize,
) -> Result<ReproOutcome> {
    let mut per_model = Table::new(&["model", "icc"]);
    let mut scores = Table::new(&["model", "id", "first", "second"]);
    let mut iccs = Vec::new();
    for (k, m) in models.iter().enumerate() {
        let (icc, a, b) = pairs.icc(m, IccKind::Icc21, threads)?;
        per_model.push(vec![k.into(), icc.into()]);
        for (i, id) in pairs.ids.iter().enumerate() {
            scores.push(vec![k.into(), id.into(), a[i].into(), b[i].into()]);
        }
        iccs.push(icc);
    }
    let (mean, sd) = mean_sd(&iccs);
    ctx.write_csv("repro_models.csv", &per_model)?;
    ctx.write_csv("repro_scores.csv", &scores)?;
    let mut summary = Table::new(&["models", "pairs", "icc_mean", "icc_sd"]);
    summary.push(vec![models.len().into(), pairs.ids.len().into(), mean.into(), sd.into()]);
    ctx.write_csv("metrics.csv", &summary)?;
    Ok(ReproOutcome { iccs, mean, sd })
}
