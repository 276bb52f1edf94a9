use anyhow::Result;

use super::{models_for, score_all, train_cnn, MainSplit};
use crate::data::Pool;
use crate::manifest::RunContext;
use crate::spec::{derive_seed, ExperimentSpec};
use crate::table::Table;

/// Trains one network on the main split and saves it as `models/cnn`.
pub fn run_train(ctx: &mut RunContext, spec: &ExperimentSpec, threads: usize) -> Result<Table> {
    let split = MainSplit::new(spec)?;
    split.record(ctx)?;
    let (train, val) = split.train_val(spec, threads)?;
    let seed = derive_seed(spec.seed, "cnn", 0);
    ctx.record_seed("cnn", seed)?;
    let t = train_cnn(&spec.network, &spec.augment, &spec.training, &train, &val, seed)?;
    ctx.save_model("cnn", &t.model, &t.sidecar)?;
    let history = super::history_table(&t.state_summary);
    ctx.write_csv("training.csv", &history)?;
    let mut summary = Table::new(&["best_epoch", "epochs_run", "best_val_loss", "parameters"]);
    summary.push(vec![
        t.state_summary.best_epoch.into(),
        t.state_summary.epochs_run.into(),
        t.state_summary.best_val_loss.into(),
        spec.network.param_count()?.into(),
    ]);
    ctx.write_csv("metrics.csv", &summary)?;
    Ok(summary)
}

/// Scores every scan of the dataset with each model; no labels are read.
pub fn run_score(ctx: &mut RunContext, spec: &ExperimentSpec, threads: usize) -> Result<Table> {
    let models = models_for(ctx, spec, 1, threads)?;
    let pool = Pool::from_spec(spec, "data", spec.splits.total())?;
    ctx.record_split("scored", pool.ids.clone())?;
    let idx: Vec<usize> = (0..pool.len()).collect();
    let batch = pool.load(&idx, &spec.preprocess, false, threads)?;
    let header: Vec<String> = std::iter::once("id".to_string())
        .chain((0..models.len()).map(|k| format!("score_{k}")))
        .collect();
    let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let scores: Vec<Vec<f64>> = models
        .iter()
        .map(|m| score_all(m, &batch.inputs(), threads))
        .collect::<Result<_>>()?;
    for (i, m) in batch.meta.iter().enumerate() {
        let mut row: Vec<crate::table::Cell> = vec![(&m.id).into()];
        row.extend(scores.iter().map(|s| s[i].into()));
        t.push(row);
    }
    ctx.write_csv("scores.csv", &t)?;
    Ok(t)
}
