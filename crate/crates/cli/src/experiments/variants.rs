use anyhow::{Context, Result};

use super::{score_all, train_cnn, MainSplit};
use crate::manifest::RunContext;
use crate::spec::{derive_seed, spec_err, ExperimentSpec};
use crate::table::Table;

/// Trains every architecture variant on the main split and reports test metrics.
pub fn run_variants(ctx: &mut RunContext, spec: &ExperimentSpec, threads: usize) -> Result<Table> {
    if spec.variants.is_empty() {
        return Err(spec_err("no variants listed"));
    }
    let split = MainSplit::new(spec)?;
    split.record(ctx)?;
    let (train, val) = split.train_val(spec, threads)?;
    let test = split.test(spec, false, threads)?;

    let mut preds = Vec::new();
    for (k, v) in spec.variants.iter().enumerate() {
        let mut network = v.network.clone().unwrap_or_else(|| spec.network.clone());
        if let Some(loss) = v.loss {
            network.loss = loss;
        }
        network.layers().map_err(|e| spec_err(format!("variant {}: {e}", v.name)))?;
        let augment = v.augment.clone().unwrap_or_else(|| spec.augment.clone());
        let seed = derive_seed(spec.seed, "variant", k as u64);
        ctx.record_seed(&format!("variant_{}", v.name), seed)?;
        let t = train_cnn(&network, &augment, &spec.training, &train, &val, seed)
            .with_context(|| format!("training variant {}", v.name))?;
        ctx.save_model(&format!("variant_{}", v.name), &t.model, &t.sidecar)?;
        preds.push((v, network, augment, t.state_summary.best_epoch, score_all(&t.model, &test.inputs(), threads)?));
    }

    let y = test.unseal().labels();
    let mut table = Table::new(&[
        "variant",
        "blocks",
        "convs_per_block",
        "features_first_layer",
        "fc_layout",
        "loss",
        "augmentation",
        "best_epoch",
        "pearson",
        "spearman",
        "icc",
        "mse",
    ]);
    for (v, net, aug, epoch, p) in &preds {
        let fc = net.fc_layout.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x");
        let fc = if fc.is_empty() { "0".to_string() } else { fc };
        let row_start: Vec<crate::table::Cell> = vec![
            (&v.name).into(),
            net.blocks.into(),
            net.convs_per_block.into(),
            net.features_first_layer.into(),
            (&fc).into(),
            net.loss.name().into(),
            if aug.is_noop() { "none" } else { "on" }.into(),
            (*epoch).into(),
        ];
        let mut row = row_start;
        let r = super::evaluate(p, &y, spec.icc_kind)?;
        row.extend([r.pearson.into(), r.spearman.into(), r.icc.into(), r.mse.into()]);
        table.push(row);
    }
    ctx.write_csv("metrics.csv", &table)?;
    Ok(table)
}
