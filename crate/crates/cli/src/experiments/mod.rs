//! One module per subcommand. Each `run_*` takes a [`RunContext`] whose
//! manifest already exists, writes its tables through it and returns the
//! in-memory results so callers can inspect them without re-reading CSVs.

pub mod age;
pub mod compare;
pub mod generate;
pub mod interpret;
pub mod learning_curve;
pub mod repro;
pub mod score;
pub mod variants;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use volcount_core::regnet::{load_model, train, AugmentConfig, Model, ModelSidecar, NetworkConfig, TrainConfig, TrainState};
use volcount_core::stats::{icc_pair, mse, EvalReport, IccKind};
use volcount_core::Volume;

use crate::data::{ids_of, par_map, split_indices, Batch, Pool, Sealed, SplitIndices};
use crate::manifest::RunContext;
use crate::spec::{derive_seed, ExperimentSpec};
use crate::table::Table;

/// Hash of an ordered id list, stored in model sidecars.
pub fn ids_sha256(ids: &[String]) -> String {
    hex::encode(Sha256::digest(ids.join("\n").as_bytes()))
}

/// A trained network together with its sidecar and training record.
pub struct Trained {
    pub model: Model,
    pub sidecar: ModelSidecar,
    pub state_summary: TrainSummary,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub history: Vec<volcount_core::regnet::EpochStats>,
}

/// Trains one network; `seed` drives initialization, shuffling and augmentation.
pub fn train_cnn(
    network: &NetworkConfig,
    augment: &AugmentConfig,
    training: &TrainConfig,
    train_set: &Batch,
    val_set: &Batch,
    seed: u64,
) -> Result<Trained> {
    let model = Model::new(network.clone(), derive_seed(seed, "init", 0))?;
    let cfg = TrainConfig {
        seed: derive_seed(seed, "train", 0),
        ..training.clone()
    };
    let TrainState {
        model,
        best_epoch,
        best_val_loss,
        epochs_run,
        history,
        ..
    } = train(model, &train_set.examples, &val_set.examples, augment, &cfg).context("training the network")?;
    let sidecar = ModelSidecar {
        network: network.clone(),
        augment: augment.clone(),
        seed,
        stopping_epoch: best_epoch,
        train_manifest_sha256: ids_sha256(&train_set.ids()),
        val_manifest_sha256: ids_sha256(&val_set.ids()),
    };
    Ok(Trained {
        model,
        sidecar,
        state_summary: TrainSummary {
            best_epoch,
            epochs_run,
            best_val_loss,
            history,
        },
    })
}

pub fn history_table(s: &TrainSummary) -> Table {
    let mut t = Table::new(&["epoch", "train_loss", "val_loss"]);
    for h in &s.history {
        t.push(vec![h.epoch.into(), h.train_loss.into(), h.val_loss.into()]);
    }
    t
}

pub fn score_all(model: &Model, inputs: &[&Volume], threads: usize) -> Result<Vec<f64>> {
    par_map(threads, inputs, |v| Ok(model.score(v)?))
}

/// The scans of the main train/val/test split of a spec.
pub struct MainSplit {
    pub pool: Pool,
    pub idx: SplitIndices,
}

impl MainSplit {
    pub fn new(spec: &ExperimentSpec) -> Result<Self> {
        let pool = Pool::from_spec(spec, "data", spec.splits.total())?;
        let idx = split_indices(pool.len(), &spec.splits, derive_seed(spec.seed, "split", 0))?;
        Ok(Self { pool, idx })
    }

    pub fn record(&self, ctx: &mut RunContext) -> Result<()> {
        ctx.record_split("train", ids_of(&self.pool, &self.idx.train))?;
        ctx.record_split("val", ids_of(&self.pool, &self.idx.val))?;
        ctx.record_split("test", ids_of(&self.pool, &self.idx.test))
    }

    pub fn train_val(&self, spec: &ExperimentSpec, threads: usize) -> Result<(Batch, Batch)> {
        Ok((
            self.pool.load(&self.idx.train, &spec.preprocess, false, threads)?,
            self.pool.load(&self.idx.val, &spec.preprocess, false, threads)?,
        ))
    }

    pub fn test(&self, spec: &ExperimentSpec, with_masks: bool, threads: usize) -> Result<Sealed> {
        Ok(Sealed::new(self.pool.load(&self.idx.test, &spec.preprocess, with_masks, threads)?))
    }
}

/// The spec's model files, or `count` networks trained on the main split
/// (saved as `models/cnn_<k>`) when none are listed.
pub fn models_for(ctx: &mut RunContext, spec: &ExperimentSpec, count: usize, threads: usize) -> Result<Vec<Model>> {
    if !spec.models.is_empty() {
        return spec
            .models
            .iter()
            .map(|stem| {
                let (m, _) = load_model(stem).with_context(|| format!("loading model {}", stem.display()))?;
                if m.config().input_dims != spec.preprocess.crop_dims {
                    return Err(crate::spec::spec_err(format!(
                        "model {} expects input {:?}, crops are {:?}",
                        stem.display(),
                        m.config().input_dims,
                        spec.preprocess.crop_dims
                    )));
                }
                Ok(m)
            })
            .collect();
    }
    let split = MainSplit::new(spec)?;
    ctx.record_split("train", ids_of(&split.pool, &split.idx.train))?;
    ctx.record_split("val", ids_of(&split.pool, &split.idx.val))?;
    let (tr, va) = split.train_val(spec, threads)?;
    let mut out = Vec::new();
    for k in 0..count {
        let seed = derive_seed(spec.seed, "cnn", k as u64);
        ctx.record_seed(&format!("cnn_{k}"), seed)?;
        let t = train_cnn(&spec.network, &spec.augment, &spec.training, &tr, &va, seed)?;
        ctx.save_model(&format!("cnn_{k}"), &t.model, &t.sidecar)?;
        out.push(t.model);
    }
    Ok(out)
}

/// Test metrics; correlations undefined for constant predictions are NaN.
pub fn evaluate(pred: &[f64], labels: &[f64], kind: IccKind) -> Result<EvalReport> {
    match EvalReport::compute(pred, labels, kind) {
        Ok(r) => Ok(r),
        Err(volcount_core::Error::Degenerate(_)) => Ok(EvalReport {
            n: pred.len(),
            pearson: f64::NAN,
            spearman: f64::NAN,
            icc: icc_pair(pred, labels, kind).unwrap_or(f64::NAN),
            mse: mse(pred, labels)?,
            icc_kind: kind,
            ci: None,
        }),
        Err(e) => Err(e.into()),
    }
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}
