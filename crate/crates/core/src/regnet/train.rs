use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward, Model};
use crate::error::{Error, Result};
use crate::tensor::{AdadeltaState, Graph, Tensor};
use crate::volgrid::{rigid_resample, RigidTransform};
use crate::Volume;

/// Random rigid augmentation drawn independently for every training visit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Rotation drawn uniformly from `[-rotation_max, rotation_max]` per axis.
    pub rotation_max: f64,
    /// Translation in voxels, drawn uniformly from `[-translation_max, translation_max]`.
    pub translation_max: f64,
    /// Axes that may be flipped, each with probability one half.
    pub flip_axes: [bool; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_max: 0.2,
            translation_max: 2.0,
            flip_axes: [true; 3],
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            rotation_max: 0.0,
            translation_max: 0.0,
            flip_axes: [false; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.rotation_max) || !ok(self.translation_max) || self.rotation_max >= std::f64::consts::PI {
            return Err(Error::Config(format!("invalid augmentation ranges {self:?}")));
        }
        Ok(())
    }

    pub fn is_noop(&self) -> bool {
        self.rotation_max == 0.0 && self.translation_max == 0.0 && self.flip_axes == [false; 3]
    }

    pub fn sample(&self, rng: &mut impl Rng) -> RigidTransform {
        let mut t = RigidTransform::identity();
        for a in 0..3 {
            if self.rotation_max > 0.0 {
                t.rotation[a] = rng.random_range(-self.rotation_max..=self.rotation_max);
            }
            if self.translation_max > 0.0 {
                t.translation[a] = rng.random_range(-self.translation_max..=self.translation_max);
            }
            if self.flip_axes[a] {
                t.flips[a] = rng.random_bool(0.5);
            }
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
    pub seed: u64,
    pub rho: f64,
    pub eps: f64,
    /// Start the output bias at the mean training label.
    pub bias_from_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            patience: 20,
            seed: 0,
            rho: AdadeltaState::<f32>::DEFAULT_RHO,
            eps: AdadeltaState::<f32>::DEFAULT_EPS,
            bias_from_labels: true,
        }
    }
}

/// A preprocessed input volume with its count label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Volume,
    pub label: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct TrainState {
    /// Best-validation snapshot.
    pub model: Model,
    pub optimizer: AdadeltaState,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub history: Vec<EpochStats>,
    pub seed: u64,
}

/// Per-sample Adadelta training with on-the-fly augmentation and early
/// stopping on the epoch-mean validation loss.
pub fn train(
    mut model: Model,
    train_set: &[Example],
    val_set: &[Example],
    aug: &AugmentConfig,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Usage("training and validation sets must be non-empty".into()));
    }
    aug.validate()?;
    for ex in train_set.iter().chain(val_set) {
        if ex.input.dims() != model.config().input_dims || !ex.label.is_finite() {
            return Err(Error::Shape(format!(
                "example dims {:?} (label {}) do not fit network input {:?}",
                ex.input.dims(),
                ex.label,
                model.config().input_dims
            )));
        }
    }
    if cfg.bias_from_labels {
        let mean = train_set.iter().map(|e| e.label).sum::<f64>() / train_set.len() as f64;
        model.set_output_bias(mean as f32);
    }
    let loss = model.config().loss;
    let lens: Vec<usize> = model.params().iter().map(Tensor::len).collect();
    let mut opt = AdadeltaState::with_hyper(&lens, cfg.rho, cfg.eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut history = Vec::new();
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let ex = &train_set[i];
            let input = if aug.is_noop() {
                Tensor::from_volume(&ex.input)
            } else {
                Tensor::from_volume(&rigid_resample(&ex.input, &aug.sample(&mut rng))?)
            };
            let mut g = Graph::<f32>::new();
            let fwd = forward(&mut g, model.layers(), model.params(), input, true, false)?;
            let l = g.loss(loss, fwd.output, ex.label)?;
            let lv = g.value(l).data()[0] as f64;
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, sample: i });
            }
            total += lv;
            g.backward(l)?;
            let grads: Vec<Tensor<f32>> = fwd.params.iter().map(|&p| g.grad_or_zeros(p)).collect();
            let refs: Vec<&Tensor<f32>> = grads.iter().collect();
            opt.step(model.params_mut(), &refs)?;
        }
        let val_loss = val_set
            .iter()
            .map(|ex| model.score(&ex.input).map(|p| loss.value(p, ex.label)))
            .sum::<Result<f64>>()?
            / val_set.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, sample: usize::MAX });
        }
        history.push(EpochStats {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss,
        });
        epochs_run = epoch + 1;
        if val_loss < best.0 {
            best = (val_loss, epoch, model.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    Ok(TrainState {
        model: best.2,
        optimizer: opt,
        best_epoch: best.1,
        best_val_loss: best.0,
        epochs_run,
        history,
        seed: cfg.seed,
    })
}
