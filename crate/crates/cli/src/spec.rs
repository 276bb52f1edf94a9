use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use volcount_core::baselines::{BowConfig, ForestConfig};
use volcount_core::interpret::OcclusionConfig;
use volcount_core::phantom::{AgeEffect, PhantomConfig};
use volcount_core::regnet::{AugmentConfig, NetworkConfig, TrainConfig};
use volcount_core::stats::IccKind;
use volcount_core::volgrid::PreprocessConfig;

/// A problem with the experiment description itself, as opposed to a
/// failure while running it. The binary maps it to exit code 2.
#[derive(Debug, Error)]
#[error("spec error: {0}")]
pub struct SpecError(pub String);

pub fn spec_err(msg: impl Into<String>) -> anyhow::Error {
    SpecError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Splits {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for Splits {
    fn default() -> Self {
        Self {
            train: 400,
            val: 100,
            test: 100,
        }
    }
}

impl Splits {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// The five quantifiers of the comparison table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cnn,
    Intensity,
    Volume,
    Components,
    BowForest,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Cnn,
        Method::Intensity,
        Method::Volume,
        Method::Components,
        Method::BowForest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cnn => "cnn",
            Method::Intensity => "intensity",
            Method::Volume => "volume",
            Method::Components => "components",
            Method::BowForest => "bow_forest",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSpec {
    /// Quantile steps of the threshold search grid.
    pub threshold_steps: usize,
    pub bow: BowConfig,
    pub forest: ForestConfig,
    /// Also score the components baseline on noise-free renders of the
    /// same phantoms, with its threshold tuned on noise-free training renders.
    pub noise_free_reference: bool,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            threshold_steps: 200,
            bow: BowConfig::default(),
            forest: ForestConfig::default(),
            noise_free_reference: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningCurveSpec {
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    /// Share of each budget used for validation.
    pub val_fraction: f64,
    pub bootstrap_reps: usize,
    pub ci_level: f64,
}

impl Default for LearningCurveSpec {
    fn default() -> Self {
        Self {
            sizes: vec![40, 100, 200, 400],
            repetitions: 3,
            val_fraction: 0.2,
            bootstrap_reps: 1000,
            ci_level: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReproSpec {
    pub pairs: usize,
    /// Models trained with consecutive seeds when no model files are given.
    pub ensemble: usize,
}

impl Default for ReproSpec {
    fn default() -> Self {
        Self { pairs: 30, ensemble: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgeSpec {
    pub cohort: usize,
    pub effect: AgeEffect,
    pub bin_years: f64,
}

impl Default for AgeSpec {
    fn default() -> Self {
        Self {
            cohort: 400,
            effect: AgeEffect::default(),
            bin_years: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpretSpec {
    /// Annotated test phantoms analysed.
    pub phantoms: usize,
    pub occlusion: OcclusionConfig,
    /// Saliency voxels closer than this to an annotation count as lesion.
    pub exclusion_radius: f64,
    /// Write every saliency map under `maps/`.
    pub write_maps: bool,
}

impl Default for InterpretSpec {
    fn default() -> Self {
        Self {
            phantoms: 20,
            occlusion: OcclusionConfig::default(),
            exclusion_radius: 3.0,
            write_maps: false,
        }
    }
}

/// One row of the architecture sweep; unset fields inherit the base spec.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Variant {
    pub name: String,
    pub network: Option<NetworkConfig>,
    pub augment: Option<AugmentConfig>,
    pub loss: Option<volcount_core::LossKind>,
}

/// Everything a run needs, loaded from `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    /// A directory written by `generate`; phantoms are synthesized in memory when unset.
    pub dataset: Option<PathBuf>,
    pub phantom: PhantomConfig,
    pub preprocess: PreprocessConfig,
    pub splits: Splits,
    pub network: NetworkConfig,
    pub augment: AugmentConfig,
    pub training: TrainConfig,
    pub methods: Vec<Method>,
    pub baselines: BaselineSpec,
    pub icc_kind: IccKind,
    pub learning_curve: LearningCurveSpec,
    pub repro: ReproSpec,
    pub age: AgeSpec,
    pub interpret: InterpretSpec,
    pub variants: Vec<Variant>,
    /// Trained model stems (`<stem>.tnsr` + `<stem>.json`) for the commands
    /// that only need inference; a model is trained first when empty.
    pub models: Vec<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: None,
            phantom: PhantomConfig::default(),
            preprocess: PreprocessConfig::default(),
            splits: Splits::default(),
            network: NetworkConfig::desk(),
            augment: AugmentConfig::default(),
            training: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
            baselines: BaselineSpec::default(),
            icc_kind: IccKind::default(),
            learning_curve: LearningCurveSpec::default(),
            repro: ReproSpec::default(),
            age: AgeSpec::default(),
            interpret: InterpretSpec::default(),
            variants: default_variants(),
            models: Vec::new(),
        }
    }
}

/// The loss and augmentation rows of the architecture sweep at desk scale.
pub fn default_variants() -> Vec<Variant> {
    use volcount_core::LossKind;
    let mut out = vec![Variant {
        name: "base".into(),
        ..Default::default()
    }];
    for (name, loss) in [
        ("loss_mce", LossKind::Mce),
        ("loss_mqe", LossKind::Mqe),
        ("loss_tukey", LossKind::tukey()),
        ("loss_rmse", LossKind::Rmse),
    ] {
        out.push(Variant {
            name: name.into(),
            loss: Some(loss),
            ..Default::default()
        });
    }
    out.push(Variant {
        name: "no_augmentation".into(),
        augment: Some(AugmentConfig::none()),
        ..Default::default()
    });
    let mut no_fc = NetworkConfig::desk();
    no_fc.fc_layout.clear();
    out.push(Variant {
        name: "no_hidden_fc".into(),
        network: Some(no_fc),
        ..Default::default()
    });
    out
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| spec_err(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| spec_err(format!("{}: {e}", path.display())))
    }

    /// Canonical JSON, hashed into the manifest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let wrap = |e: volcount_core::Error| spec_err(e.to_string());
        self.phantom.validate().map_err(wrap)?;
        self.preprocess.validate().map_err(wrap)?;
        self.augment.validate().map_err(wrap)?;
        self.network.layers().map_err(wrap)?;
        if self.network.input_dims != self.preprocess.crop_dims {
            return Err(spec_err(format!(
                "network input {:?} differs from crop dims {:?}",
                self.network.input_dims, self.preprocess.crop_dims
            )));
        }
        let s = &self.splits;
        if s.train < 2 || s.val < 3 || s.test < 3 {
            return Err(spec_err("splits need train >= 2, val >= 3 and test >= 3"));
        }
        if self.methods.is_empty() {
            return Err(spec_err("no methods selected"));
        }
        let lc = &self.learning_curve;
        if lc.repetitions == 0 {
            return Err(spec_err("repetitions must be >= 1"));
        }
        if !(lc.val_fraction > 0.0 && lc.val_fraction < 1.0) {
            return Err(spec_err("val_fraction must lie in (0, 1)"));
        }
        if lc.sizes.iter().any(|&n| n < 5) {
            return Err(spec_err("learning-curve sizes must be >= 5"));
        }
        if self.repro.pairs < 3 || self.repro.ensemble == 0 {
            return Err(spec_err("repro needs >= 3 pairs and ensemble >= 1"));
        }
        if !(self.age.bin_years > 0.0) {
            return Err(spec_err("age bin width must be > 0"));
        }
        Ok(())
    }

    /// The phantom configuration with the age effect switched on.
    pub fn age_phantom(&self) -> PhantomConfig {
        let mut c = self.phantom.clone();
        c.age = Some(self.age.effect.clone());
        c
    }
}

/// A sub-seed for `label` and `index`, independent of every other pair.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentSpec::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let s: ExperimentSpec = serde_json::from_str(r#"{"seed": 7, "splits": {"train": 20}}"#).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.splits.train, 20);
        assert_eq!(s.splits.val, 100);
        assert_eq!(s.methods.len(), 5);
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(serde_json::from_str::<ExperimentSpec>(r#"{"sed": 7}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentSpec::default();
        let mut b = a.clone();
        assert_eq!(a.sha256(), b.sha256());
        b.seed = 1;
        assert_ne!(a.sha256(), b.sha256());
    }

    #[test]
    fn zero_repetitions_is_a_spec_error() {
        let mut s = ExperimentSpec::default();
        s.learning_curve.repetitions = 0;
        assert!(s.validate().unwrap_err().downcast_ref::<SpecError>().is_some());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_eq!(derive_seed(3, "x", 9), derive_seed(3, "x", 9));
    }
}
