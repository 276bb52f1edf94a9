use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AugmentConfig, Layer, Model, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::io::{read_tensors, write_tensors, NamedTensor};

/// JSON metadata stored next to the TNSR weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub network: NetworkConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub stopping_epoch: usize,
    pub train_manifest_sha256: String,
    pub val_manifest_sha256: String,
}

fn param_names(model: &Model) -> Vec<String> {
    let mut names = Vec::new();
    let (mut conv, mut fc) = (0, 0);
    for l in model.layers() {
        let stem = match l {
            Layer::Conv { .. } => {
                conv += 1;
                format!("conv{}", conv - 1)
            }
            Layer::Dense { .. } => {
                fc += 1;
                format!("fc{}", fc - 1)
            }
            Layer::Pool { .. } => continue,
        };
        names.push(format!("{stem}.weight"));
        names.push(format!("{stem}.bias"));
    }
    names
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("tnsr"), stem.with_extension("json"))
}

/// Writes `<stem>.tnsr` and `<stem>.json`.
pub fn save_model(stem: impl AsRef<Path>, model: &Model, sidecar: &ModelSidecar) -> Result<()> {
    if &sidecar.network != model.config() {
        return Err(Error::Usage("sidecar network config differs from the model".into()));
    }
    let (tnsr, json) = paths(stem.as_ref());
    let named: Vec<NamedTensor> = param_names(model).into_iter().zip(model.params().iter().cloned()).collect();
    write_tensors(&tnsr, &named)?;
    let text = serde_json::to_string_pretty(sidecar).map_err(|e| Error::Validation(e.to_string()))?;
    std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
}

pub fn load_model(stem: impl AsRef<Path>) -> Result<(Model, ModelSidecar)> {
    let (tnsr, json) = paths(stem.as_ref());
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: ModelSidecar = serde_json::from_str(&text).map_err(|e| Error::Format {
        container: "model sidecar",
        field: "json",
        detail: e.to_string(),
    })?;
    let named = read_tensors(&tnsr)?;
    let (names, params): (Vec<String>, Vec<_>) = named.into_iter().unzip();
    let model = Model::from_params(sidecar.network.clone(), params)?;
    if names != param_names(&model) {
        return Err(Error::Format {
            container: "TNSR",
            field: "name",
            detail: "tensor names do not match the network layout".into(),
        });
    }
    Ok((model, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = NetworkConfig::desk();
        let model = Model::new(cfg.clone(), 9).unwrap();
        let side = ModelSidecar {
            network: cfg,
            augment: AugmentConfig::default(),
            seed: 9,
            stopping_epoch: 3,
            train_manifest_sha256: "ab".into(),
            val_manifest_sha256: "cd".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        save_model(&stem, &model, &side).unwrap();
        let (m2, s2) = load_model(&stem).unwrap();
        assert_eq!(m2, model);
        assert_eq!(s2, side);
    }
}
