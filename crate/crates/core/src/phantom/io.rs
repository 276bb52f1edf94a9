use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PhantomConfig, ScoredScan, GENERATOR_VERSION};
use crate::error::{Error, Result};
use crate::volgrid::{read_mask, read_volume, write_mask, write_volume};

/// JSON sidecar written next to every scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanManifest {
    pub seed: u64,
    pub score: usize,
    pub annotations: Vec<[usize; 3]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub age: Option<f64>,
    pub cfg_sha256: String,
    pub generator_version: String,
}

/// SHA-256 of the canonical JSON form of `cfg`.
pub fn cfg_hash(cfg: &PhantomConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

/// Writes `<name>.svol`, `<name>.roi.svol` and `<name>.json` into `dir`.
pub fn write_scan(dir: impl AsRef<Path>, name: &str, scan: &ScoredScan, cfg: &PhantomConfig) -> Result<ScanManifest> {
    let dir = dir.as_ref();
    write_volume(dir.join(format!("{name}.svol")), &scan.volume)?;
    write_mask(dir.join(format!("{name}.roi.svol")), &scan.roi_mask)?;
    let manifest = ScanManifest {
        seed: scan.seed,
        score: scan.score,
        annotations: scan.annotations.clone(),
        age: scan.age,
        cfg_sha256: cfg_hash(cfg),
        generator_version: GENERATOR_VERSION.to_owned(),
    };
    let path = dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_scan(dir: impl AsRef<Path>, name: &str) -> Result<(ScoredScan, ScanManifest)> {
    let dir = dir.as_ref();
    let path = dir.join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ScanManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        container: "scan manifest",
        field: "json",
        detail: e.to_string(),
    })?;
    if manifest.annotations.len() != manifest.score {
        return Err(Error::Validation(format!(
            "{name}: {} annotations for score {}",
            manifest.annotations.len(),
            manifest.score
        )));
    }
    let volume = read_volume(dir.join(format!("{name}.svol")))?;
    let roi_mask = read_mask(dir.join(format!("{name}.roi.svol")))?;
    if volume.dims() != roi_mask.dims() {
        return Err(Error::Shape(format!("{name}: volume and mask dims differ")));
    }
    let scan = ScoredScan {
        volume,
        roi_mask,
        score: manifest.score,
        annotations: manifest.annotations.clone(),
        seed: manifest.seed,
        age: manifest.age,
    };
    Ok((scan, manifest))
}
