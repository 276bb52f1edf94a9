//! Fitted-baseline persistence: a JSON document for thresholds,
//! calibrations and dictionaries, and the binary `FRST` forest container.
//!
//! `FRST` layout (little-endian): magic, u16 version, u32 feature count,
//! u32 tree count, then per tree a u32 node count and its nodes
//! (u8 tag 0 = leaf with f64 value, 1 = split with u32 feature, f64
//! threshold, u32 left, u32 right), followed by the SHA-256 of everything
//! before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::forest::Node;
use super::{BowDictionary, CalibrationParams, Forest, ForestConfig, Tree};
use crate::error::{Error, Result};

pub const FRST_MAGIC: &[u8; 4] = b"FRST";
pub const FRST_VERSION: u16 = 1;
const CONTAINER: &str = "FRST";

/// Everything a fitted baseline suite needs apart from the forest itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedBaselines {
    pub volume_threshold: f64,
    pub components_threshold: f64,
    pub calibration_intensity: CalibrationParams,
    pub calibration_volume: CalibrationParams,
    pub calibration_components: CalibrationParams,
    pub calibration_forest: CalibrationParams,
    pub forest: ForestConfig,
    pub dictionary: BowDictionary,
}

impl FittedBaselines {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Validation(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            container: "baselines JSON",
            field: "document",
            detail: e.to_string(),
        })
    }
}

pub fn encode_forest(f: &Forest) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FRST_MAGIC);
    out.extend_from_slice(&FRST_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.n_features as u32).to_le_bytes());
    out.extend_from_slice(&(f.trees.len() as u32).to_le_bytes());
    for t in &f.trees {
        out.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
        for n in &t.nodes {
            match *n {
                Node::Leaf(v) => {
                    out.push(0);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(1);
                    out.extend_from_slice(&(feature as u32).to_le_bytes());
                    out.extend_from_slice(&threshold.to_le_bytes());
                    out.extend_from_slice(&(left as u32).to_le_bytes());
                    out.extend_from_slice(&(right as u32).to_le_bytes());
                }
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn fmt(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        container: CONTAINER,
        field,
        detail: detail.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N]> {
        let s = self.buf.get(self.pos..self.pos + N).ok_or_else(|| fmt(field, "truncated"))?;
        self.pos += N;
        Ok(s.try_into().unwrap())
    }
    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(field)?))
    }
    fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(field)?))
    }
}

pub fn decode_forest(bytes: &[u8]) -> Result<Forest> {
    if bytes.len() < 4 + 2 + 8 + 32 {
        return Err(fmt("header", format!("{} bytes is too short", bytes.len())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if &body[..4] != FRST_MAGIC {
        return Err(fmt("magic", format!("{:?}", &body[..4])));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(fmt("checksum", "SHA-256 mismatch"));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = u16::from_le_bytes(r.take("version")?);
    if version != FRST_VERSION {
        return Err(fmt("version", format!("unsupported version {version}")));
    }
    let n_features = r.u32("feature count")? as usize;
    let n_trees = r.u32("tree count")? as usize;
    let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
    for _ in 0..n_trees {
        let n_nodes = r.u32("node count")? as usize;
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
        for _ in 0..n_nodes {
            let [tag] = r.take::<1>("node tag")?;
            nodes.push(match tag {
                0 => Node::Leaf(r.f64("leaf value")?),
                1 => {
                    let feature = r.u32("split feature")? as usize;
                    let threshold = r.f64("split threshold")?;
                    let left = r.u32("child index")? as usize;
                    let right = r.u32("child index")? as usize;
                    if feature >= n_features || left >= n_nodes || right >= n_nodes {
                        return Err(fmt("child index", "split refers outside the tree"));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                t => return Err(fmt("node tag", format!("unknown tag {t}"))),
            });
        }
        if nodes.is_empty() {
            return Err(fmt("node count", "empty tree"));
        }
        trees.push(Tree { nodes });
    }
    if r.pos != body.len() {
        return Err(fmt("payload", format!("{} trailing bytes", body.len() - r.pos)));
    }
    if trees.is_empty() {
        return Err(fmt("tree count", "no trees"));
    }
    Ok(Forest { n_features, trees })
}

pub fn write_forest(path: impl AsRef<Path>, f: &Forest) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_forest(f)).map_err(|e| Error::io(path, e))
}

pub fn read_forest(path: impl AsRef<Path>) -> Result<Forest> {
    let path = path.as_ref();
    decode_forest(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BowConfig;

    fn forest() -> Forest {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i / 4) as f64).collect();
        Forest::fit(
            &x,
            &y,
            &ForestConfig {
                trees: 4,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn forest_round_trip() {
        let f = forest();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.frst");
        write_forest(&p, &f).unwrap();
        assert_eq!(read_forest(&p).unwrap(), f);
    }

    #[test]
    fn corrupt_forest_names_field() {
        let mut b = encode_forest(&forest());
        b[10] ^= 1;
        assert!(matches!(decode_forest(&b), Err(Error::Format { field: "checksum", .. })));
        let mut b = encode_forest(&forest());
        b[0] = b'X';
        assert!(matches!(decode_forest(&b), Err(Error::Format { field: "magic", .. })));
        assert!(matches!(decode_forest(&b[..20]), Err(Error::Format { field: "header", .. })));
    }

    #[test]
    fn json_round_trip() {
        let fb = FittedBaselines {
            volume_threshold: 0.5,
            components_threshold: 0.6,
            calibration_intensity: CalibrationParams { a: 2.0, b: -1.0 },
            calibration_volume: CalibrationParams::default(),
            calibration_components: CalibrationParams::default(),
            calibration_forest: CalibrationParams::default(),
            forest: ForestConfig::default(),
            dictionary: BowDictionary::unfitted(BowConfig::default()),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.json");
        fb.save_json(&p).unwrap();
        assert_eq!(FittedBaselines::load_json(&p).unwrap(), fb);
    }
}
