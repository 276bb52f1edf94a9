use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use volcount_core::phantom::{generate_scan, read_scan, PhantomConfig, ScoredScan};
use volcount_core::regnet::Example;
use volcount_core::volgrid::{make_smooth_roi, PreprocessConfig};
use volcount_core::{MaskVolume, Volume};

use crate::spec::{derive_seed, spec_err, ExperimentSpec, Splits};

/// Index file written by `generate` next to the scans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub phantom: PhantomConfig,
    pub entries: Vec<IndexEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub seed: u64,
}

pub const INDEX_FILE: &str = "dataset.json";

impl DatasetIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| spec_err(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| spec_err(format!("{}: {e}", path.display())))
    }
}

/// The cropped region masks needed by the interpretability runs.
#[derive(Clone, Debug)]
pub struct Masks {
    pub smooth: Volume,
    pub roi: MaskVolume,
}

#[derive(Clone, Debug)]
pub struct ScanMeta {
    pub id: String,
    pub seed: u64,
    pub score: usize,
    /// Lesion centres in cropped coordinates; centres outside the crop are dropped.
    pub annotations: Vec<[usize; 3]>,
    pub age: Option<f64>,
    pub masks: Option<Masks>,
}

/// Preprocessed scans with their labels.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub examples: Vec<Example>,
    pub meta: Vec<ScanMeta>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn inputs(&self) -> Vec<&Volume> {
        self.examples.iter().map(|e| &e.input).collect()
    }
}

/// A held-out batch whose labels stay hidden until [`Sealed::unseal`]
/// is called for the final evaluation.
pub struct Sealed(Batch);

impl Sealed {
    pub fn new(b: Batch) -> Self {
        Self(b)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.0.ids()
    }

    pub fn inputs(&self) -> Vec<&Volume> {
        self.0.inputs()
    }

    pub fn unseal(self) -> Batch {
        self.0
    }
}

/// Where scans come from: synthesized from seeds, or read from a directory.
#[derive(Clone, Debug)]
enum Source {
    Phantom,
    Directory(PathBuf),
}

/// An ordered list of scans that can be loaded on demand.
#[derive(Clone, Debug)]
pub struct Pool {
    source: Source,
    phantom: PhantomConfig,
    pub ids: Vec<String>,
    pub seeds: Vec<u64>,
}

pub fn scan_id(seed: u64) -> String {
    format!("scan_{seed:016x}")
}

impl Pool {
    /// `n` scans for the stream `label`: synthesized from derived seeds, or the
    /// first `n` entries of the spec's dataset directory.
    pub fn from_spec(spec: &ExperimentSpec, label: &str, n: usize) -> Result<Self> {
        match &spec.dataset {
            None => Ok(Self::synthetic(&spec.phantom, spec.seed, label, n)),
            Some(dir) => {
                let index = DatasetIndex::load(dir)?;
                if index.entries.len() < n {
                    return Err(spec_err(format!(
                        "dataset {} holds {} scans, {n} needed",
                        dir.display(),
                        index.entries.len()
                    )));
                }
                let entries = &index.entries[..n];
                Ok(Self {
                    source: Source::Directory(dir.join("scans")),
                    phantom: index.phantom.clone(),
                    ids: entries.iter().map(|e| e.id.clone()).collect(),
                    seeds: entries.iter().map(|e| e.seed).collect(),
                })
            }
        }
    }

    pub fn synthetic(phantom: &PhantomConfig, master: u64, label: &str, n: usize) -> Self {
        let seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(master, label, i)).collect();
        Self {
            source: Source::Phantom,
            phantom: phantom.clone(),
            ids: seeds.iter().map(|&s| scan_id(s)).collect(),
            seeds,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn phantom(&self) -> &PhantomConfig {
        &self.phantom
    }

    fn scan(&self, i: usize) -> Result<ScoredScan> {
        match &self.source {
            Source::Phantom => Ok(generate_scan(&self.phantom, self.seeds[i])?),
            Source::Directory(dir) => Ok(read_scan(dir, &self.ids[i])
                .with_context(|| format!("loading scan {}", self.ids[i]))?
                .0),
        }
    }

    /// Loads and preprocesses the scans at `idx`.
    pub fn load(&self, idx: &[usize], pre: &PreprocessConfig, with_masks: bool, threads: usize) -> Result<Batch> {
        let items: Vec<(Example, ScanMeta)> = par_map(threads, idx, |&i| {
            let scan = self.scan(i)?;
            prepare(&scan, self.ids[i].clone(), pre, with_masks)
        })?;
        let (examples, meta) = items.into_iter().unzip();
        Ok(Batch { examples, meta })
    }

    /// The same scenes rendered without noise, texture or motion. Directory
    /// datasets are re-rendered from their recorded seeds and configuration.
    pub fn load_noise_free(&self, idx: &[usize], pre: &PreprocessConfig, threads: usize) -> Result<Batch> {
        let cfg = self.phantom.noise_free();
        let items: Vec<(Example, ScanMeta)> = par_map(threads, idx, |&i| {
            let scan = generate_scan(&cfg, self.seeds[i])?;
            prepare(&scan, self.ids[i].clone(), pre, false)
        })?;
        let (examples, meta) = items.into_iter().unzip();
        Ok(Batch { examples, meta })
    }
}

pub fn prepare(scan: &ScoredScan, id: String, pre: &PreprocessConfig, with_masks: bool) -> Result<(Example, ScanMeta)> {
    let roi = make_smooth_roi(&scan.volume, &scan.roi_mask, pre).with_context(|| format!("preprocessing {id}"))?;
    let dims = roi.volume.dims();
    let annotations = scan
        .annotations
        .iter()
        .filter_map(|a| {
            let mut c = [0usize; 3];
            for k in 0..3 {
                let v = a[k] as i64 - roi.origin[k];
                if v < 0 || v >= dims[k] as i64 {
                    return None;
                }
                c[k] = v as usize;
            }
            Some(c)
        })
        .collect();
    let masks = with_masks.then(|| Masks {
        smooth: roi.smooth_mask.clone(),
        roi: roi.roi.clone(),
    });
    Ok((
        Example {
            input: roi.volume,
            label: scan.score as f64,
        },
        ScanMeta {
            id,
            seed: scan.seed,
            score: scan.score,
            annotations,
            age: scan.age,
            masks,
        },
    ))
}

/// Order-preserving parallel map on a pool of `threads` workers.
pub fn par_map<T, U, F>(threads: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Train/val/test index sets cut from a seeded permutation of `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, splits: &Splits, seed: u64) -> Result<SplitIndices> {
    if splits.total() > n {
        return Err(spec_err(format!("splits need {} scans, pool holds {n}", splits.total())));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = perm.split_at(splits.train);
    let (val, rest) = rest.split_at(splits.val);
    Ok(SplitIndices {
        train: train.to_vec(),
        val: val.to_vec(),
        test: rest[..splits.test].to_vec(),
    })
}

pub fn ids_of(pool: &Pool, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| pool.ids[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint_and_seeded() {
        let s = Splits { train: 10, val: 5, test: 5 };
        let a = split_indices(25, &s, 3).unwrap();
        let b = split_indices(25, &s, 3).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 20);
        assert_ne!(a, split_indices(25, &s, 4).unwrap());
        assert!(split_indices(19, &s, 0).is_err());
    }

    #[test]
    fn annotations_map_into_the_crop() {
        let mut cfg = PhantomConfig::default();
        cfg.counts.fixed = Some(4);
        let pool = Pool::synthetic(&cfg, 1, "t", 2);
        let b = pool.load(&[0, 1], &PreprocessConfig::default(), true, 1).unwrap();
        for (ex, m) in b.examples.iter().zip(&b.meta) {
            assert_eq!(m.annotations.len(), 4);
            let masks = m.masks.as_ref().unwrap();
            for a in &m.annotations {
                assert!(masks.roi.is_set(a[0], a[1], a[2]));
                assert!(ex.input.get(a[0], a[1], a[2]) > 0.0);
            }
        }
    }

    #[test]
    fn parallel_load_matches_serial() {
        let pool = Pool::synthetic(&PhantomConfig::default(), 2, "t", 4);
        let pre = PreprocessConfig::default();
        let a = pool.load(&[0, 1, 2, 3], &pre, false, 1).unwrap();
        let b = pool.load(&[0, 1, 2, 3], &pre, false, 3).unwrap();
        for (x, y) in a.examples.iter().zip(&b.examples) {
            assert!(x.input.bit_eq(&y.input));
            assert_eq!(x.label, y.label);
        }
    }
}
