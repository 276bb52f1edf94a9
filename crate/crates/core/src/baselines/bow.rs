use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::Volume;

/// 4×4 spatial cells × 8 orientation bins.
pub const DESCRIPTOR_LEN: usize = 128;
const CELLS: usize = 4;
const BINS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BowConfig {
    pub grid_stride: usize,
    /// Side of the square patch; must be a multiple of 4.
    pub patch_size: usize,
    /// Words per slice, including the null word.
    pub dictionary_size: usize,
    /// Axial slices centred on the middle slice.
    pub slices: usize,
    pub kmeans_iters: usize,
    /// Cap on descriptors per slice used to learn centroids.
    pub max_train_descriptors: usize,
    pub seed: u64,
}

impl Default for BowConfig {
    fn default() -> Self {
        Self {
            grid_stride: 4,
            patch_size: 16,
            dictionary_size: 100,
            slices: 15,
            kmeans_iters: 25,
            max_train_descriptors: 5000,
            seed: 0,
        }
    }
}

impl BowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dictionary_size < 1 {
            return Err(Error::Config("dictionary_size must be >= 1".into()));
        }
        if self.slices < 1 || self.grid_stride < 1 {
            return Err(Error::Config("slices and grid_stride must be >= 1".into()));
        }
        if self.patch_size < CELLS || self.patch_size % CELLS != 0 {
            return Err(Error::Config(format!(
                "patch_size {} must be a positive multiple of {CELLS}",
                self.patch_size
            )));
        }
        Ok(())
    }

    fn slice_range(&self, v: &Volume) -> Result<std::ops::Range<usize>> {
        let [nx, ny, nz] = v.dims();
        if nz < self.slices {
            return Err(Error::Shape(format!("volume has {nz} slices, {} required", self.slices)));
        }
        if nx < self.patch_size || ny < self.patch_size {
            return Err(Error::Shape(format!(
                "slice {nx}×{ny} is smaller than the {} voxel patch",
                self.patch_size
            )));
        }
        let start = nz / 2 - self.slices / 2;
        Ok(start..start + self.slices)
    }
}

/// Dense SIFT-style descriptors of axial slice `z`: gradient-orientation
/// histograms over a 4×4 cell grid, normalized, clipped at 0.2 and
/// renormalized. Patches with no gradient yield `None` (the null word).
pub fn descriptors_for_slice(v: &Volume, z: usize, cfg: &BowConfig) -> Vec<Option<Vec<f32>>> {
    let [nx, ny, _] = v.dims();
    let plane = |x: usize, y: usize| v.get(x, y, z) as f64;
    let mut mag = vec![0.0; nx * ny];
    let mut bin = vec![0usize; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let gx = plane((x + 1).min(nx - 1), y) - plane(x.saturating_sub(1), y);
            let gy = plane(x, (y + 1).min(ny - 1)) - plane(x, y.saturating_sub(1));
            let m = gx.hypot(gy);
            let theta = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
            mag[x + nx * y] = m;
            bin[x + nx * y] = ((theta / std::f64::consts::TAU * BINS as f64) as usize).min(BINS - 1);
        }
    }
    let cell = cfg.patch_size / CELLS;
    let mut out = Vec::new();
    let mut y0 = 0;
    while y0 + cfg.patch_size <= ny {
        let mut x0 = 0;
        while x0 + cfg.patch_size <= nx {
            let mut d = vec![0.0f64; DESCRIPTOR_LEN];
            for py in 0..cfg.patch_size {
                for px in 0..cfg.patch_size {
                    let i = (x0 + px) + nx * (y0 + py);
                    let c = (py / cell) * CELLS + px / cell;
                    d[c * BINS + bin[i]] += mag[i];
                }
            }
            out.push(normalize(d));
            x0 += cfg.grid_stride;
        }
        y0 += cfg.grid_stride;
    }
    out
}

fn normalize(mut d: Vec<f64>) -> Option<Vec<f32>> {
    let norm = |d: &[f64]| d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n = norm(&d);
    if n <= 1e-12 {
        return None;
    }
    d.iter_mut().for_each(|v| *v = (*v / n).min(0.2));
    let n = norm(&d);
    Some(d.iter().map(|v| (v / n) as f32).collect())
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f32>], d: &[f32]) -> usize {
    let mut best = (0, f32::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let dist = sq_dist(c, d);
        if dist < best.1 {
            best = (k, dist);
        }
    }
    best.0
}

/// k-means++ seeding followed by a fixed number of Lloyd iterations.
/// Empty clusters keep their previous centroid.
fn kmeans(data: &[&[f32]], k: usize, iters: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    if data.is_empty() || k == 0 {
        return Vec::new();
    }
    let mut centroids = vec![data[rng.random_range(0..data.len())].to_vec()];
    let mut d2: Vec<f32> = data.iter().map(|d| sq_dist(d, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().map(|&v| v as f64).sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = data.len() - 1;
            for (i, &v) in d2.iter().enumerate() {
                r -= v as f64;
                if r < 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[pick].to_vec();
        for (i, d) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(d, &c));
        }
        centroids.push(c);
    }
    for _ in 0..iters {
        let mut sums = vec![vec![0.0f64; DESCRIPTOR_LEN]; k];
        let mut counts = vec![0usize; k];
        for d in data {
            let j = nearest(&centroids, d);
            counts[j] += 1;
            for (s, &v) in sums[j].iter_mut().zip(d.iter()) {
                *s += v as f64;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| (s / counts[j] as f64) as f32).collect();
            }
        }
    }
    centroids
}

/// Per-slice visual-word dictionaries. Word 0 of every slice is the null
/// word for zero-gradient patches; the other `dictionary_size - 1` words
/// are k-means centroids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BowDictionary {
    pub config: BowConfig,
    /// `slices × (dictionary_size - 1)` centroids; empty until fitted.
    pub centroids: Vec<Vec<Vec<f32>>>,
}

impl BowDictionary {
    pub fn unfitted(config: BowConfig) -> Self {
        Self {
            config,
            centroids: Vec::new(),
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.centroids.len() == self.config.slices
    }

    pub fn fit(config: BowConfig, volumes: &[&Volume]) -> Result<Self> {
        config.validate()?;
        if volumes.is_empty() {
            return Err(Error::Validation("no training volumes for the dictionary".into()));
        }
        let mut centroids = Vec::with_capacity(config.slices);
        for s in 0..config.slices {
            let mut pool = Vec::new();
            for v in volumes {
                let z = config.slice_range(v)?.start + s;
                pool.extend(descriptors_for_slice(v, z, &config).into_iter().flatten());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(s as u64);
            let chosen: Vec<&[f32]> = if pool.len() > config.max_train_descriptors {
                let mut idx = sample(&mut rng, pool.len(), config.max_train_descriptors).into_vec();
                idx.sort_unstable();
                idx.iter().map(|&i| pool[i].as_slice()).collect()
            } else {
                pool.iter().map(Vec::as_slice).collect()
            };
            centroids.push(kmeans(&chosen, config.dictionary_size - 1, config.kmeans_iters, &mut rng));
        }
        Ok(Self { config, centroids })
    }

    pub fn feature_len(&self) -> usize {
        self.config.slices * self.config.dictionary_size
    }
}

/// Concatenated per-slice word histograms, each L1-normalized.
pub fn bow_features(s: &Volume, dict: &BowDictionary) -> Result<Vec<f64>> {
    if !dict.is_fitted() {
        return Err(Error::Usage("BoW dictionary has not been fitted".into()));
    }
    let cfg = &dict.config;
    let k = cfg.dictionary_size;
    let range = cfg.slice_range(s)?;
    let mut out = vec![0.0; dict.feature_len()];
    for (si, z) in range.enumerate() {
        let hist = &mut out[si * k..(si + 1) * k];
        let descs = descriptors_for_slice(s, z, cfg);
        for d in &descs {
            let word = match d {
                Some(d) if !dict.centroids[si].is_empty() => 1 + nearest(&dict.centroids[si], d),
                _ => 0,
            };
            hist[word] += 1.0;
        }
        let total: f64 = hist.iter().sum();
        hist.iter_mut().for_each(|h| *h /= total);
    }
    Ok(out)
}
