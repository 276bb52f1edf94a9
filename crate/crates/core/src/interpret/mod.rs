//! Input-gradient saliency and lesion occlusion experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regnet::Model;
use crate::volgrid::{MaskVolume, Volume};

/// Anything that maps a volume to a score and can differentiate it.
pub trait Scorer {
    fn score(&self, s: &Volume) -> Result<f64>;
    fn input_gradient(&self, s: &Volume) -> Result<(f64, Volume)>;
}

impl Scorer for Model {
    fn score(&self, s: &Volume) -> Result<f64> {
        Model::score(self, s)
    }
    fn input_gradient(&self, s: &Volume) -> Result<(f64, Volume)> {
        Model::input_gradient(self, s)
    }
}

/// `|d score / d s|` rescaled so its maximum is 1 (all zeros if the
/// gradient vanishes).
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap(pub Volume);

pub fn saliency(model: &impl Scorer, s: &Volume) -> Result<SaliencyMap> {
    let (_, grad) = model.input_gradient(s)?;
    let abs = grad.map(f32::abs);
    let max = abs.max();
    Ok(SaliencyMap(if max > 0.0 { abs.map(|v| v / max) } else { abs }))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OcclusionOrder {
    /// Brightest annotated lesion first.
    #[default]
    Contrast,
    Annotation,
    Random {
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    /// Block size in millimetres along x, y, z.
    pub block_mm: [f64; 3],
    pub order: OcclusionOrder,
    /// Largest number of lesions occluded in a curve.
    pub max_k: usize,
    pub random_reps: usize,
    pub random_blocks: usize,
    pub seed: u64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            block_mm: [1.5, 1.5, 4.8],
            order: OcclusionOrder::Contrast,
            max_k: 6,
            random_reps: 100,
            random_blocks: 1,
            seed: 0,
        }
    }
}

impl OcclusionConfig {
    /// Block extent in voxels: `ceil(mm / spacing)` per axis, at least 1.
    pub fn block_voxels(&self, spacing: [f32; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let mm = self.block_mm[a];
            if !(mm > 0.0 && mm.is_finite()) || !(spacing[a] > 0.0) {
                return Err(Error::Config(format!("block size {mm} mm on axis {a} must be positive")));
            }
            // Tolerate representation error so 1.5 / 0.5 stays 3.
            out[a] = ((mm / spacing[a] as f64) - 1e-9).ceil().max(1.0) as usize;
        }
        Ok(out)
    }
}

/// Mean of `s` over the region mask (voxels above 0.5).
pub fn roi_fill_value(s: &Volume, roi: &MaskVolume) -> Result<f32> {
    let roi = roi.as_volume();
    if s.dims() != roi.dims() {
        return Err(Error::Shape("volume and mask dims differ".into()));
    }
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (&v, &m) in s.data().iter().zip(roi.data()) {
        if m > 0.5 {
            sum += v as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::DegenerateRoi);
    }
    Ok((sum / n as f64) as f32)
}

/// Sets an axis-aligned block around each centre to `fill`. Blocks of even
/// extent reach one voxel further towards the low side; blocks are clipped
/// at the volume border.
pub fn occlude(s: &Volume, centers: &[[usize; 3]], fill: f32, cfg: &OcclusionConfig) -> Result<Volume> {
    let ext = cfg.block_voxels(s.spacing())?;
    let dims = s.dims();
    let mut out = s.clone();
    for c in centers {
        if (0..3).any(|a| c[a] >= dims[a]) {
            return Err(Error::Index(format!("occlusion centre {c:?} outside volume {dims:?}")));
        }
        let lo = [0, 1, 2].map(|a| c[a].saturating_sub(ext[a] / 2));
        let hi = [0, 1, 2].map(|a| (c[a] + ext[a] - ext[a] / 2).min(dims[a]));
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    out.set(x, y, z, fill);
                }
            }
        }
    }
    Ok(out)
}

/// Lesion centres in the order they are occluded.
pub fn occlusion_order(s: &Volume, centers: &[[usize; 3]], order: OcclusionOrder) -> Vec<[usize; 3]> {
    let mut out = centers.to_vec();
    match order {
        OcclusionOrder::Annotation => {}
        OcclusionOrder::Contrast => {
            out.sort_by(|a, b| s.get(b[0], b[1], b[2]).total_cmp(&s.get(a[0], a[1], a[2])));
        }
        OcclusionOrder::Random { seed } => out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    out
}

/// Scores after occluding the first `k` lesions, for `k = 0..=min(max_k, n)`.
/// `centers` are voxel coordinates in `s`.
pub fn occlusion_curve(
    model: &impl Scorer,
    s: &Volume,
    roi: &MaskVolume,
    centers: &[[usize; 3]],
    cfg: &OcclusionConfig,
) -> Result<Vec<(usize, f64)>> {
    if centers.is_empty() {
        return Err(Error::Usage("occlusion curve needs annotated lesions".into()));
    }
    let fill = roi_fill_value(s, roi)?;
    let ordered = occlusion_order(s, centers, cfg.order);
    let k_max = cfg.max_k.min(ordered.len());
    (0..=k_max)
        .map(|k| Ok((k, model.score(&occlude(s, &ordered[..k], fill, cfg)?)?)))
        .collect()
}

/// Scores after occluding `cfg.random_blocks` blocks at uniformly drawn ROI
/// voxels, repeated `cfg.random_reps` times.
pub fn random_occlusion_scores(
    model: &impl Scorer,
    s: &Volume,
    roi: &MaskVolume,
    cfg: &OcclusionConfig,
) -> Result<Vec<f64>> {
    let fill = roi_fill_value(s, roi)?;
    let candidates: Vec<[usize; 3]> = roi
        .as_volume()
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.5)
        .map(|(i, _)| roi.as_volume().coords(i))
        .collect();
    if candidates.is_empty() {
        return Err(Error::DegenerateRoi);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.random_reps)
        .map(|_| {
            let picks: Vec<[usize; 3]> = (0..cfg.random_blocks)
                .map(|_| candidates[rng.random_range(0..candidates.len())])
                .collect();
            model.score(&occlude(s, &picks, fill, cfg)?)
        })
        .collect()
}

/// Median saliency at `centers` and the 90th percentile over ROI voxels
/// farther than `exclusion_radius` voxels from every centre.
pub fn saliency_contrast(
    map: &SaliencyMap,
    roi: &MaskVolume,
    centers: &[[usize; 3]],
    exclusion_radius: f64,
) -> Result<(f64, f64)> {
    if centers.is_empty() {
        return Err(Error::Usage("no annotations to compare".into()));
    }
    let v = &map.0;
    let mut at: Vec<f64> = centers.iter().map(|c| v.get(c[0], c[1], c[2]) as f64).collect();
    let r2 = exclusion_radius * exclusion_radius;
    let mut bg: Vec<f64> = Vec::new();
    for (i, &m) in roi.as_volume().data().iter().enumerate() {
        if m <= 0.5 {
            continue;
        }
        let p = v.coords(i);
        let far = centers.iter().all(|c| {
            (0..3).map(|a| (p[a] as f64 - c[a] as f64).powi(2)).sum::<f64>() > r2
        });
        if far {
            bg.push(v.data()[i] as f64);
        }
    }
    if bg.is_empty() {
        return Err(Error::Degenerate("no background voxels outside the exclusion zone".into()));
    }
    at.sort_by(f64::total_cmp);
    bg.sort_by(f64::total_cmp);
    let median = crate::stats::quantile_sorted(&at, 0.5);
    Ok((median, crate::stats::quantile_sorted(&bg, 0.9)))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `y = sum(w * s)`.
    struct Linear(Volume);

    impl Scorer for Linear {
        fn score(&self, s: &Volume) -> Result<f64> {
            Ok(s.data().iter().zip(self.0.data()).map(|(a, b)| (a * b) as f64).sum())
        }
        fn input_gradient(&self, s: &Volume) -> Result<(f64, Volume)> {
            Ok((self.score(s)?, self.0.clone()))
        }
    }

    fn half_mm() -> [f32; 3] {
        [0.5; 3]
    }

    #[test]
    fn linear_saliency_is_scaled_abs_weights() {
        let w = Volume::from_fn([4, 3, 2], [1.0; 3], |x, y, z| x as f32 - 2.0 * y as f32 + z as f32);
        let map = saliency(&Linear(w.clone()), &Volume::zeros([4, 3, 2], [1.0; 3])).unwrap();
        let max = w.map(f32::abs).max();
        for (m, wv) in map.0.data().iter().zip(w.data()) {
            assert!((m - wv.abs() / max).abs() < 1e-6);
        }
        assert_eq!(map.0.max(), 1.0);
        let zero = saliency(&Linear(Volume::zeros([4, 3, 2], [1.0; 3])), &w).unwrap();
        assert_eq!(zero.0.max(), 0.0);
    }

    #[test]
    fn block_extent_at_half_mm() {
        assert_eq!(OcclusionConfig::default().block_voxels(half_mm()).unwrap(), [3, 3, 10]);
        let cfg = OcclusionConfig {
            block_mm: [0.1, 1.0, 1.2],
            ..Default::default()
        };
        assert_eq!(cfg.block_voxels([1.0; 3]).unwrap(), [1, 1, 2]);
    }

    #[test]
    fn occlude_exact_block() {
        let s = Volume::from_fn([12, 12, 16], half_mm(), |x, y, z| (x + y + z) as f32);
        let cfg = OcclusionConfig::default();
        assert_eq!(occlude(&s, &[], 0.5, &cfg).unwrap(), s);
        let out = occlude(&s, &[[5, 6, 8]], -1.0, &cfg).unwrap();
        for z in 0..16 {
            for y in 0..12 {
                for x in 0..12 {
                    let inside = (4..=6).contains(&x) && (5..=7).contains(&y) && (3..=12).contains(&z);
                    let want = if inside { -1.0 } else { s.get(x, y, z) };
                    assert_eq!(out.get(x, y, z), want);
                }
            }
        }
        assert_eq!(occlude(&out, &[[5, 6, 8]], -1.0, &cfg).unwrap(), out);
        assert!(matches!(occlude(&s, &[[12, 0, 0]], 0.0, &cfg), Err(Error::Index(_))));
    }

    #[test]
    fn curve_starts_at_unoccluded_score() {
        let s = Volume::from_fn([10, 10, 12], half_mm(), |x, _, _| if x == 3 || x == 7 { 2.0 } else { 1.0 });
        let mask = MaskVolume::threshold(&Volume::filled([10, 10, 12], half_mm(), 1.0));
        let model = Linear(Volume::filled([10, 10, 12], half_mm(), 1.0));
        let curve = occlusion_curve(&model, &s, &mask, &[[3, 5, 6], [7, 5, 6]], &OcclusionConfig::default()).unwrap();
        assert_eq!(curve.len(), 3);
        assert_eq!(curve[0], (0, model.score(&s).unwrap()));
        assert!(curve.windows(2).all(|w| w[1].1 < w[0].1));
        assert!(matches!(
            occlusion_curve(&model, &s, &mask, &[], &OcclusionConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn fill_is_the_region_mean() {
        let s = Volume::from_fn([4, 4, 4], [1.0; 3], |x, _, _| x as f32);
        let roi = MaskVolume::from_predicate([4, 4, 4], [1.0; 3], |x, _, _| x >= 2);
        assert_eq!(roi_fill_value(&s, &roi).unwrap(), 2.5);
        let empty = MaskVolume::from_predicate([4, 4, 4], [1.0; 3], |_, _, _| false);
        assert!(matches!(roi_fill_value(&s, &empty), Err(Error::DegenerateRoi)));
    }

    #[test]
    fn contrast_order_is_brightest_first() {
        let mut s = Volume::zeros([5, 5, 5], [1.0; 3]);
        s.set(1, 1, 1, 0.2);
        s.set(3, 3, 3, 0.9);
        let order = occlusion_order(&s, &[[1, 1, 1], [3, 3, 3]], OcclusionOrder::Contrast);
        assert_eq!(order, vec![[3, 3, 3], [1, 1, 1]]);
    }

    #[test]
    fn zero_saliency_region_barely_moves_score() {
        // Weights vanish on the left half; occluding there leaves the score.
        let w = Volume::from_fn([10, 10, 12], half_mm(), |x, _, _| if x < 5 { 0.0 } else { 1.0 });
        let model = Linear(w);
        let s = Volume::from_fn([10, 10, 12], half_mm(), |x, y, z| ((x * 3 + y * 5 + z) % 7) as f32);
        let before = model.score(&s).unwrap();
        let after = model.score(&occlude(&s, &[[1, 5, 6]], 0.0, &OcclusionConfig::default()).unwrap()).unwrap();
        assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn random_control_is_deterministic() {
        let s = Volume::from_fn([10, 10, 12], half_mm(), |x, y, z| ((x + y * z) % 5) as f32);
        let roi = MaskVolume::threshold(&Volume::filled([10, 10, 12], half_mm(), 1.0));
        let model = Linear(Volume::filled([10, 10, 12], half_mm(), 1.0));
        let cfg = OcclusionConfig {
            random_reps: 10,
            ..Default::default()
        };
        let a = random_occlusion_scores(&model, &s, &roi, &cfg).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, random_occlusion_scores(&model, &s, &roi, &cfg).unwrap());
    }
}
