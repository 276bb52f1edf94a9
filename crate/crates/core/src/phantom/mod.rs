//! Deterministic synthetic scans with known lesion counts.
//!
//! A scan is a tissue background with smooth texture, an ellipsoidal region
//! of interest, a bright structure just outside the region (so that max
//! normalization is stable), thin tubular lesions inside the region and
//! round distractor blobs that must not be counted.

mod geometry;
mod io;
mod rater;

pub use geometry::{point_segment_distance, segment_distance, Ellipsoid};
pub use io::{cfg_hash, read_scan, write_scan, ScanManifest};
pub use rater::{simulate_second_rater, RaterNoise};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{gaussian_smooth_raw, rigid_resample, Dims, RigidTransform};
use crate::{MaskVolume, Volume};
use geometry::{dist, P3};

/// Generator identification recorded in every scan manifest.
pub const GENERATOR_VERSION: &str = "volcount-phantom/1 chacha8";

const STREAM_SCENE: u64 = 0;
const STREAM_NOISE_A: u64 = 1;
const STREAM_NOISE_B: u64 = 2;
const STREAM_PERTURB: u64 = 3;

/// Fresh layouts tried before a lesion count is declared unplaceable.
const LAYOUT_RESTARTS: usize = 8;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Zero-inflated negative binomial lesion counts: a structural zero with
/// probability `pi`, otherwise NB with `r` successes and success probability
/// `p` (mean `r (1 - p) / p`), clipped at `max_count`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountModel {
    pub pi: f64,
    pub r: f64,
    pub p: f64,
    pub max_count: usize,
    /// Every scan gets exactly this many lesions when set.
    pub fixed: Option<usize>,
}

impl Default for CountModel {
    fn default() -> Self {
        Self {
            pi: 0.3,
            r: 2.0,
            p: 0.25,
            max_count: 25,
            fixed: None,
        }
    }
}

impl CountModel {
    pub fn nb_mean(&self) -> f64 {
        self.r * (1.0 - self.p) / self.p
    }

    /// `P(count = 0)` before clipping.
    pub fn zero_probability(&self) -> f64 {
        self.pi + (1.0 - self.pi) * self.p.powf(self.r)
    }
}

/// Lesion rate growing with a uniformly drawn age.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgeEffect {
    pub min_age: f64,
    pub max_age: f64,
    /// Multiplicative change of the NB mean per 10 years.
    pub rate_ratio_per_decade: f64,
    /// Age at which the NB mean equals the configured one.
    pub reference_age: f64,
}

impl Default for AgeEffect {
    fn default() -> Self {
        Self {
            min_age: 45.0,
            max_age: 95.0,
            rate_ratio_per_decade: 1.3,
            reference_age: 70.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiShape {
    pub semi_axes: [f64; 3],
    /// Uniform jitter of the centre, voxels per axis.
    pub center_jitter: f64,
    /// Relative uniform jitter of each semi-axis.
    pub axis_jitter: f64,
}

impl Default for RoiShape {
    fn default() -> Self {
        Self {
            semi_axes: [21.0, 16.0, 10.0],
            center_jitter: 2.0,
            axis_jitter: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LesionShape {
    pub radius: [f64; 2],
    /// Axis length between the cap centres.
    pub length: [f64; 2],
    pub contrast: [f64; 2],
    /// Largest angle between the tube axis and z, radians.
    pub max_tilt: f64,
    /// Minimum surface-to-surface gap between any two objects, voxels.
    pub gap: f64,
}

impl Default for LesionShape {
    fn default() -> Self {
        Self {
            radius: [1.0, 1.5],
            length: [3.0, 7.0],
            contrast: [0.15, 0.35],
            max_tilt: 0.25,
            gap: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistractorShape {
    /// Poisson mean of the number of blobs.
    pub mean_count: f64,
    pub radius: [f64; 2],
    pub contrast: [f64; 2],
}

impl Default for DistractorShape {
    fn default() -> Self {
        Self {
            mean_count: 4.0,
            radius: [2.0, 3.5],
            contrast: [0.04, 0.12],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Background {
    /// Tissue level, drawn uniformly per scan.
    pub level: [f64; 2],
    /// Standard deviation of the smooth texture.
    pub texture_amplitude: f64,
    pub texture_sigma: f64,
    /// Intensity of the bright structure beside the region.
    pub anchor_intensity: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self {
            level: [0.45, 0.55],
            texture_amplitude: 0.05,
            texture_sigma: 1.5,
            anchor_intensity: 1.6,
        }
    }
}

/// Rigid motion between the two scans of a rescan pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescanPerturbation {
    /// Per-axis uniform translation bound, voxels.
    pub max_translation: f64,
    /// Per-axis uniform rotation bound, radians.
    pub max_rotation: f64,
}

impl Default for RescanPerturbation {
    fn default() -> Self {
        Self {
            max_translation: 0.25,
            max_rotation: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: Dims,
    pub spacing: [f32; 3],
    pub roi: RoiShape,
    pub counts: CountModel,
    pub age: Option<AgeEffect>,
    pub lesion: LesionShape,
    pub distractor: DistractorShape,
    pub background: Background,
    pub noise_std: f64,
    pub rescan: RescanPerturbation,
    /// Placement attempts per object before giving up.
    pub max_attempts: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [80, 64, 40],
            spacing: [0.5; 3],
            roi: RoiShape::default(),
            counts: CountModel::default(),
            age: None,
            lesion: LesionShape::default(),
            distractor: DistractorShape::default(),
            background: Background::default(),
            noise_std: 0.012,
            rescan: RescanPerturbation::default(),
            max_attempts: 2000,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} range {r:?} must be positive with min <= max")));
    }
    Ok(())
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.counts;
        if !(0.0..1.0).contains(&c.pi) || !(c.r > 0.0 && c.r.is_finite()) || !(c.p > 0.0 && c.p < 1.0) {
            return Err(Error::Config(format!("count model needs pi in [0,1), r > 0, p in (0,1): {c:?}")));
        }
        if self.dims.iter().any(|&d| d < 8) || self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("dims must be >= 8 and spacing positive".into()));
        }
        check_range("lesion radius", self.lesion.radius)?;
        check_range("lesion length", self.lesion.length)?;
        check_range("lesion contrast", self.lesion.contrast)?;
        check_range("distractor radius", self.distractor.radius)?;
        check_range("distractor contrast", self.distractor.contrast)?;
        check_range("background level", self.background.level)?;
        let nonneg = [
            self.noise_std,
            self.background.texture_amplitude,
            self.background.anchor_intensity,
            self.distractor.mean_count,
            self.lesion.gap,
            self.lesion.max_tilt,
            self.roi.center_jitter,
            self.roi.axis_jitter,
            self.rescan.max_translation,
            self.rescan.max_rotation,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("noise, texture, jitter and perturbation settings must be >= 0".into()));
        }
        if !(self.background.texture_sigma > 0.0) || self.roi.axis_jitter >= 1.0 || self.rescan.max_rotation >= 1.0 {
            return Err(Error::Config("texture_sigma must be > 0, axis_jitter and max_rotation < 1".into()));
        }
        if self.roi.semi_axes.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("ROI semi-axes must be positive".into()));
        }
        if let Some(a) = &self.age {
            if !(a.min_age <= a.max_age && a.rate_ratio_per_decade > 0.0) {
                return Err(Error::Config(format!("invalid age effect {a:?}")));
            }
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be >= 1".into()));
        }
        Ok(())
    }

    /// A copy without sensor noise, texture or rescan motion.
    pub fn noise_free(&self) -> Self {
        let mut c = self.clone();
        c.noise_std = 0.0;
        c.background.texture_amplitude = 0.0;
        c.rescan = RescanPerturbation {
            max_translation: 0.0,
            max_rotation: 0.0,
        };
        c
    }
}

/// A scan with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredScan {
    pub volume: Volume,
    pub roi_mask: MaskVolume,
    pub score: usize,
    /// Lesion centres, one per counted lesion.
    pub annotations: Vec<[usize; 3]>,
    pub seed: u64,
    pub age: Option<f64>,
}

/// A planted tubular lesion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tube {
    pub a: P3,
    pub b: P3,
    pub radius: f64,
    pub contrast: f64,
}

impl Tube {
    pub fn center(&self) -> P3 {
        [(self.a[0] + self.b[0]) / 2.0, (self.a[1] + self.b[1]) / 2.0, (self.a[2] + self.b[2]) / 2.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub center: P3,
    pub radius: f64,
    pub contrast: f64,
}

/// Everything a scan is rendered from, before sensor noise.
#[derive(Clone, Debug)]
pub struct Scene {
    pub age: Option<f64>,
    pub roi: Ellipsoid,
    pub level: f64,
    pub lesions: Vec<Tube>,
    pub distractors: Vec<Blob>,
    pub anchor: Ellipsoid,
    texture: Vec<f64>,
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn draw_count(cfg: &PhantomConfig, rng: &mut impl Rng, age: Option<f64>) -> usize {
    let c = &cfg.counts;
    if let Some(n) = c.fixed {
        return n;
    }
    let mut mean = c.nb_mean();
    if let (Some(effect), Some(age)) = (&cfg.age, age) {
        mean *= effect.rate_ratio_per_decade.powf((age - effect.reference_age) / 10.0);
    }
    let structural_zero = rng.random_bool(c.pi);
    let lambda = Gamma::new(c.r, mean / c.r).expect("validated gamma").sample(rng);
    let n = if lambda > 0.0 {
        Poisson::new(lambda).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    if structural_zero {
        0
    } else {
        n.min(c.max_count)
    }
}

fn draw_age(cfg: &PhantomConfig, rng: &mut impl Rng) -> Option<f64> {
    cfg.age.as_ref().map(|a| uniform(rng, [a.min_age, a.max_age]))
}

/// The `(age, count)` that [`generate_scan`] would plant for `seed`, without
/// rendering anything.
pub fn lesion_count_for_seed(cfg: &PhantomConfig, seed: u64) -> (Option<f64>, usize) {
    let mut r = rng(seed, STREAM_SCENE);
    let age = draw_age(cfg, &mut r);
    (age, draw_count(cfg, &mut r, age))
}

fn random_point_in(rng: &mut impl Rng, e: &Ellipsoid) -> P3 {
    loop {
        let u: P3 = [0, 1, 2].map(|_| rng.random_range(-1.0..=1.0));
        if u.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return [0, 1, 2].map(|a| e.center[a] + u[a] * e.semi_axes[a]);
        }
    }
}

fn place_tube(r: &mut impl Rng, roi: &Ellipsoid, placed: &[Tube], ls: &LesionShape, attempts: usize) -> Option<Tube> {
    for _ in 0..attempts {
        let radius = uniform(r, ls.radius);
        let length = uniform(r, ls.length);
        let contrast = uniform(r, ls.contrast);
        let tilt = if ls.max_tilt > 0.0 { r.random_range(0.0..=ls.max_tilt) } else { 0.0 };
        let az = r.random_range(0.0..std::f64::consts::TAU);
        let dir = [tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos()];
        let inner = roi.shrunk(radius + 1.0)?;
        let c = random_point_in(r, &inner);
        let h = length / 2.0;
        let a = [0, 1, 2].map(|i| c[i] - h * dir[i]);
        let b = [0, 1, 2].map(|i| c[i] + h * dir[i]);
        if !inner.contains(a) || !inner.contains(b) {
            continue;
        }
        if placed
            .iter()
            .all(|t| segment_distance(a, b, t.a, t.b) > radius + t.radius + ls.gap)
        {
            return Some(Tube { a, b, radius, contrast });
        }
    }
    None
}

/// Draws the scene (region, lesions, distractors, texture) for `seed`.
pub fn generate_scene(cfg: &PhantomConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut r = rng(seed, STREAM_SCENE);
    let age = draw_age(cfg, &mut r);
    let count = draw_count(cfg, &mut r, age);

    let dims = cfg.dims;
    let mid = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let jitter = |r: &mut ChaCha8Rng, m: f64| if m > 0.0 { r.random_range(-m..=m) } else { 0.0 };
    let center: P3 = [0, 1, 2].map(|a| mid[a] + jitter(&mut r, cfg.roi.center_jitter));
    let semi: P3 = [0, 1, 2].map(|a| cfg.roi.semi_axes[a] * (1.0 + jitter(&mut r, cfg.roi.axis_jitter)));
    let roi = Ellipsoid { center, semi_axes: semi };
    let anchor = Ellipsoid {
        center: [center[0] + semi[0] + 4.0, center[1], center[2]],
        semi_axes: [2.5, (semi[1] * 0.4).max(2.0), (semi[2] * 0.6).max(2.0)],
    };
    let level = uniform(&mut r, cfg.background.level);

    let n: usize = dims.iter().product();
    let texture = if cfg.background.texture_amplitude > 0.0 {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let white: Vec<f64> = (0..n).map(|_| normal.sample(&mut r)).collect();
        let mut t = gaussian_smooth_raw(&white, dims, cfg.background.texture_sigma);
        let sd = (t.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let scale = if sd > 0.0 { cfg.background.texture_amplitude / sd } else { 0.0 };
        t.iter_mut().for_each(|v| *v *= scale);
        t
    } else {
        Vec::new()
    };

    let ls = &cfg.lesion;
    let mut lesions: Vec<Tube> = Vec::with_capacity(count);
    let mut layouts = 0;
    while lesions.len() < count {
        if layouts == LAYOUT_RESTARTS {
            return Err(Error::Placement(format!(
                "could not place {count} lesions in {LAYOUT_RESTARTS} layouts of {} attempts per lesion (seed {seed})",
                cfg.max_attempts
            )));
        }
        layouts += 1;
        lesions.clear();
        while lesions.len() < count {
            match place_tube(&mut r, &roi, &lesions, ls, cfg.max_attempts) {
                Some(t) => lesions.push(t),
                None => break,
            }
        }
    }

    let ds = &cfg.distractor;
    let n_blobs = if ds.mean_count > 0.0 {
        Poisson::new(ds.mean_count).expect("positive mean").sample(&mut r) as usize
    } else {
        0
    };
    let mut distractors: Vec<Blob> = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        for _ in 0..cfg.max_attempts {
            let radius = uniform(&mut r, ds.radius);
            let contrast = uniform(&mut r, ds.contrast);
            let Some(inner) = roi.shrunk(radius) else { break };
            let c = random_point_in(&mut r, &inner);
            let clear_t = lesions
                .iter()
                .all(|t| point_segment_distance(c, t.a, t.b) > radius + t.radius + ls.gap);
            let clear_b = distractors.iter().all(|o| dist(c, o.center) > radius + o.radius + ls.gap);
            if clear_t && clear_b {
                distractors.push(Blob { center: c, radius, contrast });
                break;
            }
        }
    }

    Ok(Scene {
        age,
        roi,
        level,
        lesions,
        distractors,
        anchor,
        texture,
    })
}

/// Partial-volume occupancy of a voxel at distance `d` from a surface of radius `r`.
fn occupancy(d: f64, r: f64) -> f64 {
    (r + 0.5 - d).clamp(0.0, 1.0)
}

fn bbox(lo: P3, hi: P3, pad: f64, dims: Dims) -> [std::ops::Range<usize>; 3] {
    [0, 1, 2].map(|a| {
        let l = (lo[a] - pad).floor().max(0.0) as usize;
        let h = ((hi[a] + pad).ceil() + 1.0).clamp(0.0, dims[a] as f64) as usize;
        l.min(h)..h
    })
}

impl Scene {
    /// Noise-free intensities and the binary region mask.
    pub fn render(&self, cfg: &PhantomConfig) -> (Volume, MaskVolume) {
        let dims = cfg.dims;
        let tex = &self.texture;
        let mut v = Volume::from_fn(dims, cfg.spacing, |x, y, z| {
            let i = x + dims[0] * (y + dims[1] * z);
            let t = tex.get(i).copied().unwrap_or(0.0);
            (self.level + t) as f32
        });
        let anchor_i = cfg.background.anchor_intensity;
        let reach = self.anchor.semi_axes.iter().cloned().fold(0.0, f64::max) + 1.0;
        let [rx, ry, rz] = bbox(self.anchor.center, self.anchor.center, reach, dims);
        for z in rz.clone() {
            for y in ry.clone() {
                for x in rx.clone() {
                    if self.anchor.contains([x as f64, y as f64, z as f64]) {
                        v.set(x, y, z, anchor_i as f32);
                    }
                }
            }
        }
        for t in &self.lesions {
            let lo = [0, 1, 2].map(|a| t.a[a].min(t.b[a]));
            let hi = [0, 1, 2].map(|a| t.a[a].max(t.b[a]));
            let [rx, ry, rz] = bbox(lo, hi, t.radius + 1.0, dims);
            for z in rz.clone() {
                for y in ry.clone() {
                    for x in rx.clone() {
                        let d = point_segment_distance([x as f64, y as f64, z as f64], t.a, t.b);
                        let occ = occupancy(d, t.radius);
                        if occ > 0.0 {
                            let i = v.index(x, y, z);
                            v.data_mut()[i] += (t.contrast * occ) as f32;
                        }
                    }
                }
            }
        }
        for b in &self.distractors {
            let [rx, ry, rz] = bbox(b.center, b.center, b.radius + 1.0, dims);
            for z in rz.clone() {
                for y in ry.clone() {
                    for x in rx.clone() {
                        let occ = occupancy(dist([x as f64, y as f64, z as f64], b.center), b.radius);
                        if occ > 0.0 {
                            let i = v.index(x, y, z);
                            v.data_mut()[i] += (b.contrast * occ) as f32;
                        }
                    }
                }
            }
        }
        let mask = MaskVolume::from_predicate(dims, cfg.spacing, |x, y, z| {
            self.roi.contains([x as f64, y as f64, z as f64])
        });
        (v, mask)
    }

    pub fn annotations(&self) -> Vec<[usize; 3]> {
        self.lesions.iter().map(|t| t.center().map(|c| c.round() as usize)).collect()
    }
}

fn add_noise(v: &mut Volume, std: f64, rng: &mut impl Rng) {
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("validated noise");
        for x in v.data_mut() {
            *x = (*x as f64 + normal.sample(rng)).max(0.0) as f32;
        }
    } else {
        for x in v.data_mut() {
            *x = x.max(0.0);
        }
    }
}

/// One synthetic scan; a pure function of `(cfg, seed)`.
pub fn generate_scan(cfg: &PhantomConfig, seed: u64) -> Result<ScoredScan> {
    let scene = generate_scene(cfg, seed)?;
    let (mut v, mask) = scene.render(cfg);
    add_noise(&mut v, cfg.noise_std, &mut rng(seed, STREAM_NOISE_A));
    Ok(ScoredScan {
        volume: v,
        roi_mask: mask,
        score: scene.lesions.len(),
        annotations: scene.annotations(),
        seed,
        age: scene.age,
    })
}

/// Two acquisitions of the same scene: the first equals
/// [`generate_scan`]`(cfg, seed)`, the second is rigidly perturbed and
/// carries independent noise.
pub fn generate_rescan_pair(cfg: &PhantomConfig, seed: u64) -> Result<(ScoredScan, ScoredScan)> {
    let scene = generate_scene(cfg, seed)?;
    let (clean, mask) = scene.render(cfg);
    let mut first = clean.clone();
    add_noise(&mut first, cfg.noise_std, &mut rng(seed, STREAM_NOISE_A));

    let mut pr = rng(seed, STREAM_PERTURB);
    let (mt, mr) = (cfg.rescan.max_translation, cfg.rescan.max_rotation);
    let mut t = RigidTransform::identity();
    for a in 0..3 {
        if mr > 0.0 {
            t.rotation[a] = pr.random_range(-mr..=mr);
        }
        if mt > 0.0 {
            t.translation[a] = pr.random_range(-mt..=mt);
        }
    }
    let mut second = rigid_resample(&clean, &t)?;
    let mask2 = MaskVolume::threshold(&rigid_resample(mask.as_volume(), &t)?);
    let dims = cfg.dims;
    let ann2 = scene
        .lesions
        .iter()
        .map(|l| {
            let p = t.apply_point(l.center(), dims);
            [0, 1, 2].map(|a| p[a].round().clamp(0.0, dims[a] as f64 - 1.0) as usize)
        })
        .collect();
    add_noise(&mut second, cfg.noise_std, &mut rng(seed, STREAM_NOISE_B));
    let score = scene.lesions.len();
    Ok((
        ScoredScan {
            volume: first,
            roi_mask: mask,
            score,
            annotations: scene.annotations(),
            seed,
            age: scene.age,
        },
        ScoredScan {
            volume: second,
            roi_mask: mask2,
            score,
            annotations: ann2,
            seed,
            age: scene.age,
        },
    ))
}
