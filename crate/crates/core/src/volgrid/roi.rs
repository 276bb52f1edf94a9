use serde::{Deserialize, Serialize};

use super::{binary_dilate, gaussian_smooth, Dims, MaskVolume, Volume};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub dilation_iterations: usize,
    /// Standard deviation of the mask smoothing kernel, in voxels.
    pub gaussian_sigma: f64,
    pub crop_dims: Dims,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            dilation_iterations: 4,
            gaussian_sigma: 2.0,
            crop_dims: [64, 48, 32],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma.is_finite() && self.gaussian_sigma > 0.0) {
            return Err(Error::Validation("gaussian_sigma must be > 0".into()));
        }
        if self.crop_dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation("crop_dims must be positive".into()));
        }
        Ok(())
    }
}

/// Output of [`make_smooth_roi`].
///
/// `origin` maps crop coordinates back to the source grid:
/// `source = crop + origin` (negative entries mean zero padding).
#[derive(Clone, Debug)]
pub struct SmoothRoi {
    pub volume: Volume,
    /// The smooth mask, cropped with the same window.
    pub smooth_mask: Volume,
    /// The binary region mask, cropped with the same window.
    pub roi: MaskVolume,
    pub origin: [i64; 3],
    /// Set when the masked volume was identically zero and no rescale happened.
    pub rescale_skipped: bool,
}

impl SmoothRoi {
    /// Maps a source-grid coordinate into the crop, if it lands inside.
    pub fn to_crop(&self, p: [usize; 3]) -> Option<[usize; 3]> {
        let q = [
            p[0] as i64 - self.origin[0],
            p[1] as i64 - self.origin[1],
            p[2] as i64 - self.origin[2],
        ];
        self.volume
            .contains(q)
            .then(|| [q[0] as usize, q[1] as usize, q[2] as usize])
    }
}

/// Intensity-weighted centroid in voxel coordinates; `None` for zero mass.
pub fn center_of_mass(v: &Volume) -> Option<[f64; 3]> {
    let mut acc = [0.0f64; 3];
    let mut mass = 0.0f64;
    for (i, &w) in v.data().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let c = v.coords(i);
        let w = w as f64;
        for a in 0..3 {
            acc[a] += w * c[a] as f64;
        }
        mass += w;
    }
    (mass > 0.0).then(|| [acc[0] / mass, acc[1] / mass, acc[2] / mass])
}

fn crop_start(center: i64, dim: usize, crop: usize) -> i64 {
    if crop <= dim {
        (center - (crop / 2) as i64).clamp(0, (dim - crop) as i64)
    } else {
        -(((crop - dim) / 2) as i64)
    }
}

/// Crops a window of `crop_dims` around `center`, clamped to the grid, and
/// zero-pads symmetrically on axes where the crop exceeds the grid.
pub fn crop_around(v: &Volume, center: [i64; 3], crop_dims: Dims) -> (Volume, [i64; 3]) {
    let dims = v.dims();
    let origin = [
        crop_start(center[0], dims[0], crop_dims[0]),
        crop_start(center[1], dims[1], crop_dims[1]),
        crop_start(center[2], dims[2], crop_dims[2]),
    ];
    let out = Volume::from_fn(crop_dims, v.spacing(), |x, y, z| {
        let p = [x as i64 + origin[0], y as i64 + origin[1], z as i64 + origin[2]];
        if v.contains(p) {
            v.get(p[0] as usize, p[1] as usize, p[2] as usize)
        } else {
            0.0
        }
    });
    (out, origin)
}

/// Smooth-ROI preprocessing: dilate the region mask, blur it, weight the
/// image by it, crop around the blurred mask's centre of mass and rescale to
/// a maximum of one.
///
/// Intensities are treated as magnitudes: negative values are clipped to zero
/// before weighting so the output stays in `[0, 1]`.
pub fn make_smooth_roi(v: &Volume, roi: &MaskVolume, cfg: &PreprocessConfig) -> Result<SmoothRoi> {
    cfg.validate()?;
    if v.dims() != roi.dims() {
        return Err(Error::Shape(format!(
            "volume dims {:?} differ from ROI dims {:?}",
            v.dims(),
            roi.dims()
        )));
    }
    if !roi.is_binary() {
        return Err(Error::Validation("ROI mask must be binary".into()));
    }
    if roi.foreground_count() == 0 {
        return Err(Error::DegenerateRoi);
    }
    let dilated = binary_dilate(roi, cfg.dilation_iterations)?;
    let smooth = gaussian_smooth(dilated.as_volume(), cfg.gaussian_sigma)?.map(|m| m.clamp(0.0, 1.0));
    let masked = v.map(|x| x.max(0.0)).multiply(&smooth)?;
    let com = center_of_mass(&smooth).ok_or(Error::DegenerateRoi)?;
    let center = [com[0].floor() as i64, com[1].floor() as i64, com[2].floor() as i64];

    let (mut cropped, origin) = crop_around(&masked, center, cfg.crop_dims);
    let (smooth_c, _) = crop_around(&smooth, center, cfg.crop_dims);
    let (roi_c, _) = crop_around(roi.as_volume(), center, cfg.crop_dims);

    let max = cropped.max();
    let rescale_skipped = max <= 0.0;
    if !rescale_skipped {
        cropped.data_mut().iter_mut().for_each(|x| *x = (*x / max).min(1.0));
    }
    Ok(SmoothRoi {
        volume: cropped,
        smooth_mask: smooth_c,
        roi: MaskVolume(roi_c),
        origin,
        rescale_skipped,
    })
}
