//! Volume data model, SVOL file I/O and smooth-ROI preprocessing.
//!
//! Volumes are dense scalar grids stored with `x` varying fastest, then `y`,
//! then `z`. Dimensions are `(H, W, D)` = `(nx, ny, nz)`. All morphology and
//! smoothing work in voxel units; the spacing is carried as metadata and only
//! consumed where physical sizes are converted to voxels.

mod filter;
mod io;
mod resample;
mod roi;

pub use filter::{binary_dilate, gaussian_kernel, gaussian_smooth, gaussian_smooth_raw};
pub use io::{read_mask, read_volume, write_mask, write_volume, SVOL_MAGIC, SVOL_VERSION};
pub use resample::{rigid_resample, RigidTransform};
pub use roi::{center_of_mass, crop_around, make_smooth_roi, PreprocessConfig, SmoothRoi};

use crate::error::{Error, Result};

/// Voxel extents `(H, W, D)`.
pub type Dims = [usize; 3];

/// A 3D scalar image with physical voxel spacing in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite intensity {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: [f32; 3], value: f32) -> Self {
        let n = dims.iter().product();
        Self::new(dims, spacing, vec![value; n]).expect("valid filled volume")
    }

    pub fn zeros(dims: Dims, spacing: [f32; 3]) -> Self {
        Self::filled(dims, spacing, 0.0)
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: Dims, spacing: [f32; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, data).expect("from_fn produced an invalid volume")
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access to the payload. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Coordinates of a flat index.
    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let y = (i / self.dims[0]) % self.dims[1];
        let z = i / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a])
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Volume {
        Volume::new(self.dims, self.spacing, self.data.iter().map(|&v| f(v)).collect())
            .expect("map produced an invalid volume")
    }

    /// Element-wise product of two volumes of equal dims.
    pub fn multiply(&self, other: &Volume) -> Result<Volume> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "dims {:?} and {:?} differ",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Volume::new(self.dims, self.spacing, data)
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Volume) -> bool {
        self.dims == other.dims
            && self.spacing.iter().zip(&other.spacing).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// A region mask: values in `[0, 1]`, binary when every value is 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVolume(Volume);

impl MaskVolume {
    pub fn new(volume: Volume) -> Result<Self> {
        if let Some(v) = volume.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self(volume))
    }

    /// Binary mask from a predicate over voxel coordinates.
    pub fn from_predicate(dims: Dims, spacing: [f32; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        Self(Volume::from_fn(dims, spacing, |x, y, z| if f(x, y, z) { 1.0 } else { 0.0 }))
    }

    /// Binary mask from a volume by `value >= 0.5`.
    pub fn threshold(volume: &Volume) -> Self {
        Self(volume.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
    }

    pub fn is_binary(&self) -> bool {
        self.0.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn foreground_count(&self) -> usize {
        self.0.data.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn dims(&self) -> Dims {
        self.0.dims
    }

    pub fn as_volume(&self) -> &Volume {
        &self.0
    }

    pub fn into_volume(self) -> Volume {
        self.0
    }

    #[inline]
    pub fn is_set(&self, x: usize, y: usize, z: usize) -> bool {
        self.0.get(x, y, z) > 0.0
    }
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Validation(format!("dims {dims:?} must all be positive")));
    }
    Ok(())
}

fn check_spacing(spacing: [f32; 3]) -> Result<()> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Validation(format!(
            "spacing {spacing:?} must be finite and positive"
        )));
    }
    Ok(())
}
