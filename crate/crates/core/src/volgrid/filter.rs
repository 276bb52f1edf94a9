use super::{Dims, MaskVolume, Volume};
use crate::error::{Error, Result};

const NEIGHBORS_6: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Repeated binary dilation with the 6-connected structuring element.
///
/// Voxels outside the grid are treated as background.
pub fn binary_dilate(mask: &MaskVolume, iterations: usize) -> Result<MaskVolume> {
    if !mask.is_binary() {
        return Err(Error::Validation("binary_dilate needs a binary mask".into()));
    }
    let dims = mask.dims();
    let mut cur: Vec<bool> = mask.as_volume().data().iter().map(|&v| v > 0.0).collect();
    for _ in 0..iterations {
        let mut next = cur.clone();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    if !cur[x + dims[0] * (y + dims[1] * z)] {
                        continue;
                    }
                    for d in NEIGHBORS_6 {
                        let (nx, ny, nz) = (x as i64 + d[0], y as i64 + d[1], z as i64 + d[2]);
                        if nx < 0 || ny < 0 || nz < 0 {
                            continue;
                        }
                        let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
                        if nx < dims[0] && ny < dims[1] && nz < dims[2] {
                            next[nx + dims[0] * (ny + dims[1] * nz)] = true;
                        }
                    }
                }
            }
        }
        cur = next;
    }
    let v = mask.as_volume();
    Ok(MaskVolume(Volume::new(
        dims,
        v.spacing(),
        cur.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
    )?))
}

/// Unit-sum 1D Gaussian taps on `[-r, r]` with `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable Gaussian filtering of a raw x-fastest buffer with zero exterior.
pub fn gaussian_smooth_raw(data: &[f64], dims: Dims, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut cur = data.to_vec();
    let mut out = vec![0.0; data.len()];
    for axis in 0..3 {
        let n = dims[axis] as i64;
        let stride = strides[axis];
        for (i, o) in out.iter_mut().enumerate() {
            let pos = ((i / stride) % dims[axis]) as i64;
            let lo = (-r).max(-pos);
            let hi = r.min(n - 1 - pos);
            let mut acc = 0.0;
            for t in lo..=hi {
                let j = (i as i64 + t * stride as i64) as usize;
                acc += k[(t + r) as usize] * cur[j];
            }
            *o = acc;
        }
        std::mem::swap(&mut cur, &mut out);
    }
    cur
}

/// Gaussian smoothing with standard deviation `sigma` in voxel units.
pub fn gaussian_smooth(v: &Volume, sigma: f64) -> Result<Volume> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Validation(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let raw: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let out = gaussian_smooth_raw(&raw, v.dims(), sigma);
    Volume::new(v.dims(), v.spacing(), out.into_iter().map(|x| x as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_mask(n: usize) -> MaskVolume {
        let c = n / 2;
        MaskVolume::from_predicate([n, n, n], [1.0; 3], |x, y, z| x == c && y == c && z == c)
    }

    #[test]
    fn single_voxel_one_iteration() {
        let d = binary_dilate(&point_mask(11), 1).unwrap();
        assert_eq!(d.foreground_count(), 7);
    }

    #[test]
    fn single_voxel_four_iterations_is_l1_ball() {
        // Octahedral numbers: integer points with |x|+|y|+|z| <= 4.
        let mut oracle = 0;
        for x in -4i32..=4 {
            for y in -4i32..=4 {
                for z in -4i32..=4 {
                    if x.abs() + y.abs() + z.abs() <= 4 {
                        oracle += 1;
                    }
                }
            }
        }
        assert_eq!(oracle, 129);
        let d = binary_dilate(&point_mask(11), 4).unwrap();
        assert_eq!(d.foreground_count(), oracle);
    }

    #[test]
    fn empty_mask_fixed_point() {
        let m = MaskVolume::from_predicate([5, 4, 3], [1.0; 3], |_, _, _| false);
        assert_eq!(binary_dilate(&m, 3).unwrap().foreground_count(), 0);
    }

    #[test]
    fn non_binary_rejected() {
        let m = MaskVolume::new(Volume::filled([2, 2, 2], [1.0; 3], 0.3)).unwrap();
        assert!(binary_dilate(&m, 1).is_err());
    }

    #[test]
    fn smoothing_constant_interior() {
        let v = Volume::filled([21, 21, 21], [1.0; 3], 1.0);
        let s = gaussian_smooth(&v, 2.0).unwrap();
        assert!((s.get(10, 10, 10) - 1.0).abs() < 1e-6);
        assert!(s.get(0, 0, 0) < 1.0);
    }

    #[test]
    fn sigma_must_be_positive() {
        let v = Volume::zeros([3, 3, 3], [1.0; 3]);
        assert!(gaussian_smooth(&v, 0.0).is_err());
        assert!(gaussian_smooth(&v, -1.0).is_err());
    }

    #[test]
    fn kernel_radius_and_sum() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let k = gaussian_kernel(0.4);
        assert_eq!(k.len(), 5);
    }
}
