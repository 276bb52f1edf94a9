use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};

/// Rigid transform about the volume centre: flip, then rotate, then translate.
///
/// Rotations are in radians about x, y, z (applied as `Rz * Ry * Rx`),
/// translations in voxels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
    pub flips: [bool; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == [0.0; 3] && self.translation == [0.0; 3] && self.flips == [false; 3]
    }

    fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let (sa, ca) = self.rotation[0].sin_cos();
        let (sb, cb) = self.rotation[1].sin_cos();
        let (sc, cc) = self.rotation[2].sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
        let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
        let rz = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
        matmul(&rz, &matmul(&ry, &rx))
    }

    /// Where the source point `p` lands under the transform.
    pub fn apply_point(&self, p: [f64; 3], dims: [usize; 3]) -> [f64; 3] {
        let c = dims.map(|d| (d as f64 - 1.0) / 2.0);
        let mut u = [0.0; 3];
        for a in 0..3 {
            let pa = if self.flips[a] { dims[a] as f64 - 1.0 - p[a] } else { p[a] };
            u[a] = pa - c[a];
        }
        let r = self.rotation_matrix();
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = r[i][0] * u[0] + r[i][1] * u[1] + r[i][2] * u[2] + c[i] + self.translation[i];
        }
        out
    }
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// Resamples `v` under `t` with trilinear interpolation; samples falling
/// outside the grid read zero. The identity transform returns an exact copy.
pub fn rigid_resample(v: &Volume, t: &RigidTransform) -> Result<Volume> {
    if t.rotation.iter().any(|r| !(r.abs() < std::f64::consts::PI)) {
        return Err(Error::Validation(format!(
            "rotation components {:?} must lie in (-pi, pi)",
            t.rotation
        )));
    }
    if t.translation.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("translation must be finite".into()));
    }
    if t.is_identity() {
        return Ok(v.clone());
    }
    let dims = v.dims();
    let c = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let pure_shift = t.rotation == [0.0; 3];
    let r = t.rotation_matrix();

    Ok(Volume::from_fn(dims, v.spacing(), |x, y, z| {
        let q = [x as f64, y as f64, z as f64];
        let u = [
            q[0] - t.translation[0] - c[0],
            q[1] - t.translation[1] - c[1],
            q[2] - t.translation[2] - c[2],
        ];
        // Inverse rotation is the transpose.
        let w = if pure_shift {
            u
        } else {
            [
                r[0][0] * u[0] + r[1][0] * u[1] + r[2][0] * u[2],
                r[0][1] * u[0] + r[1][1] * u[1] + r[2][1] * u[2],
                r[0][2] * u[0] + r[1][2] * u[1] + r[2][2] * u[2],
            ]
        };
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = w[a] + c[a];
            if t.flips[a] {
                p[a] = dims[a] as f64 - 1.0 - p[a];
            }
        }
        trilinear(v, p)
    }))
}

fn trilinear(v: &Volume, p: [f64; 3]) -> f32 {
    let dims = v.dims();
    let base = p.map(|c| c.floor());
    let frac = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
    let b = base.map(|c| c as i64);
    if (0..3).all(|a| b[a] >= 0 && b[a] + 1 < dims[a] as i64) {
        let (nx, nxy) = (dims[0], dims[0] * dims[1]);
        let i = b[0] as usize + nx * b[1] as usize + nxy * b[2] as usize;
        let d = v.data();
        let lerp = |i: usize| d[i] as f64 * (1.0 - frac[0]) + d[i + 1] as f64 * frac[0];
        let y0 = lerp(i) * (1.0 - frac[1]) + lerp(i + nx) * frac[1];
        let y1 = lerp(i + nxy) * (1.0 - frac[1]) + lerp(i + nxy + nx) * frac[1];
        return (y0 * (1.0 - frac[2]) + y1 * frac[2]) as f32;
    }
    let mut acc = 0.0f64;
    for dz in 0..2i64 {
        let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
        if wz == 0.0 {
            continue;
        }
        for dy in 0..2i64 {
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            if wy == 0.0 {
                continue;
            }
            for dx in 0..2i64 {
                let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                if wx == 0.0 {
                    continue;
                }
                let (x, y, z) = (b[0] + dx, b[1] + dy, b[2] + dz);
                if x < 0 || y < 0 || z < 0 || x >= dims[0] as i64 || y >= dims[1] as i64 || z >= dims[2] as i64 {
                    continue;
                }
                acc += wx * wy * wz * v.get(x as usize, y as usize, z as usize) as f64;
            }
        }
    }
    acc as f32
}
