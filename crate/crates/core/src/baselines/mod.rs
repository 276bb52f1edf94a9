//! Hand-crafted comparison quantifiers and their linear calibration.

mod bow;
mod calibrate;
mod forest;
mod io;

pub use bow::{bow_features, descriptors_for_slice, BowConfig, BowDictionary, DESCRIPTOR_LEN};
pub use calibrate::{calibrate_linear, CalibrationParams};
pub use forest::{Forest, ForestConfig, Node, Tree};
pub use io::{decode_forest, encode_forest, read_forest, write_forest, FittedBaselines};

use crate::error::{Error, Result};
use crate::stats::spearman;
use crate::volgrid::Volume;

/// Baseline (a): mean intensity over every voxel of the smooth ROI volume.
pub fn baseline_intensity(s: &Volume) -> f64 {
    s.mean()
}

fn check_threshold(t: f64) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("threshold {t} is not finite")))
    }
}

/// Baseline (b): number of voxels strictly above `threshold`.
pub fn baseline_volume(s: &Volume, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    Ok(s.data().iter().filter(|&&v| v as f64 > threshold).count() as f64)
}

/// Labels the 6-connected components of `fg`; returns one label per voxel
/// (`0` = background, components numbered from 1) and the component count.
pub fn label_components(fg: &[bool], dims: [usize; 3]) -> (Vec<u32>, usize) {
    let [nx, ny, nz] = dims;
    let mut labels = vec![0u32; fg.len()];
    let mut stack = Vec::new();
    let mut next = 0u32;
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
            let mut visit = |j: usize| {
                if fg[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < nx {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - nx);
            }
            if y + 1 < ny {
                visit(i + nx);
            }
            if z > 0 {
                visit(i - nx * ny);
            }
            if z + 1 < nz {
                visit(i + nx * ny);
            }
        }
    }
    (labels, next as usize)
}

/// Baseline (c): number of 6-connected components above `threshold`.
pub fn baseline_components(s: &Volume, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    let fg: Vec<bool> = s.data().iter().map(|&v| v as f64 > threshold).collect();
    Ok(label_components(&fg, s.dims()).1 as f64)
}

/// Evenly spaced quantiles of the pooled voxel intensities, used as the
/// threshold search grid. Zero-valued voxels outside the mask are skipped.
pub fn threshold_grid(volumes: &[&Volume], steps: usize) -> Result<Vec<f64>> {
    let mut values: Vec<f32> = volumes
        .iter()
        .flat_map(|v| v.data().iter().copied().filter(|&x| x > 0.0))
        .collect();
    if values.is_empty() || steps == 0 {
        return Err(Error::Degenerate("no positive intensities to build a threshold grid".into()));
    }
    values.sort_by(f32::total_cmp);
    let mut grid: Vec<f64> = (0..steps)
        .map(|i| {
            let q = (i as f64 + 0.5) / steps as f64;
            values[((values.len() - 1) as f64 * q).round() as usize] as f64
        })
        .collect();
    grid.dedup();
    Ok(grid)
}

/// Picks the grid threshold whose scores rank-correlate best with `labels`.
/// Ties keep the lowest threshold; grid points giving constant scores are skipped.
pub fn tune_threshold(
    volumes: &[&Volume],
    labels: &[f64],
    grid: &[f64],
    score: impl Fn(&Volume, f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    if volumes.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: volumes.len(),
            found: labels.len(),
        });
    }
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let scores = volumes.iter().map(|v| score(v, t)).collect::<Result<Vec<_>>>()?;
        let rho = match spearman(&scores, labels) {
            Ok(r) => r,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|(_, b)| rho > b) {
            best = Some((t, rho));
        }
    }
    best.ok_or_else(|| Error::Degenerate("every threshold gave constant scores".into()))
}
