//! Forward and backward kernels. Every output element is reduced in a fixed
//! order, so results are bit-reproducible for a given build.

use super::{Real, Tensor};
use crate::error::{Error, Result};

const LANES: usize = 64;

/// Dot product with a fixed lane-partitioned summation order.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            lanes[l] = xa[l].mul_add(xb[l], lanes[l]);
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = x.mul_add(y, tail);
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for l in 0..width {
            lanes[l] = lanes[l] + lanes[l + width];
        }
    }
    lanes[0] + tail
}

/// `p[j] += sum_{b,c} w[3b + c] * s[j + b * stride + c]` for every `j` in `p`.
#[inline]
fn fma9<T: Real>(p: &mut [T], s: &[T], stride: usize, w: &[T]) {
    let n = p.len();
    let w: [T; 9] = w[..9].try_into().expect("nine taps");
    let s0 = &s[..n];
    let s1 = &s[1..n + 1];
    let s2 = &s[2..n + 2];
    let s3 = &s[stride..stride + n];
    let s4 = &s[stride + 1..stride + 1 + n];
    let s5 = &s[stride + 2..stride + 2 + n];
    let s6 = &s[2 * stride..2 * stride + n];
    let s7 = &s[2 * stride + 1..2 * stride + 1 + n];
    let s8 = &s[2 * stride + 2..2 * stride + 2 + n];
    for j in 0..n {
        let mut acc = p[j];
        acc = w[0].mul_add(s0[j], acc);
        acc = w[1].mul_add(s1[j], acc);
        acc = w[2].mul_add(s2[j], acc);
        acc = w[3].mul_add(s3[j], acc);
        acc = w[4].mul_add(s4[j], acc);
        acc = w[5].mul_add(s5[j], acc);
        acc = w[6].mul_add(s6[j], acc);
        acc = w[7].mul_add(s7[j], acc);
        acc = w[8].mul_add(s8[j], acc);
        p[j] = acc;
    }
}

#[inline]
fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn spatial(shape: &[usize], what: &str) -> Result<(usize, [usize; 3])> {
    if shape.len() != 4 {
        return Err(Error::Shape(format!("{what} must be [C, S0, S1, S2], got {shape:?}")));
    }
    Ok((shape[0], [shape[1], shape[2], shape[3]]))
}

/// Output shape of a valid 3x3x3 convolution with `c_out` channels.
pub fn conv3d_output_shape(input: &[usize], c_out: usize) -> Result<Vec<usize>> {
    let (_, s) = spatial(input, "conv input")?;
    if s.iter().any(|&d| d < 3) {
        return Err(Error::Shape(format!(
            "valid 3x3x3 convolution needs spatial extents >= 3, got {s:?}"
        )));
    }
    Ok(vec![c_out, s[0] - 2, s[1] - 2, s[2] - 2])
}

/// Output shape of non-overlapping max pooling with window `k` (floor).
pub fn maxpool3d_output_shape(input: &[usize], k: usize) -> Result<Vec<usize>> {
    let (c, s) = spatial(input, "pool input")?;
    if k == 0 {
        return Err(Error::Shape("pool window must be >= 1".into()));
    }
    let o = s.map(|d| d / k);
    if o.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!(
            "pool window {k} exceeds spatial extents {s:?}"
        )));
    }
    Ok(vec![c, o[0], o[1], o[2]])
}

/// Valid (unpadded, stride 1) 3D cross-correlation.
///
/// `input`: `[C_in, S0, S1, S2]`, `kernels`: `[C_out, C_in, 3, 3, 3]`,
/// `bias`: `[C_out]`.
pub fn conv3d_valid<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (ci, is) = spatial(input.shape(), "conv input")?;
    let ks = kernels.shape();
    if ks.len() != 5 || ks[1] != ci || ks[2..] != [3, 3, 3] {
        return Err(Error::Shape(format!(
            "kernels must be [C_out, {ci}, 3, 3, 3], got {ks:?}"
        )));
    }
    let co = ks[0];
    if bias.shape() != [co] {
        return Err(Error::Shape(format!("bias must be [{co}], got {:?}", bias.shape())));
    }
    let oshape = conv3d_output_shape(input.shape(), co)?;
    let (oz, oy, ox) = (oshape[1], oshape[2], oshape[3]);
    let (iy, ix) = (is[1], is[2]);
    let plane = iy * ix;
    let isz = is[0] * plane;
    let osz = oz * oy * ox;
    let inp = input.data();
    let k = kernels.data();
    let mut out = vec![T::zero(); co * osz];
    // Each output plane is computed on the input row stride; the last two
    // columns of every row are scratch and get dropped.
    let len = (oy - 1) * ix + ox;
    let mut p = vec![T::zero(); len];

    for o in 0..co {
        for z in 0..oz {
            p.fill(bias.data()[o]);
            for i in 0..ci {
                for a in 0..3 {
                    let src = &inp[i * isz + (z + a) * plane..][..plane];
                    fma9(&mut p, src, ix, &k[(o * ci + i) * 27 + a * 9..]);
                }
            }
            let dst = &mut out[o * osz + z * oy * ox..][..oy * ox];
            for (y, row) in dst.chunks_exact_mut(ox).enumerate() {
                row.copy_from_slice(&p[y * ix..y * ix + ox]);
            }
        }
    }
    Tensor::new(oshape, out)
}

/// Gradients of [`conv3d_valid`]: `(d_input, d_kernels, d_bias)`.
/// `d_input` is only computed when `need_input` is set.
pub fn conv3d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let ishape = input.shape();
    let (ci, iz, iy, ix) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let gs = grad_out.shape();
    let (co, oz, oy, ox) = (gs[0], gs[1], gs[2], gs[3]);
    let isz = iz * iy * ix;
    let osz = oz * oy * ox;
    let inp = input.data();
    let g = grad_out.data();
    let k = kernels.data();

    let d_bias = Tensor::from_fn(&[co], |o| {
        let mut s = T::zero();
        for row in g[o * osz..(o + 1) * osz].chunks_exact(ox) {
            s = s + row.iter().copied().sum::<T>();
        }
        s
    });

    // Gradient planes on the input row stride, zero in the scratch columns,
    // with `2 * ix + 2` leading zeros so shifted reads stay in bounds.
    let plane = iy * ix;
    let lead = 2 * ix + 2;
    let gp_len = plane + lead;
    let mut gp = vec![T::zero(); co * oz * gp_len];
    for o in 0..co {
        for z in 0..oz {
            let dst = &mut gp[(o * oz + z) * gp_len + lead..][..plane];
            for y in 0..oy {
                dst[y * ix..y * ix + ox].copy_from_slice(&g[o * osz + (z * oy + y) * ox..][..ox]);
            }
        }
    }
    let len = (oy - 1) * ix + ox;

    let mut dk = vec![T::zero(); co * ci * 27];
    for o in 0..co {
        for i in 0..ci {
            let acc = &mut dk[(o * ci + i) * 27..][..27];
            for z in 0..oz {
                let gz = &gp[(o * oz + z) * gp_len + lead..][..len];
                for a in 0..3 {
                    let src = &inp[i * isz + (z + a) * plane..][..plane];
                    for b in 0..3 {
                        for c in 0..3 {
                            let t = a * 9 + b * 3 + c;
                            acc[t] = acc[t] + dot(gz, &src[b * ix + c..][..len]);
                        }
                    }
                }
            }
        }
    }
    let d_kernels = Tensor::new(kernels.shape().to_vec(), dk).expect("kernel grad shape");

    let d_input = need_input.then(|| {
        let mut di = vec![T::zero(); ci * isz];
        let mut wf = [T::zero(); 9];
        for i in 0..ci {
            for zi in 0..iz {
                let dplane = &mut di[i * isz + zi * plane..][..plane];
                for a in 0..3 {
                    if zi < a || zi - a >= oz {
                        continue;
                    }
                    let z = zi - a;
                    for o in 0..co {
                        let w = &k[(o * ci + i) * 27 + a * 9..][..9];
                        for (t, f) in wf.iter_mut().enumerate() {
                            *f = w[8 - t];
                        }
                        fma9(dplane, &gp[(o * oz + z) * gp_len..][..gp_len], ix, &wf);
                    }
                }
            }
        }
        Tensor::new(ishape.to_vec(), di).expect("input grad shape")
    });

    (d_input, d_kernels, d_bias)
}

/// Non-overlapping max pooling with a cubic window of `k` and stride `k`.
/// Trailing voxels that do not fill a window are dropped. Returns the pooled
/// map and, per output element, the flat input index of the maximum (first
/// index wins ties).
pub fn maxpool3d<T: Real>(input: &Tensor<T>, k: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    let oshape = maxpool3d_output_shape(input.shape(), k)?;
    let s = input.shape();
    let (iz, iy, ix) = (s[1], s[2], s[3]);
    let (c, oz, oy, ox) = (oshape[0], oshape[1], oshape[2], oshape[3]);
    let inp = input.data();
    let mut out = Vec::with_capacity(c * oz * oy * ox);
    let mut arg = Vec::with_capacity(out.capacity());
    for ch in 0..c {
        let base = ch * iz * iy * ix;
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for dz in 0..k {
                        for dy in 0..k {
                            let row = base + ((z * k + dz) * iy + y * k + dy) * ix + x * k;
                            for dx in 0..k {
                                let v = inp[row + dx];
                                if v > best {
                                    best = v;
                                    best_i = row + dx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i as u32);
                }
            }
        }
    }
    Ok((Tensor::new(oshape, out)?, arg))
}

pub fn maxpool3d_backward<T: Real>(grad_out: &Tensor<T>, argmax: &[u32], input_shape: &[usize]) -> Tensor<T> {
    let mut d = Tensor::zeros(input_shape);
    for (&gi, &idx) in grad_out.data().iter().zip(argmax) {
        let slot = &mut d.data_mut()[idx as usize];
        *slot = *slot + gi;
    }
    d
}

/// Affine map `W x + b` with `W: [m, n]`; `x` may have any shape of `n` values.
pub fn dense<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ws = w.shape();
    if ws.len() != 2 || ws[1] != x.len() || b.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "dense: weights {ws:?}, bias {:?} incompatible with {} inputs",
            b.shape(),
            x.len()
        )));
    }
    let n = ws[1];
    let out = (0..ws[0])
        .map(|r| b.data()[r] + dot(&w.data()[r * n..(r + 1) * n], x.data()))
        .collect();
    Tensor::new(vec![ws[0]], out)
}

/// Gradients of [`dense`]: `(d_x, d_w, d_b)`.
pub fn dense_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let g = grad_out.data();
    let mut dx = vec![T::zero(); n];
    for r in 0..m {
        axpy(&mut dx, g[r], &w.data()[r * n..(r + 1) * n]);
    }
    let mut dw = vec![T::zero(); m * n];
    for r in 0..m {
        for (d, &xv) in dw[r * n..(r + 1) * n].iter_mut().zip(x.data()) {
            *d = g[r] * xv;
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dense dx"),
        Tensor::new(vec![m, n], dw).expect("dense dw"),
        grad_out.clone(),
    )
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::new(
        x.shape().to_vec(),
        x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
    )
    .expect("relu shape")
}

/// ReLU gradient; the subgradient at exactly zero is taken as zero.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    Tensor::new(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect(),
    )
    .expect("relu grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn conv_all_ones() {
        let x = Tensor::<f32>::filled(&[1, 3, 3, 3], 1.0);
        let k = Tensor::<f32>::filled(&[1, 1, 3, 3, 3], 1.0);
        let b = Tensor::<f32>::zeros(&[1]);
        let y = conv3d_valid(&x, &k, &b).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 27.0);
    }

    #[test]
    fn conv_delta_kernel_crops() {
        let x = Tensor::<f64>::from_fn(&[1, 5, 4, 6], |i| i as f64);
        let mut k = Tensor::<f64>::zeros(&[1, 1, 3, 3, 3]);
        k.data_mut()[13] = 1.0;
        let y = conv3d_valid(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 4]);
        for z in 0..3 {
            for yy in 0..2 {
                for xx in 0..4 {
                    let want = x.data()[((z + 1) * 4 + yy + 1) * 6 + xx + 1];
                    assert_eq!(y.data()[(z * 2 + yy) * 4 + xx], want);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_small_extent() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let k = Tensor::<f32>::zeros(&[1, 1, 3, 3, 3]);
        assert!(matches!(conv3d_valid(&x, &k, &Tensor::zeros(&[1])), Err(Error::Shape(_))));
    }

    #[test]
    fn pool_constant_and_construction() {
        let x = Tensor::<f32>::filled(&[2, 4, 4, 4], 0.5);
        let (y, _) = maxpool3d(&x, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));

        let mut x = Tensor::<f32>::zeros(&[1, 4, 2, 2]);
        x.data_mut()[3] = 7.0; // window 0
        x.data_mut()[12] = 9.0; // window 1 (z = 3)
        let (y, arg) = maxpool3d(&x, 2).unwrap();
        assert_eq!(y.data(), &[7.0, 9.0]);
        assert_eq!(arg, vec![3, 12]);
    }

    #[test]
    fn pool_floor_and_tie_break() {
        let x = Tensor::<f32>::filled(&[1, 5, 5, 5], 1.0);
        let (y, arg) = maxpool3d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert_eq!(arg[0], 0);
        assert!(maxpool3d(&x, 6).is_err());
    }

    #[test]
    fn dense_identity_and_bias() {
        let x = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 3.5]).unwrap();
        let eye = Tensor::<f64>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());
        let b = Tensor::<f64>::new(vec![2], vec![0.25, -4.0]).unwrap();
        assert_eq!(dense(&x, &Tensor::zeros(&[2, 3]), &b).unwrap().data(), b.data());
        assert!(dense(&x, &Tensor::zeros(&[2, 4]), &b).is_err());
    }

    #[test]
    fn relu_tie_rule() {
        let x = Tensor::<f64>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::<f64>::filled(&[3], 1.0);
        assert_eq!(relu_backward(&x, &g).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shape_algebra_without_data() {
        assert_eq!(conv3d_output_shape(&[1, 64, 48, 32], 8).unwrap(), vec![8, 62, 46, 30]);
        assert_eq!(maxpool3d_output_shape(&[8, 62, 46, 30], 2).unwrap(), vec![8, 31, 23, 15]);
        assert!(conv3d_output_shape(&[1, 2, 48, 32], 8).is_err());
    }
}
