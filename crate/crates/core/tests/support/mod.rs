//! Independent oracles shared by the integration and acceptance tests.
//! Every `check_*` returns a list of failure descriptions (empty = pass).
#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use volcount_core::stats::{
    icc, icc_pair, pearson, spearman, williams_test, zinb_fit, IccKind, ZinbOptions,
};
use volcount_core::tensor::{kernels, Graph, NodeId};
use volcount_core::volgrid::{binary_dilate, gaussian_smooth, read_volume, write_volume};
use volcount_core::{LossKind, MaskVolume, Tensor, Volume};

pub type Failures = Vec<String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

// ---------------------------------------------------------------- naive layers

/// Seven nested loops over output channel, output voxel, input channel and tap.
pub fn naive_conv(input: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let s = input.shape();
    let (ci, s0, s1, s2) = (s[0], s[1], s[2], s[3]);
    let co = k.shape()[0];
    let (o0, o1, o2) = (s0 - 2, s1 - 2, s2 - 2);
    let x = |c: usize, i: usize, j: usize, l: usize| input.data()[((c * s0 + i) * s1 + j) * s2 + l];
    let w = |o: usize, c: usize, a: usize, bb: usize, d: usize| k.data()[(((o * ci + c) * 3 + a) * 3 + bb) * 3 + d];
    let mut out = Vec::with_capacity(co * o0 * o1 * o2);
    for o in 0..co {
        for i in 0..o0 {
            for j in 0..o1 {
                for l in 0..o2 {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for a in 0..3 {
                            for bb in 0..3 {
                                for d in 0..3 {
                                    acc += w(o, c, a, bb, d) * x(c, i + a, j + bb, l + d);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn naive_pool(input: &Tensor<f64>, k: usize) -> Vec<f64> {
    let s = input.shape();
    let o = [s[1] / k, s[2] / k, s[3] / k];
    let mut out = Vec::new();
    for c in 0..s[0] {
        for i in 0..o[0] {
            for j in 0..o[1] {
                for l in 0..o[2] {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..k {
                        for bb in 0..k {
                            for d in 0..k {
                                let idx = ((c * s[1] + i * k + a) * s[2] + j * k + bb) * s[3] + l * k + d;
                                m = m.max(input.data()[idx]);
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    out
}

pub fn naive_dense(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    (0..m)
        .map(|r| b.data()[r] + (0..n).map(|c| w.data()[r * n + c] * x.data()[c]).sum::<f64>())
        .collect()
}

pub fn check_naive_oracles() -> Failures {
    let mut f = Vec::new();
    let mut r = rng(1);
    for trial in 0..5 {
        let ci = 1 + trial % 3;
        let shape = [ci, 5 + trial, 5, 6 + trial % 2];
        let x = rand_tensor(&shape, &mut r);
        let k = rand_tensor(&[2, ci, 3, 3, 3], &mut r);
        let b = rand_tensor(&[2], &mut r);
        let got = kernels::conv3d_valid(&x, &k, &b).unwrap();
        let want = naive_conv(&x, &k, &b);
        if got.data().iter().zip(&want).any(|(a, b)| !rel_close(*a, *b, 1e-6)) {
            f.push(format!("conv forward differs from naive oracle (trial {trial})"));
        }
        let x32: Tensor<f32> = x.cast();
        let got32 = kernels::conv3d_valid(&x32, &k.cast(), &b.cast()).unwrap();
        if got32.data().iter().zip(&want).any(|(a, b)| (*a as f64 - b).abs() > 1e-5 * b.abs().max(1.0)) {
            f.push(format!("f32 conv forward differs from naive oracle (trial {trial})"));
        }
    }
    for k in [2usize, 4] {
        let x = rand_tensor(&[2, 8, 8, 9], &mut r);
        let (got, _) = kernels::maxpool3d(&x, k).unwrap();
        if got.data() != naive_pool(&x, k).as_slice() {
            f.push(format!("maxpool k={k} differs from naive oracle"));
        }
    }
    let x = rand_tensor(&[37], &mut r);
    let w = rand_tensor(&[5, 37], &mut r);
    let b = rand_tensor(&[5], &mut r);
    let got = kernels::dense(&x, &w, &b).unwrap();
    if got.data().iter().zip(naive_dense(&x, &w, &b)).any(|(a, b)| !rel_close(*a, b, 1e-6)) {
        f.push("dense differs from naive matvec".into());
    }
    f
}

// ------------------------------------------------------- finite differences

/// Compares analytic gradients of every input with central differences,
/// using the tensor-norm relative error.
pub fn gradcheck(name: &str, inputs: &[Tensor<f64>], build: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId, tol: f64) -> Failures {
    let eval = |vals: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = build(&mut g, &ids);
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &ids);
    if let Err(e) = g.backward(out) {
        return vec![format!("{name}: backward failed: {e}")];
    }
    let mut f = Vec::new();
    let h = 1e-6;
    for (t, id) in ids.iter().enumerate() {
        let analytic = g.grad_or_zeros(*id);
        let mut vals = inputs.to_vec();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in 0..inputs[t].len() {
            let orig = vals[t].data()[i];
            vals[t].data_mut()[i] = orig + h;
            let up = eval(&vals);
            vals[t].data_mut()[i] = orig - h;
            let dn = eval(&vals);
            vals[t].data_mut()[i] = orig;
            let num = (up - dn) / (2.0 * h);
            let a = analytic.data()[i];
            diff2 += (a - num).powi(2);
            a2 += a * a;
            n2 += num * num;
        }
        let rel = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-12);
        if rel >= tol {
            f.push(format!("{name}: input {t} relative error {rel:.2e}"));
        }
    }
    f
}

fn loss_kinds() -> Vec<LossKind> {
    vec![LossKind::Mse, LossKind::Mce, LossKind::Mqe, LossKind::tukey(), LossKind::Rmse]
}

/// Weighted sum: a scalar with a non-uniform upstream gradient.
fn wsum(g: &mut Graph<f64>, x: NodeId) -> NodeId {
    let shape = g.value(x).shape().to_vec();
    let c = g.constant(Tensor::from_fn(&shape, |i| 0.5 + ((i * 7) % 11) as f64 / 10.0));
    let m = g.mul(x, c).unwrap();
    g.sum(m)
}

/// Finite-difference checks for every layer on its own.
pub fn check_layer_gradients() -> Failures {
    let mut f = Vec::new();
    let mut r = rng(2);
    let tol = 1e-4;
    let w = rand_tensor(&[2, 4, 5, 4], &mut r);
    let conv_in = [rand_tensor(&[2, 6, 7, 6], &mut r), rand_tensor(&[3, 2, 3, 3, 3], &mut r), rand_tensor(&[3], &mut r)];
    f.extend(gradcheck(
        "conv3d",
        &conv_in,
        &|g, ids| {
            let y = g.conv3d(ids[0], ids[1], ids[2]).unwrap();
            wsum(g, y)
        },
        tol,
    ));
    f.extend(gradcheck(
        "maxpool3d k=2",
        &[rand_tensor(&[2, 8, 8, 8], &mut r)],
        &|g, ids| {
            let y = g.maxpool3d(ids[0], 2).unwrap();
            wsum(g, y)
        },
        tol,
    ));
    f.extend(gradcheck(
        "maxpool3d k=4",
        &[rand_tensor(&[1, 8, 9, 8], &mut r)],
        &|g, ids| {
            let y = g.maxpool3d(ids[0], 4).unwrap();
            wsum(g, y)
        },
        tol,
    ));
    f.extend(gradcheck(
        "dense",
        &[rand_tensor(&[2, 3, 2], &mut r), rand_tensor(&[4, 12], &mut r), rand_tensor(&[4], &mut r)],
        &|g, ids| {
            let y = g.dense(ids[0], ids[1], ids[2]).unwrap();
            wsum(g, y)
        },
        tol,
    ));
    f.extend(gradcheck(
        "relu",
        &[rand_tensor(&[40], &mut r)],
        &|g, ids| {
            let y = g.relu(ids[0]);
            wsum(g, y)
        },
        tol,
    ));
    f.extend(gradcheck(
        "add/mul",
        &[rand_tensor(&[3, 4], &mut r), rand_tensor(&[3, 4], &mut r)],
        &|g, ids| {
            let a = g.add(ids[0], ids[1]).unwrap();
            let m = g.mul(a, ids[0]).unwrap();
            wsum(g, m)
        },
        tol,
    ));
    f.extend(gradcheck(
        "reshape/flatten",
        &[w],
        &|g, ids| {
            let a = g.reshape(ids[0], vec![8, 20]).unwrap();
            let b = g.flatten(a);
            wsum(g, b)
        },
        tol,
    ));
    for kind in loss_kinds() {
        f.extend(gradcheck(
            &format!("loss {}", kind.name()),
            &[Tensor::from_fn(&[1], |_| 1.3)],
            &move |g, ids| g.loss(kind, ids[0], 3.1).unwrap(),
            tol,
        ));
        f.extend(gradcheck(
            &format!("loss {} near target", kind.name()),
            &[Tensor::from_fn(&[1], |_| 2.9)],
            &move |g, ids| g.loss(kind, ids[0], 3.1).unwrap(),
            tol,
        ));
    }
    f
}

/// Random conv → ReLU → pool → (conv →) dense → ReLU → dense → loss stacks.
pub fn check_composite_gradients(count: usize) -> Failures {
    let mut f = Vec::new();
    for seed in 0..count as u64 {
        let mut r = rng(100 + seed);
        let c1 = r.random_range(1..=3);
        let two_convs = r.random_bool(0.5);
        let s = [r.random_range(8..=10), r.random_range(8..=10), r.random_range(8..=10)];
        let kind = loss_kinds()[r.random_range(0..5)];
        let target = r.random_range(-3.0..3.0);
        // Work out the flattened size with the shape algebra.
        let mut shape = kernels::conv3d_output_shape(&[1, s[0], s[1], s[2]], c1).unwrap();
        shape = kernels::maxpool3d_output_shape(&shape, 2).unwrap();
        let c2 = 2;
        if two_convs {
            shape = kernels::conv3d_output_shape(&shape, c2).unwrap();
        }
        let flat: usize = shape.iter().product();
        let hidden = 5;
        let mut inputs = vec![
            rand_tensor(&[1, s[0], s[1], s[2]], &mut r),
            rand_tensor(&[c1, 1, 3, 3, 3], &mut r),
            rand_tensor(&[c1], &mut r),
            rand_tensor(&[hidden, flat], &mut r),
            rand_tensor(&[hidden], &mut r),
            rand_tensor(&[1, hidden], &mut r),
            rand_tensor(&[1], &mut r),
        ];
        if two_convs {
            inputs.push(rand_tensor(&[c2, c1, 3, 3, 3], &mut r));
            inputs.push(rand_tensor(&[c2], &mut r));
        }
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let mut h = g.conv3d(ids[0], ids[1], ids[2]).unwrap();
            h = g.relu(h);
            h = g.maxpool3d(h, 2).unwrap();
            if two_convs {
                h = g.conv3d(h, ids[7], ids[8]).unwrap();
                h = g.relu(h);
            }
            h = g.flatten(h);
            h = g.dense(h, ids[3], ids[4]).unwrap();
            h = g.relu(h);
            let y = g.dense(h, ids[5], ids[6]).unwrap();
            g.loss(kind, y, target).unwrap()
        };
        f.extend(gradcheck(&format!("composite {seed} ({})", kind.name()), &inputs, &build, 1e-4));
    }
    f
}

// ------------------------------------------------------------------ volgrid

/// Multi-source breadth-first search: a voxel is set when its grid
/// distance to the foreground is at most `iters`.
pub fn flood_dilate(mask: &[bool], dims: [usize; 3], iters: usize) -> Vec<bool> {
    let mut dist = vec![usize::MAX; mask.len()];
    let mut queue = std::collections::VecDeque::new();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        if dist[i] == iters {
            continue;
        }
        let p = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
        for a in 0..3 {
            for step in [-1i64, 1] {
                let q = p[a] as i64 + step;
                if q < 0 || q >= dims[a] as i64 {
                    continue;
                }
                let mut n = p;
                n[a] = q as usize;
                let j = n[0] + dims[0] * (n[1] + dims[1] * n[2]);
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
    }
    dist.iter().map(|&d| d <= iters).collect()
}

pub fn check_dilation(masks: usize) -> Failures {
    let mut f = Vec::new();
    let mut r = rng(3);
    for t in 0..masks {
        let dims = [r.random_range(4..14), r.random_range(4..14), r.random_range(4..14)];
        let density = r.random_range(0.0..0.08);
        let bits: Vec<bool> = (0..dims.iter().product::<usize>()).map(|_| r.random_bool(density)).collect();
        let iters = r.random_range(0..5);
        let mask = MaskVolume::new(Volume::new(dims, [1.0; 3], bits.iter().map(|&b| b as u8 as f32).collect()).unwrap()).unwrap();
        let got = binary_dilate(&mask, iters).unwrap();
        let want = flood_dilate(&bits, dims, iters);
        let got_bits: Vec<bool> = got.as_volume().data().iter().map(|&v| v > 0.5).collect();
        if got_bits != want {
            f.push(format!("dilation mask {t} ({dims:?}, {iters} iterations) differs from flood oracle"));
        }
    }
    f
}

/// Direct (non-separable) convolution of a unit impulse with a cube-truncated,
/// unit-sum sampled 3D Gaussian.
pub fn dense_gaussian_impulse(dims: [usize; 3], c: [usize; 3], sigma: f64) -> Vec<f64> {
    let rad = (3.0 * sigma).ceil() as i64;
    let mut norm = 0.0;
    for dz in -rad..=rad {
        for dy in -rad..=rad {
            for dx in -rad..=rad {
                norm += (-((dx * dx + dy * dy + dz * dz) as f64) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let mut out = vec![0.0; dims.iter().product()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let d = [x as i64 - c[0] as i64, y as i64 - c[1] as i64, z as i64 - c[2] as i64];
                if d.iter().any(|v| v.abs() > rad) {
                    continue;
                }
                let r2 = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64;
                out[x + dims[0] * (y + dims[1] * z)] = (-r2 / (2.0 * sigma * sigma)).exp() / norm;
            }
        }
    }
    out
}

pub fn check_gaussian() -> Failures {
    let mut f = Vec::new();
    for sigma in [1.0, 2.0, 1.3] {
        let dims = [21, 19, 23];
        let c = [10, 9, 11];
        let mut v = Volume::zeros(dims, [1.0; 3]);
        v.set(c[0], c[1], c[2], 1.0);
        let got = gaussian_smooth(&v, sigma).unwrap();
        let want = dense_gaussian_impulse(dims, c, sigma);
        let worst = got.data().iter().zip(&want).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
        if worst > 1e-6 {
            f.push(format!("gaussian impulse sigma={sigma}: max deviation {worst:.2e}"));
        }
    }
    f
}

pub fn check_svol_round_trip(count: usize) -> Failures {
    let mut f = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(4);
    for t in 0..count {
        let dims = [r.random_range(1..12), r.random_range(1..12), r.random_range(1..12)];
        let spacing = [r.random_range(0.1..3.0), r.random_range(0.1..3.0), r.random_range(0.1..3.0)];
        let data: Vec<f32> = (0..dims.iter().product::<usize>())
            .map(|_| {
                let bits: u32 = r.random();
                let v = f32::from_bits(bits);
                if v.is_finite() { v } else { r.random_range(-1e6..1e6) }
            })
            .collect();
        let v = Volume::new(dims, spacing, data).unwrap();
        let p = dir.path().join(format!("v{t}.svol"));
        write_volume(&p, &v).unwrap();
        match read_volume(&p) {
            Ok(back) if back.bit_eq(&v) => {}
            Ok(_) => f.push(format!("SVOL round trip {t} not bit-exact")),
            Err(e) => f.push(format!("SVOL round trip {t} failed: {e}")),
        }
    }
    f
}

// -------------------------------------------------------------------- stats

/// ICC(2,1) from explicit sums of squares, with the residual computed
/// cell by cell rather than by subtraction.
pub fn anova_icc21(table: &[Vec<f64>]) -> f64 {
    let n = table.len();
    let k = table[0].len();
    let grand: f64 = table.iter().flatten().sum::<f64>() / (n * k) as f64;
    let rm: Vec<f64> = table.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let cm: Vec<f64> = (0..k).map(|j| table.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut ssr = 0.0;
    let mut ssc = 0.0;
    let mut sse = 0.0;
    for i in 0..n {
        ssr += k as f64 * (rm[i] - grand).powi(2);
    }
    for j in 0..k {
        ssc += n as f64 * (cm[j] - grand).powi(2);
    }
    for i in 0..n {
        for j in 0..k {
            sse += (table[i][j] - rm[i] - cm[j] + grand).powi(2);
        }
    }
    let msr = ssr / (n - 1) as f64;
    let msc = ssc / (k - 1) as f64;
    let mse = sse / ((n - 1) * (k - 1)) as f64;
    (msr - mse) / (msr + (k as f64 - 1.0) * mse + k as f64 / n as f64 * (msc - mse))
}

pub fn check_icc_tables(count: usize) -> Failures {
    let mut f = Vec::new();
    let mut r = rng(5);
    let a = [1.0, 2.0, 3.0, 4.0];
    let b = [3.0, 4.0, 5.0, 6.0];
    let hand = icc_pair(&a, &b, IccKind::Icc21).unwrap();
    if (hand - 0.4545).abs() > 1e-4 {
        f.push(format!("ICC hand example gave {hand}, expected 0.4545"));
    }
    for t in 0..count {
        let n = r.random_range(3..40);
        let k = r.random_range(2..6);
        let table: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let subject: f64 = r.random_range(0.0..10.0);
                (0..k).map(|j| subject + j as f64 * 0.3 + r.random_range(-2.0..2.0)).collect()
            })
            .collect();
        let got = icc(&table, IccKind::Icc21).unwrap();
        let want = anova_icc21(&table);
        if (got - want).abs() > 1e-10 {
            f.push(format!("ICC table {t} ({n}×{k}): {got} vs oracle {want}"));
        }
    }
    f
}

pub fn check_correlation_examples() -> Failures {
    let mut f = Vec::new();
    let p = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
    if (p - 0.98198).abs() > 1e-5 {
        f.push(format!("Pearson example {p}"));
    }
    let s = spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
    if (s + 0.5).abs() > 1e-5 {
        f.push(format!("Spearman example {s}"));
    }
    f
}

/// Williams t of simulated trivariate normal samples with correlation
/// matrix `[[1, r12, r13], [r12, 1, r23], [r13, r23, 1]]`.
pub fn williams_null_tails(r12: f64, rho: f64, n: usize, t_obs: f64, reps: usize, seed: u64) -> f64 {
    let cov = Matrix3::new(1.0, r12, rho, r12, 1.0, rho, rho, rho, 1.0);
    let l = cov.cholesky().expect("positive definite").l();
    let mut r = rng(seed);
    let mut hits = 0;
    for _ in 0..reps {
        let mut cols = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let z = Vector3::new(StandardNormal.sample(&mut r), StandardNormal.sample(&mut r), StandardNormal.sample(&mut r));
            let x = l * z;
            for c in 0..3 {
                cols[c][i] = x[c];
            }
        }
        let r13 = pearson(&cols[0], &cols[2]).unwrap();
        let r23 = pearson(&cols[1], &cols[2]).unwrap();
        let r12s = pearson(&cols[0], &cols[1]).unwrap();
        if williams_test(r13, r23, r12s, n).unwrap().t.abs() >= t_obs.abs() {
            hits += 1;
        }
    }
    hits as f64 / reps as f64
}

pub fn check_williams() -> Failures {
    let mut f = Vec::new();
    let w = williams_test(0.7, 0.7, 0.4, 100).unwrap();
    if w.t != 0.0 || (w.p - 1.0).abs() > 1e-12 {
        f.push(format!("Williams equal correlations: t {} p {}", w.t, w.p));
    }
    let a = williams_test(0.75, 0.63, 0.7, 405).unwrap();
    let b = williams_test(0.63, 0.75, 0.7, 405).unwrap();
    if (a.t + b.t).abs() > 1e-12 || a.p != b.p {
        f.push("Williams not antisymmetric".into());
    }
    // The fixed case: its p is far below what simulation can resolve,
    // so the oracle only confirms the tail is empty at this budget.
    let reps = 2000;
    let mc = williams_null_tails(0.7, 0.69, 405, a.t, reps, 6);
    let se = (a.p * (1.0 - a.p) / reps as f64).sqrt();
    if (mc - a.p).abs() > 3.0 * se + 1.0 / reps as f64 {
        f.push(format!("Williams MC tail {mc} vs p {} (fixed case)", a.p));
    }
    // A moderate case where the tail is well resolved.
    let m = williams_test(0.6, 0.45, 0.5, 60).unwrap();
    let mc = williams_null_tails(0.5, 0.525, 60, m.t, reps, 7);
    let se = (m.p * (1.0 - m.p) / reps as f64).sqrt();
    if (mc - m.p).abs() > 3.0 * se {
        f.push(format!("Williams MC tail {mc} vs p {} ± {se:.4} (moderate case)", m.p));
    }
    f
}

/// ZINB sample with a per-decade rate ratio on age in years.
pub fn simulate_zinb(n: usize, pi: f64, r: f64, rate_ratio: f64, seed: u64) -> (Vec<u64>, Vec<Vec<f64>>) {
    let mut g = rng(seed);
    let slope = rate_ratio.ln() / 10.0;
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let age: f64 = g.random_range(45.0..95.0);
        let mu = (1.6 + slope * (age - 70.0)).exp();
        let c = if g.random_bool(pi) {
            0
        } else {
            let lam: f64 = Gamma::new(r, mu / r).unwrap().sample(&mut g);
            Poisson::new(lam.max(1e-12)).unwrap().sample(&mut g) as u64
        };
        y.push(c);
        x.push(vec![age]);
    }
    (y, x)
}

pub fn check_zinb_recovery() -> Failures {
    let (y, x) = simulate_zinb(1000, 0.3, 2.0, 1.3, 8);
    match zinb_fit(&y, &x, &ZinbOptions::default()) {
        Ok(fit) => match fit.rate_ratio {
            Some(rr) if fit.converged && (1.2..=1.4).contains(&rr.estimate) => Vec::new(),
            rr => vec![format!("ZINB rate ratio {rr:?}, converged {}", fit.converged)],
        },
        Err(e) => vec![format!("ZINB fit failed: {e}")],
    }
}
