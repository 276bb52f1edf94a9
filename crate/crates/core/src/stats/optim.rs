use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the largest absolute gradient component falls below this.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

fn max_abs(g: &DVector<f64>) -> f64 {
    g.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Minimizes `f` (returning value and gradient) with BFGS and a
/// backtracking Armijo line search. Non-finite trial values are rejected,
/// so the accepted objective sequence never increases.
pub fn minimize_bfgs(mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>), x0: &[f64], opts: BfgsOptions) -> BfgsResult {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g0) = f(x.as_slice());
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut trace = vec![fx];
    let mut converged = max_abs(&g) < opts.grad_tol;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut dir = -(&h * &g);
        let mut slope = dir.dot(&g);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = dir.dot(&g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * step;
            let (ft, gt) = f(trial.as_slice());
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope && gt.iter().all(|v| v.is_finite()) {
                accepted = Some((trial, ft, DVector::from_vec(gt)));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            h = &left * &h * &right + rho * &s * s.transpose();
        }
        let progress = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        trace.push(fx);
        converged = max_abs(&g) < opts.grad_tol || (progress >= 0.0 && progress <= 1e-15 * fx.abs().max(1.0));
    }
    BfgsResult {
        x: x.as_slice().to_vec(),
        value: fx,
        iterations,
        converged,
        trace,
    }
}
