use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_factorial;

use super::optim::{minimize_bfgs, BfgsOptions};
use crate::error::{Error, Result};

/// Which covariates enter the zero-inflation logit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inflation {
    /// No structural zeros: a plain negative binomial model.
    None,
    /// A constant inflation probability.
    #[default]
    Intercept,
    /// The same covariates as the count component.
    Covariates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZinbOptions {
    pub inflation: Inflation,
    /// Shared budget for EM sweeps and quasi-Newton steps.
    pub max_iter: usize,
    pub em_iter: usize,
    /// Tolerance on the largest gradient component of the mean log-likelihood.
    pub grad_tol: f64,
    /// The rate ratio reported is `exp(scale * slope)` of the first covariate.
    pub rate_ratio_scale: f64,
    pub ci_level: f64,
}

impl Default for ZinbOptions {
    fn default() -> Self {
        Self {
            inflation: Inflation::Intercept,
            max_iter: 500,
            em_iter: 50,
            grad_tol: 1e-6,
            rate_ratio_scale: 10.0,
            ci_level: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRatio {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZinbFit {
    /// Count component: intercept followed by one slope per covariate.
    pub count_coefficients: Vec<f64>,
    /// Inflation logit: intercept, then slopes when covariates enter it.
    pub inflation_coefficients: Vec<f64>,
    /// Negative binomial size `theta`; variance is `mu + mu^2 / theta`.
    pub size: f64,
    /// `1 / theta`.
    pub dispersion: f64,
    /// Standard errors of the count coefficients (NaN if the information
    /// matrix was singular).
    pub count_std_errors: Vec<f64>,
    pub rate_ratio: Option<RateRatio>,
    pub log_likelihood: f64,
    /// Log-likelihood after every EM sweep and every accepted quasi-Newton step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Design {
    y: Vec<u64>,
    ln_y_fact: Vec<f64>,
    /// Standardized covariates, row-major `n × p`.
    x: Vec<f64>,
    p: usize,
    inflation: Inflation,
}

impl Design {
    fn n(&self) -> usize {
        self.y.len()
    }
    fn n_gamma(&self) -> usize {
        match self.inflation {
            Inflation::None => 0,
            Inflation::Intercept => 1,
            Inflation::Covariates => 1 + self.p,
        }
    }
    fn n_params(&self) -> usize {
        1 + self.p + self.n_gamma() + 1
    }
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
    fn linear(&self, coef: &[f64], i: usize) -> f64 {
        coef[0] + coef[1..].iter().zip(self.row(i)).map(|(c, x)| c * x).sum::<f64>()
    }
}

/// Log NB pmf and its derivatives in `eta = ln mu` and `kappa = ln theta`,
/// plus the same for the zero probability `ln f0`.
struct NbTerms {
    ln_pmf: f64,
    d_eta: f64,
    d_kappa: f64,
    ln_f0: f64,
    f0_eta: f64,
    f0_kappa: f64,
}

fn nb_terms(y: u64, ln_y_fact: f64, eta: f64, kappa: f64) -> NbTerms {
    let mu = eta.exp();
    let theta = kappa.exp();
    let ratio = mu / theta;
    let l1p = ratio.ln_1p();
    let (mut lg, mut dg) = (0.0, 0.0);
    for j in 0..y {
        let t = theta + j as f64;
        lg += t.ln();
        dg += 1.0 / t;
    }
    let yf = y as f64;
    // ln Gamma(y+theta) - ln Gamma(theta) - ln y! - theta ln(1+mu/theta) + y (ln mu - ln(theta+mu))
    let ln_pmf = lg - ln_y_fact - theta * l1p + yf * (eta - (theta + mu).ln());
    let d_eta = theta * (yf - mu) / (theta + mu);
    let d_kappa = theta * (dg - l1p + (mu - yf) / (theta + mu));
    let ln_f0 = -theta * l1p;
    NbTerms {
        ln_pmf,
        d_eta,
        d_kappa,
        ln_f0,
        f0_eta: -theta * mu / (theta + mu),
        f0_kappa: theta * (-l1p + mu / (theta + mu)),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

struct Split<'a> {
    beta: &'a [f64],
    gamma: &'a [f64],
    kappa: f64,
}

fn split<'a>(d: &Design, params: &'a [f64]) -> Split<'a> {
    let nb = 1 + d.p;
    let ng = d.n_gamma();
    Split {
        beta: &params[..nb],
        gamma: &params[nb..nb + ng],
        kappa: params[nb + ng],
    }
}

fn zeta(d: &Design, gamma: &[f64], i: usize) -> f64 {
    match d.inflation {
        Inflation::None => f64::NEG_INFINITY,
        Inflation::Intercept => gamma[0],
        Inflation::Covariates => d.linear(gamma, i),
    }
}

/// Full log-likelihood and gradient in the standardized parameterization.
fn loglik_grad(d: &Design, params: &[f64]) -> (f64, Vec<f64>) {
    let s = split(d, params);
    let nb = 1 + d.p;
    let mut grad = vec![0.0; params.len()];
    let mut ll = 0.0;
    for i in 0..d.n() {
        let eta = d.linear(s.beta, i);
        let t = nb_terms(d.y[i], d.ln_y_fact[i], eta, s.kappa);
        let (g_eta, g_kappa, g_zeta);
        if d.inflation == Inflation::None {
            ll += t.ln_pmf;
            g_eta = t.d_eta;
            g_kappa = t.d_kappa;
            g_zeta = 0.0;
        } else {
            let z = zeta(d, s.gamma, i);
            let ln_pi = -softplus(-z);
            let ln_1m = -softplus(z);
            let (pi, one_m) = (ln_pi.exp(), ln_1m.exp());
            if d.y[i] == 0 {
                let ln_d = log_add(ln_pi, ln_1m + t.ln_f0);
                ll += ln_d;
                let w_nb = (ln_1m + t.ln_f0 - ln_d).exp();
                let pi_over_d = (ln_pi - ln_d).exp();
                g_zeta = one_m * pi_over_d - pi * w_nb;
                g_eta = w_nb * t.f0_eta;
                g_kappa = w_nb * t.f0_kappa;
            } else {
                ll += ln_1m + t.ln_pmf;
                g_zeta = -pi;
                g_eta = t.d_eta;
                g_kappa = t.d_kappa;
            }
        }
        grad[0] += g_eta;
        for (j, x) in d.row(i).iter().enumerate() {
            grad[1 + j] += g_eta * x;
        }
        match d.inflation {
            Inflation::None => {}
            Inflation::Intercept => grad[nb] += g_zeta,
            Inflation::Covariates => {
                grad[nb] += g_zeta;
                for (j, x) in d.row(i).iter().enumerate() {
                    grad[nb + 1 + j] += g_zeta * x;
                }
            }
        }
        *grad.last_mut().unwrap() += g_kappa;
    }
    (ll, grad)
}

/// Posterior probability that each zero is structural.
fn e_step(d: &Design, params: &[f64]) -> Vec<f64> {
    let s = split(d, params);
    (0..d.n())
        .map(|i| {
            if d.y[i] != 0 || d.inflation == Inflation::None {
                return 0.0;
            }
            let t = nb_terms(0, 0.0, d.linear(s.beta, i), s.kappa);
            let z = zeta(d, s.gamma, i);
            let (ln_pi, ln_1m) = (-softplus(-z), -softplus(z));
            (ln_pi - log_add(ln_pi, ln_1m + t.ln_f0)).exp()
        })
        .collect()
}

fn standardize(covariates: &[Vec<f64>], p: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = covariates.len() as f64;
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    for j in 0..p {
        means[j] = covariates.iter().map(|r| r[j]).sum::<f64>() / n;
        sds[j] = (covariates.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt();
        if !(sds[j] > 0.0) {
            return Err(Error::Validation(format!("covariate {j} is constant")));
        }
    }
    let x = covariates
        .iter()
        .flat_map(|r| (0..p).map(|j| (r[j] - means[j]) / sds[j]).collect::<Vec<_>>())
        .collect();
    Ok((x, means, sds))
}

/// Maps standardized coefficients (intercept, slopes) back to raw covariate units.
fn unstandardize(coef: &[f64], means: &[f64], sds: &[f64]) -> Vec<f64> {
    let mut out = coef.to_vec();
    for j in 0..sds.len() {
        out[1 + j] = coef[1 + j] / sds[j];
        out[0] -= coef[1 + j] * means[j] / sds[j];
    }
    out
}

/// Observed information by central differences of the analytic gradient.
fn observed_information(d: &Design, params: &[f64]) -> DMatrix<f64> {
    let k = params.len();
    let mut h = DMatrix::zeros(k, k);
    for j in 0..k {
        let step = 1e-5 * params[j].abs().max(1.0);
        let mut up = params.to_vec();
        let mut dn = params.to_vec();
        up[j] += step;
        dn[j] -= step;
        let (_, gu) = loglik_grad(d, &up);
        let (_, gd) = loglik_grad(d, &dn);
        for i in 0..k {
            h[(i, j)] = -(gu[i] - gd[i]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Log-likelihood of the model at raw-unit parameters.
///
/// `gamma` is empty for [`Inflation::None`], a single intercept for
/// [`Inflation::Intercept`], and intercept plus slopes otherwise.
pub fn zinb_loglik(counts: &[u64], covariates: &[Vec<f64>], beta: &[f64], gamma: &[f64], size: f64) -> f64 {
    counts
        .iter()
        .zip(covariates)
        .map(|(&y, x)| {
            let lin = |c: &[f64]| c[0] + c[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let t = nb_terms(y, ln_factorial(y), lin(beta), size.ln());
            if gamma.is_empty() {
                return t.ln_pmf;
            }
            let z = lin(gamma);
            let (ln_pi, ln_1m) = (-softplus(-z), -softplus(z));
            if y == 0 {
                log_add(ln_pi, ln_1m + t.ln_f0)
            } else {
                ln_1m + t.ln_pmf
            }
        })
        .sum()
}

/// Maximum-likelihood zero-inflated negative binomial regression with a log
/// link for the mean and a logit link for the inflation probability.
///
/// `covariates` holds one row per observation (possibly empty rows for an
/// intercept-only model). Fitting runs EM over the latent structural-zero
/// indicator, then BFGS on the full likelihood. Hitting the iteration budget
/// returns a fit with `converged == false`.
pub fn zinb_fit(counts: &[u64], covariates: &[Vec<f64>], opts: &ZinbOptions) -> Result<ZinbFit> {
    if counts.len() != covariates.len() {
        return Err(Error::LengthMismatch {
            expected: counts.len(),
            found: covariates.len(),
        });
    }
    if counts.iter().all(|&y| y == 0) {
        return Err(Error::Degenerate("all counts are zero".into()));
    }
    let p = covariates.first().map_or(0, Vec::len);
    if covariates.iter().any(|r| r.len() != p || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Validation("covariate rows must be finite and of equal length".into()));
    }
    let (x, means, sds) = standardize(covariates, p)?;
    let d = Design {
        ln_y_fact: counts.iter().map(|&y| ln_factorial(y)).collect(),
        y: counts.to_vec(),
        x,
        p,
        inflation: opts.inflation,
    };
    let k = d.n_params();
    if d.n() < 10 * k {
        return Err(Error::Validation(format!(
            "{} observations is fewer than 10 per parameter ({k} parameters)",
            d.n()
        )));
    }
    let n = d.n() as f64;
    let nb = 1 + p;
    let ng = d.n_gamma();

    let mean_y = counts.iter().sum::<u64>() as f64 / n;
    let zero_frac = counts.iter().filter(|&&y| y == 0).count() as f64 / n;
    let mut params = vec![0.0; k];
    params[0] = mean_y.ln();
    if ng > 0 {
        let pi0 = (zero_frac / 2.0).clamp(0.01, 0.5);
        params[nb] = (pi0 / (1.0 - pi0)).ln();
    }

    let mut trace = vec![loglik_grad(&d, &params).0];
    let mut iterations = 0;
    let inner = BfgsOptions {
        max_iter: 25,
        grad_tol: opts.grad_tol * n,
    };
    for _ in 0..opts.em_iter.min(opts.max_iter) {
        iterations += 1;
        let z = e_step(&d, &params);
        // Count component: weighted negative binomial likelihood.
        let count_idx: Vec<usize> = (0..nb).chain([k - 1]).collect();
        let q_count = |sub: &[f64]| {
            let (mut v, mut g) = (0.0, vec![0.0; sub.len()]);
            for i in 0..d.n() {
                let w = 1.0 - z[i];
                if w == 0.0 {
                    continue;
                }
                let t = nb_terms(d.y[i], d.ln_y_fact[i], d.linear(&sub[..nb], i), sub[nb]);
                v -= w * t.ln_pmf;
                g[0] -= w * t.d_eta;
                for (j, xv) in d.row(i).iter().enumerate() {
                    g[1 + j] -= w * t.d_eta * xv;
                }
                g[nb] -= w * t.d_kappa;
            }
            (v, g)
        };
        let start: Vec<f64> = count_idx.iter().map(|&i| params[i]).collect();
        let r = minimize_bfgs(q_count, &start, inner);
        for (&i, v) in count_idx.iter().zip(&r.x) {
            params[i] = *v;
        }
        // Inflation component: logistic regression on fractional labels.
        if ng > 0 {
            let q_infl = |g: &[f64]| {
                let (mut v, mut grad) = (0.0, vec![0.0; g.len()]);
                for i in 0..d.n() {
                    let zt = if ng == 1 { g[0] } else { d.linear(g, i) };
                    v += z[i] * softplus(-zt) + (1.0 - z[i]) * softplus(zt);
                    let pi = 1.0 / (1.0 + (-zt).exp());
                    let r = pi - z[i];
                    grad[0] += r;
                    if ng > 1 {
                        for (j, xv) in d.row(i).iter().enumerate() {
                            grad[1 + j] += r * xv;
                        }
                    }
                }
                (v, grad)
            };
            let r = minimize_bfgs(q_infl, &params[nb..nb + ng], inner);
            params[nb..nb + ng].copy_from_slice(&r.x);
        }
        let ll = loglik_grad(&d, &params).0;
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if (ll - prev).abs() <= 1e-10 * prev.abs().max(1.0) {
            break;
        }
    }

    let polish = minimize_bfgs(
        |q| {
            let (ll, g) = loglik_grad(&d, q);
            (-ll / n, g.iter().map(|v| -v / n).collect())
        },
        &params,
        BfgsOptions {
            max_iter: opts.max_iter.saturating_sub(iterations),
            grad_tol: opts.grad_tol,
        },
    );
    iterations += polish.iterations;
    trace.extend(polish.trace.iter().skip(1).map(|v| -v * n));
    let params = polish.x;
    let (ll, _) = loglik_grad(&d, &params);

    // Covariance in standardized units, mapped to raw units for the count block.
    let info = observed_information(&d, &params);
    let cov = info.clone().cholesky().map(|c| c.inverse()).or_else(|| info.try_inverse());
    let mut se = vec![f64::NAN; nb];
    if let Some(cov) = &cov {
        let mut jac = DMatrix::<f64>::zeros(nb, nb);
        jac[(0, 0)] = 1.0;
        for j in 0..p {
            jac[(1 + j, 1 + j)] = 1.0 / sds[j];
            jac[(0, 1 + j)] = -means[j] / sds[j];
        }
        let block = cov.view((0, 0), (nb, nb)).into_owned();
        let raw = &jac * block * jac.transpose();
        for j in 0..nb {
            se[j] = raw[(j, j)].max(0.0).sqrt();
        }
    }
    let beta = unstandardize(&params[..nb], &means, &sds);
    let gamma = if d.inflation == Inflation::Covariates {
        unstandardize(&params[nb..nb + ng], &means, &sds)
    } else {
        params[nb..nb + ng].to_vec()
    };
    let size = params[k - 1].exp();
    let rate_ratio = (p > 0).then(|| {
        let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.5 + opts.ci_level / 2.0);
        let s = opts.rate_ratio_scale;
        RateRatio {
            estimate: (s * beta[1]).exp(),
            lo: (s * (beta[1] - z * se[1])).exp(),
            hi: (s * (beta[1] + z * se[1])).exp(),
            scale: s,
        }
    });
    Ok(ZinbFit {
        count_coefficients: beta,
        inflation_coefficients: gamma,
        size,
        dispersion: 1.0 / size,
        count_std_errors: se,
        rate_ratio,
        log_likelihood: ll,
        trace,
        iterations,
        converged: polish.converged && cov.is_some(),
    })
}
