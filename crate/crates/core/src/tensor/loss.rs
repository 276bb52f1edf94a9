use serde::{Deserialize, Serialize};

/// Per-sample regression losses on the residual `e = pred - target`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    /// `e^2`
    Mse,
    /// `|e|^3`
    Mce,
    /// `e^4`
    Mqe,
    /// Tukey's biweight with tuning constant `c`.
    Tukey { c: f64 },
    /// `sqrt(e^2) = |e|` for a single sample.
    Rmse,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Mse
    }
}

impl LossKind {
    pub const TUKEY_DEFAULT_C: f64 = 4.685;

    pub fn tukey() -> Self {
        LossKind::Tukey {
            c: Self::TUKEY_DEFAULT_C,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "MSE",
            LossKind::Mce => "MCE",
            LossKind::Mqe => "MQE",
            LossKind::Tukey { .. } => "Tukey",
            LossKind::Rmse => "RMSE",
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        match self {
            LossKind::Tukey { c } if !(c.is_finite() && *c > 0.0) => {
                Err(crate::Error::Config(format!("Tukey constant must be > 0, got {c}")))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, pred: f64, target: f64) -> f64 {
        let e = pred - target;
        match *self {
            LossKind::Mse => e * e,
            LossKind::Mce => e.abs().powi(3),
            LossKind::Mqe => e.powi(4),
            LossKind::Rmse => (e * e).sqrt(),
            LossKind::Tukey { c } => {
                let sat = c * c / 6.0;
                if e.abs() <= c {
                    let u = 1.0 - (e / c).powi(2);
                    sat * (1.0 - u * u * u)
                } else {
                    sat
                }
            }
        }
    }

    /// Derivative with respect to `pred`.
    pub fn derivative(&self, pred: f64, target: f64) -> f64 {
        let e = pred - target;
        match *self {
            LossKind::Mse => 2.0 * e,
            LossKind::Mce => 3.0 * e * e.abs(),
            LossKind::Mqe => 4.0 * e.powi(3),
            LossKind::Rmse => {
                if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Tukey { c } => {
                if e.abs() <= c {
                    let u = 1.0 - (e / c).powi(2);
                    e * u * u
                } else {
                    0.0
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [LossKind; 5] = [
        LossKind::Mse,
        LossKind::Mce,
        LossKind::Mqe,
        LossKind::Tukey { c: 4.685 },
        LossKind::Rmse,
    ];

    #[test]
    fn mse_example() {
        assert_eq!(LossKind::Mse.value(3.0, 5.0), 4.0);
    }

    #[test]
    fn zero_residual_is_zero() {
        for k in ALL {
            assert_eq!(k.value(2.5, 2.5), 0.0, "{k:?}");
        }
    }

    #[test]
    fn tukey_saturates() {
        let c: f64 = 4.685;
        let want = c * c / 6.0;
        assert!((want - 3.658).abs() < 1e-3);
        assert!((LossKind::tukey().value(10.0, 0.0) - want).abs() < 1e-12);
        // Continuous at the knee.
        assert!((LossKind::tukey().value(c, 0.0) - want).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for k in ALL {
            for &p in &[-3.3, -0.7, 0.4, 2.9, 7.5] {
                let h = 1e-6;
                let fd = (k.value(p + h, 0.1) - k.value(p - h, 0.1)) / (2.0 * h);
                let an = k.derivative(p, 0.1);
                assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "{k:?} at {p}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let s = serde_json::to_string(&LossKind::tukey()).unwrap();
        assert_eq!(serde_json::from_str::<LossKind>(&s).unwrap(), LossKind::tukey());
        assert!(LossKind::Tukey { c: -1.0 }.validate().is_err());
    }
}
