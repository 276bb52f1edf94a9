use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Adadelta optimizer state, one pair of running averages per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdadeltaState<T: Real = f32> {
    rho: T,
    eps: T,
    acc_grad: Vec<Vec<T>>,
    acc_delta: Vec<Vec<T>>,
}

impl<T: Real> AdadeltaState<T> {
    pub const DEFAULT_RHO: f64 = 0.95;
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn new(param_lens: &[usize]) -> Self {
        Self::with_hyper(param_lens, Self::DEFAULT_RHO, Self::DEFAULT_EPS).expect("default hyper-parameters")
    }

    pub fn with_hyper(param_lens: &[usize], rho: f64, eps: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("epsilon must be > 0, got {eps}")));
        }
        Ok(Self {
            rho: T::from_f64(rho),
            eps: T::from_f64(eps),
            acc_grad: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            acc_delta: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho.to_f64()
    }

    pub fn eps(&self) -> f64 {
        self.eps.to_f64()
    }

    /// Applies one update in place. `grads[i]` must match `params[i]`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != self.acc_grad.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.acc_grad.len(),
                params.len(),
                grads.len()
            )));
        }
        let (rho, eps) = (self.rho, self.eps);
        let one_m = T::one() - rho;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.acc_grad[i].len() {
                return Err(Error::Shape(format!("parameter {i}: length mismatch")));
            }
            let eg = &mut self.acc_grad[i];
            let ed = &mut self.acc_delta[i];
            for (((x, &gi), a), b) in p.data_mut().iter_mut().zip(g.data()).zip(eg.iter_mut()).zip(ed.iter_mut()) {
                *a = rho * *a + one_m * gi * gi;
                let dx = -((*b + eps).sqrt() / (*a + eps).sqrt()) * gi;
                *b = rho * *b + one_m * dx * dx;
                *x = *x + dx;
            }
        }
        Ok(())
    }
}
