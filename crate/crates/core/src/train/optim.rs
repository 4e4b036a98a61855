use crate::error::{contract_err, Error, Result};
use crate::params::ParamStore;
use crate::tensor::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;
pub const WEIGHT_DECAY: f64 = 0.01;

/// Adam with decoupled weight decay. Moments are kept in `f64` whatever
/// the parameter precision.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Scalar>(params: &ParamStore<T>) -> Self {
        Self::with_betas(params, BETA1, BETA2, EPS)
    }

    pub fn with_betas<T: Scalar>(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the gradients in the parameters' grad slots
    /// (absent slots count as zero):
    ///
    /// ```text
    /// p ← p·(1 − lr·wd)
    /// m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²
    /// p ← p − lr · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)
    /// ```
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut ParamStore<T>,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(contract_err!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                params.len()
            ));
        }
        // validate everything before touching any state
        for (name, t) in params.iter() {
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGrad(name.to_string()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let decay = 1.0 - lr * weight_decay;
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let grad: Option<Vec<f64>> = p
                .grad()
                .map(|g| g.iter().map(|v| v.to_f64_lossless()).collect());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad.as_ref().map_or(0.0, |g| g[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let upd = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                *w = T::of(w.to_f64_lossless() * decay - upd);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<T: Scalar>(params: &ParamStore<T>) -> f64 {
    params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter().map(|v| v.to_f64_lossless().powi(2)))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(params: &mut ParamStore<T>, max_norm: f64) -> Result<f64> {
    let norm = grad_norm(params);
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for (_, t) in params.iter_mut() {
            if let Some(g) = t.grad() {
                let scaled = g.iter().map(|&v| v * s).collect();
                t.set_grad(scaled)?;
            }
        }
    }
    Ok(norm)
}
