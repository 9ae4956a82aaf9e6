use serde::{Deserialize, Serialize};

use super::layer::{DenseLayer, LayerId, ParamStore};
use super::tape::Gradients;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!(
                "adam eps must be > 0, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for every layer in a store.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    m: Vec<DenseLayer<S>>,
    v: Vec<DenseLayer<S>>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamStore<S>, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of the listed layers; other layers are left untouched.
    pub fn step(
        &mut self,
        params: &mut ParamStore<S>,
        grads: &Gradients<S>,
        layers: &[LayerId],
    ) -> Result<()> {
        if self.m.len() != params.len() || grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "adam state tracks {} layers, params have {}, gradients {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for &id in layers {
            let p = params.layer(id);
            let m = &self.m[id.0];
            if (p.in_dim(), p.out_dim()) != (m.in_dim(), m.out_dim()) {
                return Err(Error::Dimension(format!(
                    "layer {} changed shape since adam state was created",
                    params.name(id)
                )));
            }
        }
        self.t += 1;
        let cfg = self.config;
        let b1 = S::lit(cfg.beta1);
        let b2 = S::lit(cfg.beta2);
        let one = S::one();
        let c1 = one - S::lit(cfg.beta1.powi(self.t as i32));
        let c2 = one - S::lit(cfg.beta2.powi(self.t as i32));
        let alpha = S::lit(cfg.alpha);
        let eps = S::lit(cfg.eps);
        for &id in layers {
            let count = params.layer(id).param_count();
            let g = grads.get(id);
            let layer = params.layer_mut(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            for k in 0..count {
                let gk = g.map(|g| g.get_flat(k)).unwrap_or_else(S::zero);
                let mk = m.flat_mut(k);
                *mk = b1 * *mk + (one - b1) * gk;
                let vk = v.flat_mut(k);
                *vk = b2 * *vk + (one - b2) * gk * gk;
                let m_hat = *m.flat_mut(k) / c1;
                let v_hat = *v.flat_mut(k) / c2;
                *layer.flat_mut(k) -= alpha * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
