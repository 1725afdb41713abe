//! Adam optimizer with per-parameter moment state.

use super::{c, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Moment buffers are allocated lazily on the first step and must stay
/// aligned with the same parameter list thereafter.
pub struct Adam<F: Real> {
    cfg: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One in-place update. `params[i]` pairs with `grads[i]`.
    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        let mut refs: Vec<&mut Tensor<F>> = params.iter_mut().collect();
        self.step_refs(&mut refs, grads)
    }

    /// Same update through references, for parameters scattered across
    /// model structs rather than held in one slice.
    pub fn step_refs(&mut self, params: &mut [&mut Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(format!(
                "adam: {} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        if self.t == 0 {
            self.m = params.iter().map(|p| vec![F::zero(); p.size()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(Error::contract(format!(
                "adam: state tracks {} params, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((p, g), i) in params.iter().zip(grads).zip(0..) {
            if p.shape() != g.shape() {
                return Err(Error::contract(format!(
                    "adam: param {i} shape {:?} vs grad shape {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if self.m[i].len() != p.size() {
                return Err(Error::contract(format!(
                    "adam: param {i} size changed since state init"
                )));
            }
        }
        self.t += 1;
        let b1 = c::<F>(self.cfg.beta1);
        let b2 = c::<F>(self.cfg.beta2);
        let one_m_b1 = F::one() - b1;
        let one_m_b2 = F::one() - b2;
        // bias corrections computed in f64 to avoid powi drift at large t
        let bc1 = c::<F>(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2 = c::<F>(1.0 - self.cfg.beta2.powi(self.t as i32));
        let lr = c::<F>(self.cfg.lr);
        let eps = c::<F>(self.cfg.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (&gj, pj)) in g.data().iter().zip(p.data_mut()).enumerate() {
                m[j] = b1 * m[j] + one_m_b1 * gj;
                v[j] = b2 * v[j] + one_m_b2 * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *pj = *pj - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
