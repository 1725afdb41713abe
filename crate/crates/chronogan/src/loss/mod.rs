//! Training objectives and their weighted compositions.

mod objectives;
mod stats;

pub use objectives::{
    adversarial_losses, generator_adversarial_loss, moment_loss, reconstruction_loss,
    supervised_loss, ts_contributions, ts_loss,
};
pub use stats::{series_statistic, stat_steps, BatchStat, StatKind};

use crate::error::{Error, Result};
use crate::tensor::{c, Graph, Real, Var};
use serde::{Deserialize, Serialize};

fn d_w_r_phase1() -> f64 {
    10.0
}
fn d_one() -> f64 {
    1.0
}

/// Loss weights across all phases. The reconstruction-to-adversarial
/// proportion must strictly decrease from the warm-up phase to the joint
/// phase; with defaults it drops from 10:1 to 1:1.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_r_phase1: f64,
    pub w_r_phase3: f64,
    pub w_u_ae_phase1: f64,
    pub w_u_ae_phase3: f64,
    pub w_u_g: f64,
    pub w_s: f64,
    pub w_v: f64,
    pub w_ts: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_r_phase1: d_w_r_phase1(),
            w_r_phase3: d_one(),
            w_u_ae_phase1: d_one(),
            w_u_ae_phase3: d_one(),
            w_u_g: d_one(),
            w_s: d_one(),
            w_v: d_one(),
            w_ts: d_one(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_r_phase1,
            self.w_r_phase3,
            self.w_u_ae_phase1,
            self.w_u_ae_phase3,
            self.w_u_g,
            self.w_s,
            self.w_v,
            self.w_ts,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::contract("loss weights must be finite and >= 0"));
        }
        // strict decrease of w_R : w_U_ae, compared cross-multiplied so a
        // zero adversarial weight cannot divide
        if self.w_r_phase1 * self.w_u_ae_phase3 <= self.w_r_phase3 * self.w_u_ae_phase1 {
            return Err(Error::contract(
                "reconstruction-to-adversarial proportion must strictly decrease from phase 1 to phase 3",
            ));
        }
        Ok(())
    }
}

/// Autoencoder objective for the warm-up (phase 1) or joint (phase 3)
/// stage: w_R·L_R + w_U_ae·L_U with phase-specific weights.
pub fn compose_autoencoder_loss<F: Real>(
    g: &mut Graph<F>,
    weights: &LossWeights,
    recon: Var,
    adv_ae: Var,
    phase: u8,
) -> Result<Var> {
    let (w_r, w_u) = match phase {
        1 => (weights.w_r_phase1, weights.w_u_ae_phase1),
        3 => (weights.w_r_phase3, weights.w_u_ae_phase3),
        p => {
            return Err(Error::contract(format!(
                "autoencoder loss exists only in phases 1 and 3, got {p}"
            )))
        }
    };
    let a = g.scale(recon, c(w_r))?;
    let b = g.scale(adv_ae, c(w_u))?;
    g.add(a, b)
}

/// Joint generator/supervisor objective:
/// w_U_g·L_U + w_S·L_S + w_V·L_V + w_TS·L_TS.
pub fn compose_generator_loss<F: Real>(
    g: &mut Graph<F>,
    weights: &LossWeights,
    adv_g: Var,
    sup: Var,
    moment: Var,
    ts: Var,
) -> Result<Var> {
    for v in [adv_g, sup, moment, ts] {
        if !g.scalar_value(v)?.is_finite() {
            return Err(Error::domain("non-finite loss component"));
        }
    }
    let a = g.scale(adv_g, c(weights.w_u_g))?;
    let b = g.scale(sup, c(weights.w_s))?;
    let v = g.scale(moment, c(weights.w_v))?;
    let t = g.scale(ts, c(weights.w_ts))?;
    let ab = g.add(a, b)?;
    let abv = g.add(ab, v)?;
    g.add(abv, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(g: &mut Graph<f64>, v: f64) -> Var {
        g.constant_scalar(v).unwrap()
    }

    #[test]
    fn default_weights_valid_and_decreasing() {
        let w = LossWeights::default();
        w.validate().unwrap();
        assert_eq!(w.w_r_phase1, 10.0);
        assert_eq!(w.w_r_phase3, 1.0);
    }

    #[test]
    fn non_decreasing_proportion_rejected() {
        let w = LossWeights {
            w_r_phase1: 1.0,
            w_r_phase3: 1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
        let neg = LossWeights {
            w_s: -0.5,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn autoencoder_composition_by_phase() {
        let w = LossWeights::default();
        let mut g = Graph::<f64>::new();
        let recon = scalar(&mut g, 0.2);
        let adv = scalar(&mut g, 1.0);
        let p1 = compose_autoencoder_loss(&mut g, &w, recon, adv, 1).unwrap();
        assert!((g.scalar_value(p1).unwrap() - 3.0).abs() < 1e-12);
        let p3 = compose_autoencoder_loss(&mut g, &w, recon, adv, 3).unwrap();
        assert!((g.scalar_value(p3).unwrap() - 1.2).abs() < 1e-12);
        assert!(compose_autoencoder_loss(&mut g, &w, recon, adv, 2).is_err());
    }

    #[test]
    fn generator_composition_sums() {
        let w = LossWeights::default();
        let mut g = Graph::<f64>::new();
        let parts: Vec<Var> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| scalar(&mut g, v)).collect();
        let l = compose_generator_loss(&mut g, &w, parts[0], parts[1], parts[2], parts[3]).unwrap();
        assert!((g.scalar_value(l).unwrap() - 10.0).abs() < 1e-12);

        let custom = LossWeights {
            w_s: 100.0,
            ..Default::default()
        };
        let z = scalar(&mut g, 0.0);
        let s = scalar(&mut g, 0.01);
        let l2 = compose_generator_loss(&mut g, &custom, z, s, z, z).unwrap();
        assert!((g.scalar_value(l2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_components_give_zero() {
        let w = LossWeights::default();
        let mut g = Graph::<f64>::new();
        let z = scalar(&mut g, 0.0);
        let ae = compose_autoencoder_loss(&mut g, &w, z, z, 1).unwrap();
        assert_eq!(g.scalar_value(ae).unwrap(), 0.0);
        let gen = compose_generator_loss(&mut g, &w, z, z, z, z).unwrap();
        assert_eq!(g.scalar_value(gen).unwrap(), 0.0);
    }
}
