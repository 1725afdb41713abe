//! Per-series statistics: slope, skewness, weighted average, median.
//!
//! Two evaluation paths cover different needs. [`series_statistic`] computes
//! plain numbers from a batch tensor — useful for reporting and as the
//! reference the differentiable path is tested against. [`stat_steps`]
//! builds the same statistic as graph ops over a step list so it can sit
//! inside a loss.

use crate::error::{Error, Result};
use crate::tensor::{c, Graph, Real, Tensor, Var};

/// Per-series variances at or below this are treated as zero when deciding
/// whether skewness is defined; guards float noise from exploding m₃/σ³.
const SKEW_VAR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatKind {
    Slope,
    Skewness,
    WeightedAvg,
    Median,
}

impl StatKind {
    pub const ALL: [StatKind; 4] = [
        StatKind::Slope,
        StatKind::Skewness,
        StatKind::WeightedAvg,
        StatKind::Median,
    ];
}

/// One statistic evaluated per sample per feature across time.
#[derive(Clone, Debug)]
pub struct BatchStat<F: Real> {
    pub kind: StatKind,
    /// (N × F) values.
    pub values: Tensor<F>,
}

/// Least-squares slope coefficients over the fixed grid t = 1..T:
/// slope = Σ_t a_t·x_t with a_t = (t − t̄) / Σ(t − t̄)².
fn slope_coeffs(t_len: usize) -> Vec<f64> {
    let t_bar = (t_len as f64 + 1.0) / 2.0;
    let den: f64 = (1..=t_len).map(|t| (t as f64 - t_bar).powi(2)).sum();
    (1..=t_len).map(|t| (t as f64 - t_bar) / den).collect()
}

/// Default weighted-average weights: w_t = t, a linear recency ramp.
fn default_weights(t_len: usize) -> Vec<f64> {
    (1..=t_len).map(|t| t as f64).collect()
}

fn check_t(t_len: usize) -> Result<()> {
    if t_len < 2 {
        return Err(Error::contract(format!(
            "series statistics need T >= 2, got T = {t_len}"
        )));
    }
    Ok(())
}

fn resolve_weights(t_len: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(default_weights(t_len)),
        Some(w) if w.len() == t_len => {
            let total: f64 = w.iter().sum();
            if total == 0.0 {
                return Err(Error::domain("weighted average weights sum to zero"));
            }
            Ok(w.to_vec())
        }
        Some(w) => Err(Error::shape(format!(
            "expected {t_len} weights, got {}",
            w.len()
        ))),
    }
}

/// Evaluate `kind` for every (sample, feature) series of an (N × T × F)
/// batch. Pure data-path computation, no graph involved.
pub fn series_statistic<F: Real>(
    kind: StatKind,
    batch: &Tensor<F>,
    weights: Option<&[f64]>,
) -> Result<BatchStat<F>> {
    let s = batch.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("expected (N,T,F) batch, got {s:?}")));
    }
    let (n, t_len, f_dim) = (s[0], s[1], s[2]);
    check_t(t_len)?;
    let data = batch.data();
    let series = |ni: usize, fi: usize| -> Vec<f64> {
        (0..t_len)
            .map(|ti| data[(ni * t_len + ti) * f_dim + fi].to_f64().unwrap())
            .collect()
    };
    let mut out = vec![F::zero(); n * f_dim];
    match kind {
        StatKind::Slope => {
            let a = slope_coeffs(t_len);
            for ni in 0..n {
                for fi in 0..f_dim {
                    let xs = series(ni, fi);
                    let v: f64 = xs.iter().zip(&a).map(|(x, c)| x * c).sum();
                    out[ni * f_dim + fi] = c(v);
                }
            }
        }
        StatKind::Skewness => {
            let inv_t = 1.0 / t_len as f64;
            for ni in 0..n {
                for fi in 0..f_dim {
                    let xs = series(ni, fi);
                    let mean: f64 = xs.iter().sum::<f64>() * inv_t;
                    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() * inv_t;
                    let v = if var <= SKEW_VAR_FLOOR {
                        0.0
                    } else {
                        let m3: f64 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() * inv_t;
                        m3 / var.powf(1.5)
                    };
                    out[ni * f_dim + fi] = c(v);
                }
            }
        }
        StatKind::WeightedAvg => {
            let w = resolve_weights(t_len, weights)?;
            let total: f64 = w.iter().sum();
            for ni in 0..n {
                for fi in 0..f_dim {
                    let xs = series(ni, fi);
                    let v: f64 = xs.iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>() / total;
                    out[ni * f_dim + fi] = c(v);
                }
            }
        }
        StatKind::Median => {
            for ni in 0..n {
                for fi in 0..f_dim {
                    let mut xs = series(ni, fi);
                    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let v = if t_len % 2 == 1 {
                        xs[t_len / 2]
                    } else {
                        0.5 * (xs[t_len / 2 - 1] + xs[t_len / 2])
                    };
                    out[ni * f_dim + fi] = c(v);
                }
            }
        }
    }
    Ok(BatchStat {
        kind,
        values: Tensor::new(vec![n, f_dim], out)?,
    })
}

/// Linear combination Σ_t coeff_t · steps[t] as graph ops.
fn lin_combo<F: Real>(g: &mut Graph<F>, steps: &[Var], coeffs: &[f64]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (&s, &a) in steps.iter().zip(coeffs) {
        let term = g.scale(s, c(a))?;
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term)?,
        });
    }
    acc.ok_or_else(|| Error::contract("statistic over an empty step list"))
}

/// Differentiable version of [`series_statistic`] over a step list
/// (T entries of shape N × F). Returns an (N × F) node.
pub fn stat_steps<F: Real>(
    g: &mut Graph<F>,
    kind: StatKind,
    steps: &[Var],
    weights: Option<&[f64]>,
) -> Result<Var> {
    let t_len = steps.len();
    check_t(t_len)?;
    match kind {
        StatKind::Slope => lin_combo(g, steps, &slope_coeffs(t_len)),
        StatKind::WeightedAvg => {
            let w = resolve_weights(t_len, weights)?;
            let total: f64 = w.iter().sum();
            let coeffs: Vec<f64> = w.iter().map(|wi| wi / total).collect();
            lin_combo(g, steps, &coeffs)
        }
        StatKind::Median => g.median_stack(steps),
        StatKind::Skewness => {
            let inv_t = 1.0 / t_len as f64;
            let mean = {
                let s = lin_combo(g, steps, &vec![1.0; t_len])?;
                g.scale(s, c(inv_t))?
            };
            let devs: Vec<Var> = steps
                .iter()
                .map(|&s| g.sub(s, mean))
                .collect::<Result<_>>()?;
            let sq: Vec<Var> = devs.iter().map(|&d| g.square(d)).collect::<Result<_>>()?;
            let var = {
                let s = lin_combo(g, &sq, &vec![1.0; t_len])?;
                g.scale(s, c(inv_t))?
            };
            let cubes: Vec<Var> = devs
                .iter()
                .zip(&sq)
                .map(|(&d, &s)| g.mul(s, d))
                .collect::<Result<_>>()?;
            let m3 = {
                let s = lin_combo(g, &cubes, &vec![1.0; t_len])?;
                g.scale(s, c(inv_t))?
            };
            // Series with (numerically) zero variance have skewness defined
            // as 0. The mask is a constant built from the values seen during
            // this pass, so no gradient flows through the decision itself.
            let floor = c::<F>(SKEW_VAR_FLOOR);
            let mask_data: Vec<F> = g
                .value(var)
                .data()
                .iter()
                .map(|&v| if v > floor { F::one() } else { F::zero() })
                .collect();
            let shape = g.value(var).shape().to_vec();
            let mask = g.constant(Tensor::new(shape.clone(), mask_data.clone())?)?;
            // denominator σ³ replaced by 1 wherever masked out
            let guard_data: Vec<F> = mask_data
                .iter()
                .map(|&m| if m == F::one() { F::zero() } else { F::one() })
                .collect();
            let guard = g.constant(Tensor::new(shape, guard_data)?)?;
            let sigma3 = {
                let sd = g.sqrt(var)?;
                g.mul(var, sd)?
            };
            let denom = g.add(sigma3, guard)?;
            let raw = g.div(m3, denom)?;
            g.mul(raw, mask)
        }
    }
}
