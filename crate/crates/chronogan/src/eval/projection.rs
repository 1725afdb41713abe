//! 2-D projections for eyeballing distribution overlap: PCA fit on the
//! real side, and an exact (all-pairs) t-SNE. Sequences are flattened to
//! per-feature time averages before projection.

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::seed::stream;
use crate::tensor::Real;
use nalgebra::DMatrix;
use rand::Rng;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointLabel {
    Real,
    Synthetic,
}

impl PointLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PointLabel::Real => "real",
            PointLabel::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Debug)]
pub enum ProjectionMeta {
    Pca {
        /// Fraction of total real-side variance captured by each component.
        explained: [f64; 2],
    },
    Tsne {
        perplexity: f64,
        iterations: usize,
        kl: f64,
    },
}

/// A labelled 2-D point cloud ready for plotting.
#[derive(Clone, Debug)]
pub struct Projection2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<PointLabel>,
    pub meta: ProjectionMeta,
}

impl Projection2D {
    pub fn method(&self) -> &'static str {
        match self.meta {
            ProjectionMeta::Pca { .. } => "pca",
            ProjectionMeta::Tsne { .. } => "tsne",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.labels.len() {
            return Err(Error::contract("one label per projected point"));
        }
        for want in [PointLabel::Real, PointLabel::Synthetic] {
            if !self.labels.contains(&want) {
                return Err(Error::contract(format!(
                    "projection must cover both sides; {} points absent",
                    want.as_str()
                )));
            }
        }
        Ok(())
    }
}

/// Write the cloud as `method,component1,component2,label` rows.
pub fn write_projection_csv(proj: &Projection2D, path: impl AsRef<Path>) -> Result<()> {
    proj.validate()?;
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["method", "component1", "component2", "label"])?;
    let method = proj.method();
    for (p, l) in proj.points.iter().zip(&proj.labels) {
        w.write_record([method, &format!("{}", p[0]), &format!("{}", p[1]), l.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

// ── flattening and subsampling ──────────────────────────────────────────

/// Collapse (N × T × F) to N rows of per-feature time averages.
fn flatten_avg<F: Real>(b: &SequenceBatch<F>) -> Vec<Vec<f64>> {
    let (n, t, f) = (b.n(), b.t(), b.f());
    let data = b.values.data();
    (0..n)
        .map(|ni| {
            let mut row = vec![0.0f64; f];
            for ti in 0..t {
                let base = (ni * t + ti) * f;
                for (fi, slot) in row.iter_mut().enumerate() {
                    *slot += data[base + fi].to_f64().unwrap_or(f64::NAN);
                }
            }
            row.iter_mut().for_each(|v| *v /= t as f64);
            row
        })
        .collect()
}

/// Pick at most `cap` row indices, seeded only by (n, cap) so two sides of
/// equal size get identical picks. Returned sorted to preserve input order.
fn subsample(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = stream(7, "proj-subsample");
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..cap {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(cap);
    idx.sort_unstable();
    idx
}

fn take_rows(rows: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| rows[i].clone()).collect()
}

fn check_sides<F: Real>(real: &SequenceBatch<F>, synth: &SequenceBatch<F>) -> Result<()> {
    real.validate()?;
    synth.validate()?;
    if real.f() != synth.f() {
        return Err(Error::shape(format!(
            "feature dims differ: real {} vs synthetic {}",
            real.f(),
            synth.f()
        )));
    }
    if real.n() < 3 || synth.n() < 3 {
        return Err(Error::contract("projections need at least 3 samples per side"));
    }
    Ok(())
}

// ── PCA ─────────────────────────────────────────────────────────────────

/// Project both sides onto the top two principal components of the real
/// side (covariance eigendecomposition, real-side mean as origin). Each
/// side is capped at `sample_cap` points by seeded subsampling.
pub fn pca_project<F: Real>(
    real: &SequenceBatch<F>,
    synth: &SequenceBatch<F>,
    sample_cap: usize,
) -> Result<Projection2D> {
    check_sides(real, synth)?;
    if sample_cap < 3 {
        return Err(Error::contract("sample cap must be at least 3"));
    }
    let f = real.f();
    if f < 2 {
        return Err(Error::Degenerate(
            "need at least 2 features for a 2-component projection".into(),
        ));
    }
    let r_rows = {
        let all = flatten_avg(real);
        take_rows(&all, &subsample(all.len(), sample_cap))
    };
    let s_rows = {
        let all = flatten_avg(synth);
        take_rows(&all, &subsample(all.len(), sample_cap))
    };
    // real-side mean and covariance
    let nr = r_rows.len() as f64;
    let mut mean = vec![0.0f64; f];
    for row in &r_rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nr);
    let mut cov = vec![0.0f64; f * f];
    for row in &r_rows {
        for a in 0..f {
            let da = row[a] - mean[a];
            for b in a..f {
                cov[a * f + b] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..f {
        for b in a..f {
            let v = cov[a * f + b] / nr;
            cov[a * f + b] = v;
            cov[b * f + a] = v;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(DMatrix::from_row_slice(f, f, &cov));
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("covariance eigenvalues are finite")
    });
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    if lambda[0] <= 1e-15 || lambda[1] <= 1e-9 * lambda[0] {
        return Err(Error::Degenerate(
            "flattened data has rank < 2; nothing to project onto".into(),
        ));
    }
    // deterministic sign: largest-magnitude entry of each axis positive
    let axis = |k: usize| -> Vec<f64> {
        let col = eig.eigenvectors.column(order[k]);
        let mut v: Vec<f64> = col.iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let (v1, v2) = (axis(0), axis(1));
    let total: f64 = lambda.iter().sum();
    let explained = [lambda[0] / total, lambda[1] / total];
    let project = |rows: &[Vec<f64>]| -> Vec<[f64; 2]> {
        rows.iter()
            .map(|row| {
                let mut p = [0.0f64; 2];
                for (i, (&x, m)) in row.iter().zip(&mean).enumerate() {
                    let d = x - m;
                    p[0] += d * v1[i];
                    p[1] += d * v2[i];
                }
                p
            })
            .collect()
    };
    let mut points = project(&r_rows);
    let split = points.len();
    points.extend(project(&s_rows));
    let labels = label_run(split, points.len());
    Ok(Projection2D {
        points,
        labels,
        meta: ProjectionMeta::Pca { explained },
    })
}

fn label_run(real_count: usize, total: usize) -> Vec<PointLabel> {
    (0..total)
        .map(|i| {
            if i < real_count {
                PointLabel::Real
            } else {
                PointLabel::Synthetic
            }
        })
        .collect()
}

// ── t-SNE ───────────────────────────────────────────────────────────────

const EXAGGERATION: f64 = 4.0;
const EXAGGERATION_ITERS: usize = 50;
/// Momentum switch point: the classic iteration 250 scaled from the usual
/// 1000-iteration schedule down to our 300.
const MOMENTUM_SWITCH: usize = 75;
const LEARNING_RATE: f64 = 200.0;
const P_FLOOR: f64 = 1e-12;

/// Exact t-SNE on the combined time-averaged vectors. Like
/// [`tsne_project`] but also returns the KL divergence after every
/// position update (index 0 is the initial state), for convergence
/// diagnostics.
pub fn tsne_project_with_trace<F: Real>(
    real: &SequenceBatch<F>,
    synth: &SequenceBatch<F>,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<(Projection2D, Vec<f64>)> {
    check_sides(real, synth)?;
    if !(perplexity >= 1.0 && perplexity.is_finite()) {
        return Err(Error::contract("perplexity must be a finite value >= 1"));
    }
    if iterations == 0 {
        return Err(Error::contract("t-SNE needs at least one iteration"));
    }
    let mut x = flatten_avg(real);
    let split = x.len();
    x.extend(flatten_avg(synth));
    let m = x.len();
    if (m as f64) < 3.0 * perplexity {
        return Err(Error::contract(format!(
            "perplexity {perplexity} too large for {m} combined samples (need >= 3x)"
        )));
    }
    let d2 = pairwise_sq(&x);
    let p = joint_affinities(&d2, m, perplexity);

    // small gaussian initial layout
    let mut rng = stream(seed, "tsne-init");
    let mut gauss = || -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let mut y: Vec<[f64; 2]> = (0..m).map(|_| [gauss() * 1e-2, gauss() * 1e-2]).collect();
    let mut vel = vec![[0.0f64; 2]; m];
    let mut w = vec![0.0f64; m * m];
    let mut trace = Vec::with_capacity(iterations + 1);
    trace.push(kl_divergence(&p, &mut w, &y));
    for it in 0..iterations {
        let exag = if it < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let momentum = if it < MOMENTUM_SWITCH { 0.5 } else { 0.8 };
        if it == EXAGGERATION_ITERS {
            // drop momentum built against the exaggerated objective, so the
            // plain-objective descent starts clean instead of overshooting
            vel.iter_mut().for_each(|v| *v = [0.0, 0.0]);
        }
        // student-t kernel weights at the current layout
        let mut w_sum = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    w[i * m + j] = 0.0;
                    continue;
                }
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                w[i * m + j] = v;
                w_sum += v;
            }
        }
        for i in 0..m {
            let mut grad = [0.0f64; 2];
            for j in 0..m {
                if i == j {
                    continue;
                }
                let wij = w[i * m + j];
                let qij = (wij / w_sum).max(P_FLOOR);
                let coeff = 4.0 * (exag * p[i * m + j] - qij) * wij;
                grad[0] += coeff * (y[i][0] - y[j][0]);
                grad[1] += coeff * (y[i][1] - y[j][1]);
            }
            vel[i][0] = momentum * vel[i][0] - LEARNING_RATE * grad[0];
            vel[i][1] = momentum * vel[i][1] - LEARNING_RATE * grad[1];
        }
        let mut mean = [0.0f64; 2];
        for (yi, vi) in y.iter_mut().zip(&vel) {
            yi[0] += vi[0];
            yi[1] += vi[1];
            mean[0] += yi[0];
            mean[1] += yi[1];
        }
        mean[0] /= m as f64;
        mean[1] /= m as f64;
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
        trace.push(kl_divergence(&p, &mut w, &y));
    }
    let kl = *trace.last().expect("trace never empty");
    if !kl.is_finite() {
        return Err(Error::domain("t-SNE diverged to a non-finite KL"));
    }
    let labels = label_run(split, m);
    Ok((
        Projection2D {
            points: y,
            labels,
            meta: ProjectionMeta::Tsne {
                perplexity,
                iterations,
                kl,
            },
        },
        trace,
    ))
}

/// Exact t-SNE embedding of both sides; see [`tsne_project_with_trace`].
pub fn tsne_project<F: Real>(
    real: &SequenceBatch<F>,
    synth: &SequenceBatch<F>,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<Projection2D> {
    tsne_project_with_trace(real, synth, perplexity, iterations, seed).map(|(p, _)| p)
}

fn pairwise_sq(x: &[Vec<f64>]) -> Vec<f64> {
    let m = x.len();
    let mut d2 = vec![0.0f64; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let s: f64 = x[i]
                .iter()
                .zip(&x[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2[i * m + j] = s;
            d2[j * m + i] = s;
        }
    }
    d2
}

/// Per-point bandwidth search to hit the target perplexity, then
/// symmetrized joint probabilities (floored at 1e-12).
fn joint_affinities(d2: &[f64], m: usize, perplexity: f64) -> Vec<f64> {
    let target_h = perplexity.ln();
    let mut cond = vec![0.0f64; m * m];
    let mut row_p = vec![0.0f64; m];
    for i in 0..m {
        // shift by the row minimum so exp never underflows wholesale
        let d_min = (0..m)
            .filter(|&j| j != i)
            .map(|j| d2[i * m + j])
            .fold(f64::INFINITY, f64::min);
        let mut beta = 1.0f64;
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for _ in 0..50 {
            let mut sum = 0.0f64;
            let mut weighted = 0.0f64;
            for j in 0..m {
                if j == i {
                    row_p[j] = 0.0;
                    continue;
                }
                let e = (-(d2[i * m + j] - d_min) * beta).exp();
                row_p[j] = e;
                sum += e;
                weighted += (d2[i * m + j] - d_min) * e;
            }
            let h = sum.ln() + beta * weighted / sum;
            let diff = h - target_h;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                // entropy too high: sharpen
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let sum: f64 = row_p.iter().sum();
        for j in 0..m {
            cond[i * m + j] = if sum > 0.0 { row_p[j] / sum } else { 0.0 };
        }
    }
    let mut p = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            p[i * m + j] = ((cond[i * m + j] + cond[j * m + i]) / (2.0 * m as f64)).max(P_FLOOR);
        }
    }
    p
}

/// KL(P ‖ Q) at layout `y`; `w` is scratch space for the kernel weights.
fn kl_divergence(p: &[f64], w: &mut [f64], y: &[[f64; 2]]) -> f64 {
    let m = y.len();
    let mut w_sum = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                w[i * m + j] = 0.0;
                continue;
            }
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w[i * m + j] = v;
            w_sum += v;
        }
    }
    let mut kl = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let pij = p[i * m + j];
            let qij = (w[i * m + j] / w_sum).max(P_FLOOR);
            kl += pij * (pij / qij).ln();
        }
    }
    kl
}
