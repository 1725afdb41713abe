//! Synthetic-data quality metrics: a discriminative score (can a probe
//! classifier tell real from synthetic?), a predictive score
//! (train-on-synthetic / test-on-real forecasting error), batch-moment
//! gaps, replication reporting, and 2-D projections.

mod projection;
mod scorenet;

pub use projection::{
    pca_project, tsne_project, tsne_project_with_trace, write_projection_csv, PointLabel,
    Projection2D, ProjectionMeta,
};
pub use scorenet::{discriminative_score, predictive_score, EvalConfig};

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::tensor::Real;
use std::fmt;

// ── replication reporting ───────────────────────────────────────────────

/// A metric replicated over several seeds, reported as mean ± population
/// standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ScoreReport {
    pub fn from_values(metric: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("a score report needs at least one value"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("score report holds a non-finite value"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(ScoreReport {
            metric: metric.into(),
            values,
            mean,
            std: var.sqrt(),
        })
    }

    pub fn replications(&self) -> usize {
        self.values.len()
    }

    /// Confirm mean/std still match the stored values (guards manual edits).
    pub fn validate(&self) -> Result<()> {
        let recomputed = ScoreReport::from_values(self.metric.clone(), self.values.clone())?;
        if (recomputed.mean - self.mean).abs() > 1e-12 || (recomputed.std - self.std).abs() > 1e-12
        {
            return Err(Error::contract(format!(
                "report '{}' is inconsistent with its stored values",
                self.metric
            )));
        }
        Ok(())
    }

    /// Multi-line block for the evaluation report file.
    pub fn render_block(&self) -> String {
        let values = self
            .values
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "[{}]\nmean = {}\nstd = {}\nvalues = {}\n",
            self.metric, self.mean, self.std, values
        )
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:.3} ± {:.2}", self.metric, self.mean, self.std)
    }
}

/// Join several report blocks into one evaluation report document.
pub fn render_reports(reports: &[ScoreReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        out.push_str(&format!("replications = {}\n\n", first.replications()));
    }
    for r in reports {
        out.push_str(&r.render_block());
        out.push('\n');
    }
    out
}

/// Run `metric_fn` once per seed (seeds must be distinct) and aggregate.
/// Replications run on worker threads; results keep seed order.
pub fn replicate(
    metric: &str,
    seeds: &[u64],
    metric_fn: impl Fn(u64) -> Result<f64> + Send + Sync,
) -> Result<ScoreReport> {
    if seeds.is_empty() {
        return Err(Error::contract("replicate needs at least one seed"));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(Error::contract("replication seeds must be distinct"));
    }
    let results: Vec<Result<f64>> = std::thread::scope(|scope| {
        let f = &metric_fn;
        let handles: Vec<_> = seeds
            .iter()
            .map(|&s| scope.spawn(move || f(s)))
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join() {
                Ok(r) => r,
                Err(_) => Err(Error::contract("replication thread panicked")),
            })
            .collect()
    });
    let mut values = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        values.push(r.map_err(|e| tag_replication(e, i))?);
    }
    ScoreReport::from_values(metric, values)
}

fn tag_replication(e: Error, index: usize) -> Error {
    let tag = |msg: String| format!("replication {index}: {msg}");
    match e {
        Error::Shape(m) => Error::Shape(tag(m)),
        Error::Domain(m) => Error::Domain(tag(m)),
        Error::Contract(m) => Error::Contract(tag(m)),
        Error::Format(m) => Error::Format(tag(m)),
        Error::Degenerate(m) => Error::Degenerate(tag(m)),
        Error::Config(m) => Error::Config(tag(m)),
        Error::Parse { row, col, msg } => Error::Parse {
            row,
            col,
            msg: tag(msg),
        },
        Error::TrainingDiverged { epoch, reason } => Error::TrainingDiverged {
            epoch,
            reason: tag(reason),
        },
        Error::Io(io) => Error::Format(tag(format!("io: {io}"))),
    }
}

// ── batch-moment gaps ───────────────────────────────────────────────────

/// How far apart the per-(timestep, feature) batch moments of two sets sit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentGap {
    /// Mean squared difference of batch means.
    pub mse_mean: f64,
    /// Square root of the mean squared difference of population variances.
    pub mse_std: f64,
    /// Mean absolute difference of batch means (a plain-units gap).
    pub mean_abs_gap: f64,
}

/// Compare per-(t, f) batch means and population variances between two
/// sets. Sample counts may differ; T and F must match.
pub fn moment_gap<F: Real>(real: &SequenceBatch<F>, synth: &SequenceBatch<F>) -> Result<MomentGap> {
    real.validate()?;
    synth.validate()?;
    if real.t() != synth.t() || real.f() != synth.f() {
        return Err(Error::shape(format!(
            "moment gap needs matching (T, F): real ({}, {}) vs synthetic ({}, {})",
            real.t(),
            real.f(),
            synth.t(),
            synth.f()
        )));
    }
    let (rm, rv) = per_tf_moments(real);
    let (sm, sv) = per_tf_moments(synth);
    let cells = rm.len() as f64;
    let mut sq_mean = 0.0f64;
    let mut sq_var = 0.0f64;
    let mut abs_mean = 0.0f64;
    for k in 0..rm.len() {
        let dm = rm[k] - sm[k];
        let dv = rv[k] - sv[k];
        sq_mean += dm * dm;
        sq_var += dv * dv;
        abs_mean += dm.abs();
    }
    Ok(MomentGap {
        mse_mean: sq_mean / cells,
        mse_std: (sq_var / cells).sqrt(),
        mean_abs_gap: abs_mean / cells,
    })
}

/// Batch mean and population variance per (timestep, feature) cell.
fn per_tf_moments<F: Real>(b: &SequenceBatch<F>) -> (Vec<f64>, Vec<f64>) {
    let (n, t, f) = (b.n(), b.t(), b.f());
    let data = b.values.data();
    let cells = t * f;
    let mut mean = vec![0.0f64; cells];
    let mut var = vec![0.0f64; cells];
    for ni in 0..n {
        for k in 0..cells {
            mean[k] += data[ni * cells + k].to_f64().unwrap_or(f64::NAN);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for ni in 0..n {
        for k in 0..cells {
            let d = data[ni * cells + k].to_f64().unwrap_or(f64::NAN) - mean[k];
            var[k] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    (mean, var)
}
