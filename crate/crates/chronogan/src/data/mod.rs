//! Dataset construction, normalization and persistence.

mod checkpoint;
mod csvio;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, EarlyGenSummary};
pub use csvio::{export_sequences_csv, import_sequences_csv, load_csv_windows};

use crate::error::{Error, Result};
use crate::seed::stream;
use crate::tensor::{c, Real, Tensor};
use rand::Rng;

/// Per-feature span guard: denominators are (max − min + EPS) so constant
/// features normalize to 0 instead of dividing by zero.
pub const NORM_EPS: f64 = 1e-8;

/// A set of sequences (N samples × T timesteps × F features) plus optional
/// normalization state and a note about where it came from.
#[derive(Clone, Debug)]
pub struct SequenceBatch<F: Real> {
    pub values: Tensor<F>,
    /// Per-feature (min, max) captured when the batch was normalized.
    pub norm: Option<Vec<(f64, f64)>>,
    pub source: String,
}

impl<F: Real> SequenceBatch<F> {
    pub fn new(values: Tensor<F>, source: impl Into<String>) -> Result<Self> {
        let b = SequenceBatch {
            values,
            norm: None,
            source: source.into(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn n(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn t(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn f(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.values.shape();
        if s.len() != 3 {
            return Err(Error::shape(format!(
                "sequence batch must be (N,T,F), got {s:?}"
            )));
        }
        if !self.values.all_finite() {
            return Err(Error::domain("sequence batch holds non-finite values"));
        }
        if let Some(pairs) = &self.norm {
            if pairs.len() != self.f() {
                return Err(Error::shape(format!(
                    "normalization has {} feature pairs, batch has {} features",
                    pairs.len(),
                    self.f()
                )));
            }
            if self
                .values
                .data()
                .iter()
                .any(|v| *v < F::zero() || *v > F::one())
            {
                return Err(Error::contract(
                    "normalized batch holds values outside [0,1]",
                ));
            }
        }
        Ok(())
    }

    /// Copy the chosen samples (repeats allowed) into a fresh (K × T × F)
    /// tensor, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Tensor<F>> {
        if idx.is_empty() {
            return Err(Error::contract("select: empty index list"));
        }
        let (t, f) = (self.t(), self.f());
        let stride = t * f;
        let src = self.values.data();
        let mut data = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            if i >= self.n() {
                return Err(Error::contract(format!(
                    "select: sample {i} out of range (N = {})",
                    self.n()
                )));
            }
            data.extend_from_slice(&src[i * stride..(i + 1) * stride]);
        }
        Tensor::new(vec![idx.len(), t, f], data)
    }

    /// Split off the last `k` samples: (head, tail), both carrying this
    /// batch's normalization state and source note.
    pub fn split_tail(&self, k: usize) -> Result<(SequenceBatch<F>, SequenceBatch<F>)> {
        let n = self.n();
        if k == 0 || k >= n {
            return Err(Error::contract(format!(
                "split_tail: need 1 <= k < N, got k = {k}, N = {n}"
            )));
        }
        let head: Vec<usize> = (0..n - k).collect();
        let tail: Vec<usize> = (n - k..n).collect();
        let mk = |values: Tensor<F>, norm: Option<Vec<(f64, f64)>>, source: String| SequenceBatch {
            values,
            norm,
            source,
        };
        Ok((
            mk(self.select(&head)?, self.norm.clone(), self.source.clone()),
            mk(self.select(&tail)?, self.norm.clone(), self.source.clone()),
        ))
    }
}

/// Per-feature min/max over plain rows, before any windowing.
pub(crate) fn feature_ranges_rows(rows: &[Vec<f64>], f_dim: usize) -> Vec<(f64, f64)> {
    let mut pairs = vec![(f64::INFINITY, f64::NEG_INFINITY); f_dim];
    for row in rows {
        for (fi, &v) in row.iter().enumerate() {
            pairs[fi].0 = pairs[fi].0.min(v);
            pairs[fi].1 = pairs[fi].1.max(v);
        }
    }
    pairs
}

/// Deterministic sample shuffle applied to freshly windowed data, so that
/// overlapping neighbour windows don't travel together through batches.
pub(crate) fn apply_window_shuffle<F: Real>(values: Tensor<F>) -> Tensor<F> {
    use rand::seq::SliceRandom;
    let s = values.shape().to_vec();
    let (n, stride) = (s[0], s[1] * s[2]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(42, "csv-window-shuffle"));
    let src = values.data();
    let mut data = Vec::with_capacity(src.len());
    for &i in &order {
        data.extend_from_slice(&src[i * stride..(i + 1) * stride]);
    }
    Tensor::new(s, data).expect("shuffle preserves shape")
}

/// Per-feature minimum and maximum over every sample and timestep.
pub fn feature_ranges<F: Real>(values: &Tensor<F>) -> Vec<(f64, f64)> {
    let s = values.shape();
    let f_dim = s[2];
    let mut pairs = vec![(f64::INFINITY, f64::NEG_INFINITY); f_dim];
    for (i, v) in values.data().iter().enumerate() {
        let f = i % f_dim;
        let x = v.to_f64().unwrap();
        pairs[f].0 = pairs[f].0.min(x);
        pairs[f].1 = pairs[f].1.max(x);
    }
    pairs
}

fn apply_ranges<F: Real>(values: &Tensor<F>, pairs: &[(f64, f64)]) -> Tensor<F> {
    let f_dim = values.shape()[2];
    let data = values
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (lo, hi) = pairs[i % f_dim];
            c((v.to_f64().unwrap() - lo) / (hi - lo + NORM_EPS))
        })
        .collect();
    Tensor::new(values.shape().to_vec(), data).expect("shape preserved")
}

/// Scale every feature into [0,1] using its global min/max across the whole
/// batch. The guarded denominator maps constant features to 0.
pub fn minmax_normalize<F: Real>(batch: &SequenceBatch<F>) -> Result<SequenceBatch<F>> {
    if batch.norm.is_some() {
        return Err(Error::contract("batch is already normalized"));
    }
    batch.validate()?;
    let pairs = feature_ranges(&batch.values);
    Ok(SequenceBatch {
        values: apply_ranges(&batch.values, &pairs),
        norm: Some(pairs),
        source: batch.source.clone(),
    })
}

/// Invert [`minmax_normalize`] using the stored per-feature ranges.
pub fn denormalize<F: Real>(batch: &SequenceBatch<F>) -> Result<SequenceBatch<F>> {
    let Some(pairs) = &batch.norm else {
        return Err(Error::contract("batch carries no normalization to invert"));
    };
    let f_dim = batch.f();
    let data = batch
        .values
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (lo, hi) = pairs[i % f_dim];
            c(v.to_f64().unwrap() * (hi - lo + NORM_EPS) + lo)
        })
        .collect();
    Ok(SequenceBatch {
        values: Tensor::new(batch.values.shape().to_vec(), data)?,
        norm: None,
        source: batch.source.clone(),
    })
}

/// Synthesize multivariate sine sequences: each (sample, feature) draws its
/// own frequency η ~ U[0,1] and phase θ ~ U[−π,π], then
/// x(t) = sin(2π·η·t + θ) for t = 0..T−1. The batch is min-max normalized
/// like any other dataset.
pub fn generate_sines<F: Real>(n: usize, t_len: usize, f_dim: usize, seed: u64) -> Result<SequenceBatch<F>> {
    if n == 0 || t_len == 0 || f_dim == 0 {
        return Err(Error::contract("generate_sines requires n, T, F >= 1"));
    }
    let mut rng = stream(seed, "sines");
    let mut data = vec![F::zero(); n * t_len * f_dim];
    for ni in 0..n {
        for fi in 0..f_dim {
            let eta: f64 = rng.gen_range(0.0..1.0);
            let theta: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            for ti in 0..t_len {
                let x = (2.0 * std::f64::consts::PI * eta * ti as f64 + theta).sin();
                data[(ni * t_len + ti) * f_dim + fi] = c(x);
            }
        }
    }
    let raw = SequenceBatch::new(Tensor::new(vec![n, t_len, f_dim], data)?, "sines")?;
    minmax_normalize(&raw)
}
