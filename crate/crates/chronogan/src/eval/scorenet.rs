//! Post-hoc score networks: a sequence classifier behind the
//! discriminative score and a next-step forecaster behind the predictive
//! score. Both are single plain LSTM cells with a linear head — deliberately
//! small, since they measure the data rather than model it.

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::nets::{run_cell, CellKind, CellParams};
use crate::seed::stream;
use crate::tensor::{c, Adam, AdamConfig, Graph, Real, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Knobs for the score networks. `hidden = None` means the default
/// max(4, F/2) sizing rule.
#[derive(Clone, Copy, Debug)]
pub struct EvalConfig {
    /// Optimizer steps for the score network (2000 for standalone scoring;
    /// training-time checks pass their smaller budget).
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            steps: 2000,
            batch_size: 128,
            hidden: None,
        }
    }
}

impl EvalConfig {
    /// A reduced-step configuration for inside the training loop.
    pub fn budgeted(steps: usize) -> Self {
        EvalConfig {
            steps,
            ..Self::default()
        }
    }

    fn hidden_for(&self, f_dim: usize) -> usize {
        self.hidden.unwrap_or_else(|| (f_dim / 2).max(4))
    }
}

// ── the network ─────────────────────────────────────────────────────────

struct ScoreNet<F: Real> {
    cell: CellParams<F>,
    w_out: Tensor<F>,
    b_out: Tensor<F>,
}

impl<F: Real> ScoreNet<F> {
    fn init(input_dim: usize, hidden: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        ScoreNet {
            cell: CellParams::init(CellKind::Lstm, input_dim, hidden, rng),
            w_out: Tensor::uniform(&[hidden, out_dim], -bound, bound, rng),
            b_out: Tensor::uniform(&[out_dim], -bound, bound, rng),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        for gate in &mut self.cell.gates {
            out.extend([&mut gate.w_x, &mut gate.w_h, &mut gate.b]);
        }
        out.extend([&mut self.w_out, &mut self.b_out]);
        out
    }

    /// Run over `steps`, returning per-step linear-head outputs plus the
    /// parameter leaves in [`Self::params_mut`] order.
    fn forward(&self, g: &mut Graph<F>, steps: &[Var]) -> Result<(Vec<Var>, Vec<Var>)> {
        let mut leaves = Vec::new();
        let tops = run_cell(g, &self.cell, steps, &mut leaves)?;
        let w = g.leaf(self.w_out.clone())?;
        let b = g.leaf(self.b_out.clone())?;
        leaves.extend([w, b]);
        let big = g.concat(&tops, 0)?; // (T·N × H)
        let head = {
            let m = g.matmul(big, w)?;
            g.add(m, b)?
        };
        let n = g.value(steps[0]).shape()[0];
        let outs = (0..steps.len())
            .map(|ti| g.slice(head, 0, ti * n, n))
            .collect::<Result<Vec<_>>>()?;
        Ok((outs, leaves))
    }

    fn grads_for(&self, g: &Graph<F>, leaves: &[Var]) -> Vec<Tensor<F>> {
        leaves.iter().map(|&v| g.grad_or_zeros(v)).collect()
    }
}

// ── shared plumbing ─────────────────────────────────────────────────────

/// Copy the selected samples out of an (N × T × F) batch.
fn gather<F: Real>(values: &Tensor<F>, idx: &[usize]) -> Tensor<F> {
    let (t, f) = (values.shape()[1], values.shape()[2]);
    let row = t * f;
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&values.data()[i * row..(i + 1) * row]);
    }
    Tensor::new(vec![idx.len(), t, f], data).expect("gather preserves layout")
}

/// Push each timestep of an (N × T × F) tensor as a graph constant.
fn constant_steps<F: Real>(g: &mut Graph<F>, batch: &Tensor<F>) -> Result<Vec<Var>> {
    crate::nets::batch_to_steps(batch)?
        .into_iter()
        .map(|s| g.constant(s))
        .collect()
}

fn check_compatible<F: Real>(real: &SequenceBatch<F>, synth: &SequenceBatch<F>, need_t_eq: bool) -> Result<()> {
    real.validate()?;
    synth.validate()?;
    if real.f() != synth.f() {
        return Err(Error::shape(format!(
            "feature dims differ: real {} vs synthetic {}",
            real.f(),
            synth.f()
        )));
    }
    if need_t_eq && real.t() != synth.t() {
        return Err(Error::shape(format!(
            "sequence lengths differ: real {} vs synthetic {}",
            real.t(),
            synth.t()
        )));
    }
    Ok(())
}

fn shuffled_split(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cut = (n * 8) / 10;
    let test = idx.split_off(cut);
    (idx, test)
}

fn draw<F: Real>(values: &Tensor<F>, pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let picks: Vec<usize> = (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
    gather(values, &picks)
}

// ── discriminative score ────────────────────────────────────────────────

/// Train a real-vs-synthetic sequence classifier on an 80/20 split of each
/// side and report |0.5 − test error|. 0 means the two sets are
/// indistinguishable to this probe; 0.5 means perfectly separable.
pub fn discriminative_score<F: Real>(
    real: &SequenceBatch<F>,
    synth: &SequenceBatch<F>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<f64> {
    check_compatible(real, synth, true)?;
    if real.n() < 10 || synth.n() < 10 {
        return Err(Error::contract(format!(
            "discriminative score needs >= 10 sequences per side, got {} real / {} synthetic",
            real.n(),
            synth.n()
        )));
    }
    let mut rng = stream(seed, "disc-score");
    let (r_train, r_test) = shuffled_split(real.n(), &mut rng);
    let (s_train, s_test) = shuffled_split(synth.n(), &mut rng);
    let mut net = ScoreNet::<F>::init(real.f(), cfg.hidden_for(real.f()), 1, &mut rng);
    let mut adam = Adam::new(AdamConfig::default());
    let half = (cfg.batch_size / 2).max(1);
    for _ in 0..cfg.steps {
        let xr = draw(&real.values, &r_train, half, &mut rng);
        let xs = draw(&synth.values, &s_train, half, &mut rng);
        let mut g = Graph::new();
        let mut steps = constant_steps(&mut g, &xr)?;
        let synth_steps = constant_steps(&mut g, &xs)?;
        for (a, &b) in steps.iter_mut().zip(&synth_steps) {
            *a = g.concat(&[*a, b], 0)?; // real rows on top, synthetic below
        }
        let (outs, leaves) = net.forward(&mut g, &steps)?;
        let prob = {
            let s = g.sigmoid(*outs.last().expect("nonempty sequence"))?;
            g.clamp(s, c(1e-7), c(1.0 - 1e-7))?
        };
        let p_real = g.slice(prob, 0, 0, half)?;
        let p_synth = g.slice(prob, 0, half, half)?;
        let loss = {
            let lr = g.log(p_real)?;
            let om = g.one_minus(p_synth)?;
            let ls = g.log(om)?;
            let both = g.concat(&[lr, ls], 0)?;
            let s = g.sum(both, None)?;
            g.scale(s, c(-1.0 / (2 * half) as f64))?
        };
        g.backward(loss)?;
        let grads = net.grads_for(&g, &leaves);
        adam.step_refs(&mut net.params_mut(), &grads)?;
    }
    // test error: real misclassified below 0.5, synthetic at or above it
    let mut wrong = 0usize;
    let mut total = 0usize;
    for (batch, pool, is_real) in [(real, &r_test, true), (synth, &s_test, false)] {
        for chunk in pool.chunks(256) {
            let x = gather(&batch.values, chunk);
            let mut g = Graph::inference();
            let steps = constant_steps(&mut g, &x)?;
            let (outs, _) = net.forward(&mut g, &steps)?;
            let prob = g.sigmoid(*outs.last().expect("nonempty sequence"))?;
            for &p in g.value(prob).data() {
                let said_real = p >= c(0.5);
                wrong += usize::from(said_real != is_real);
                total += 1;
            }
        }
    }
    let error = wrong as f64 / total as f64;
    Ok((0.5 - error).abs())
}

// ── predictive score ────────────────────────────────────────────────────

/// Train a next-step forecaster on the synthetic set, then report its mean
/// absolute error on the real set (train-on-synthetic, test-on-real).
pub fn predictive_score<F: Real>(
    real: &SequenceBatch<F>,
    synth: &SequenceBatch<F>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<f64> {
    check_compatible(real, synth, false)?;
    if real.t() < 2 || synth.t() < 2 {
        return Err(Error::contract(
            "predictive score needs sequences of length >= 2",
        ));
    }
    let mut rng = stream(seed, "pred-score");
    let f_dim = real.f();
    let mut net = ScoreNet::<F>::init(f_dim, cfg.hidden_for(f_dim), f_dim, &mut rng);
    let mut adam = Adam::new(AdamConfig::default());
    let pool: Vec<usize> = (0..synth.n()).collect();
    let k = cfg.batch_size.min(synth.n());
    for _ in 0..cfg.steps {
        let x = draw(&synth.values, &pool, k, &mut rng);
        let mut g = Graph::new();
        let steps = constant_steps(&mut g, &x)?;
        let (outs, leaves) = net.forward(&mut g, &steps[..steps.len() - 1])?;
        let loss = mae_graph(&mut g, &outs, &steps[1..])?;
        g.backward(loss)?;
        let grads = net.grads_for(&g, &leaves);
        adam.step_refs(&mut net.params_mut(), &grads)?;
    }
    // MAE over every real sequence
    let mut abs_sum = 0.0f64;
    let mut count = 0usize;
    let all: Vec<usize> = (0..real.n()).collect();
    for chunk in all.chunks(256) {
        let x = gather(&real.values, chunk);
        let mut g = Graph::inference();
        let steps = constant_steps(&mut g, &x)?;
        let (outs, _) = net.forward(&mut g, &steps[..steps.len() - 1])?;
        for (pred, tgt) in outs.iter().zip(&steps[1..]) {
            for (p, t) in g.value(*pred).data().iter().zip(g.value(*tgt).data()) {
                abs_sum += (*p - *t).to_f64().unwrap_or(f64::NAN).abs();
                count += 1;
            }
        }
    }
    let mae = abs_sum / count as f64;
    if !mae.is_finite() {
        return Err(Error::domain("predictive score went non-finite"));
    }
    Ok(mae)
}

/// Mean absolute error between two aligned step lists, as a graph scalar.
fn mae_graph<F: Real>(g: &mut Graph<F>, pred: &[Var], target: &[Var]) -> Result<Var> {
    let mut total = 0usize;
    let mut acc: Option<Var> = None;
    for (&p, &t) in pred.iter().zip(target) {
        let d = g.sub(p, t)?;
        let a = g.abs(d)?;
        total += g.value(a).size();
        let s = g.sum(a, None)?;
        acc = Some(match acc {
            Some(prev) => g.add(prev, s)?,
            None => s,
        });
    }
    let s = acc.ok_or_else(|| Error::contract("mae over an empty step list"))?;
    g.scale(s, c(1.0 / total as f64))
}
