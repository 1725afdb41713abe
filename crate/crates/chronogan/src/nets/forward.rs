//! Forward evaluation of cells, hybrid blocks and role networks.
//!
//! Sequences travel as step lists: `steps[t]` is an (N × dim) matrix holding
//! timestep t for the whole minibatch. Input-side projections are batched
//! over time (one matmul on the (T·N × dim) stack instead of T small ones);
//! only the hidden-state recurrence runs step by step.

use super::{CellKind, CellParams, HybridBlockParams, ModelBundle, Role};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Rearrange an (N × T × F) batch into T matrices of shape (N × F).
pub fn batch_to_steps<F: Real>(batch: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
    let s = batch.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!(
            "expected rank-3 batch (N,T,F), got {s:?}"
        )));
    }
    let (n, t, f) = (s[0], s[1], s[2]);
    let data = batch.data();
    let mut steps = Vec::with_capacity(t);
    for ti in 0..t {
        let mut step = Vec::with_capacity(n * f);
        for ni in 0..n {
            let base = (ni * t + ti) * f;
            step.extend_from_slice(&data[base..base + f]);
        }
        steps.push(Tensor::new(vec![n, f], step)?);
    }
    Ok(steps)
}

/// Inverse of [`batch_to_steps`].
pub fn steps_to_batch<F: Real>(steps: &[Tensor<F>]) -> Result<Tensor<F>> {
    if steps.is_empty() {
        return Err(Error::contract("cannot assemble a batch from zero steps"));
    }
    let s0 = steps[0].shape().to_vec();
    if s0.len() != 2 {
        return Err(Error::shape("steps must be rank-2 (N,F) matrices"));
    }
    let (n, f) = (s0[0], s0[1]);
    let t = steps.len();
    let mut data = vec![F::zero(); n * t * f];
    for (ti, step) in steps.iter().enumerate() {
        if step.shape() != s0.as_slice() {
            return Err(Error::shape("inconsistent step shapes"));
        }
        for ni in 0..n {
            let dst = (ni * t + ti) * f;
            data[dst..dst + f].copy_from_slice(&step.data()[ni * f..(ni + 1) * f]);
        }
    }
    Tensor::new(vec![n, t, f], data)
}

// ── Bound parameters ────────────────────────────────────────────────────

/// A cell's parameters registered on a graph, with gate matrices
/// concatenated for single-matmul projections.
struct BoundCell {
    kind: CellKind,
    hidden: usize,
    /// (input_dim × G·H): all gates' input weights side by side.
    wx_cat: Var,
    /// (G·H): all gates' biases.
    b_cat: Var,
    /// GRU: update|reset recurrent weights (H × 2H). LSTM: all four (H × 4H).
    wh_main: Var,
    /// GRU candidate recurrent weights; multiplies the reset-masked state.
    wh_cand: Option<Var>,
}

fn bind_cell<F: Real>(g: &mut Graph<F>, p: &CellParams<F>, leaves: &mut Vec<Var>) -> Result<BoundCell> {
    let mut wx = Vec::new();
    let mut wh = Vec::new();
    let mut bs = Vec::new();
    for gate in &p.gates {
        let vx = g.leaf(gate.w_x.clone())?;
        let vh = g.leaf(gate.w_h.clone())?;
        let vb = g.leaf(gate.b.clone())?;
        leaves.extend([vx, vh, vb]);
        wx.push(vx);
        wh.push(vh);
        bs.push(vb);
    }
    let wx_cat = g.concat(&wx, 1)?;
    let b_cat = g.concat(&bs, 0)?;
    let (wh_main, wh_cand) = match p.kind {
        CellKind::Gru => (g.concat(&wh[..2], 1)?, Some(wh[2])),
        CellKind::Lstm => (g.concat(&wh, 1)?, None),
    };
    Ok(BoundCell {
        kind: p.kind,
        hidden: p.hidden_dim,
        wx_cat,
        b_cat,
        wh_main,
        wh_cand,
    })
}

/// Hybrid-block parameters registered as graph leaves. `leaves` follows the
/// same canonical order as [`HybridBlockParams::named_params`], so gradient
/// collection can zip against the parameter list.
pub struct BoundBlock {
    gru: Vec<BoundCell>,
    lstm: Vec<BoundCell>,
    merge_w1: Var,
    merge_b1: Var,
    merge_w2: Var,
    merge_b2: Var,
    pub input_dim: usize,
    pub output_dim: usize,
    pub leaves: Vec<Var>,
}

impl<F: Real> HybridBlockParams<F> {
    pub fn bind(&self, g: &mut Graph<F>) -> Result<BoundBlock> {
        self.validate()?;
        let mut leaves = Vec::new();
        let mut gru = Vec::with_capacity(self.gru_stack.len());
        for cell in &self.gru_stack {
            gru.push(bind_cell(g, cell, &mut leaves)?);
        }
        let mut lstm = Vec::with_capacity(self.lstm_stack.len());
        for cell in &self.lstm_stack {
            lstm.push(bind_cell(g, cell, &mut leaves)?);
        }
        let merge_w1 = g.leaf(self.merge.w1.clone())?;
        let merge_b1 = g.leaf(self.merge.b1.clone())?;
        let merge_w2 = g.leaf(self.merge.w2.clone())?;
        let merge_b2 = g.leaf(self.merge.b2.clone())?;
        leaves.extend([merge_w1, merge_b1, merge_w2, merge_b2]);
        Ok(BoundBlock {
            gru,
            lstm,
            merge_w1,
            merge_b1,
            merge_w2,
            merge_b2,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            leaves,
        })
    }
}

// ── Single-step recurrences ─────────────────────────────────────────────

/// GRU update from a precomputed input projection `px = x·Wx + b` (N × 3H).
fn gru_from_proj<F: Real>(g: &mut Graph<F>, cell: &BoundCell, px: Var, h_prev: Var) -> Result<Var> {
    let h = cell.hidden;
    let hh = g.matmul(h_prev, cell.wh_main)?; // (N × 2H)
    let xz = g.slice(px, 1, 0, h)?;
    let xr = g.slice(px, 1, h, h)?;
    let xc = g.slice(px, 1, 2 * h, h)?;
    let hz = g.slice(hh, 1, 0, h)?;
    let hr = g.slice(hh, 1, h, h)?;
    let z = {
        let s = g.add(xz, hz)?;
        g.sigmoid(s)?
    };
    let r = {
        let s = g.add(xr, hr)?;
        g.sigmoid(s)?
    };
    let rh = g.mul(r, h_prev)?;
    let cand = {
        let m = g.matmul(rh, cell.wh_cand.expect("gru cell has candidate weights"))?;
        let s = g.add(xc, m)?;
        g.tanh(s)?
    };
    // h = (1 - z) ⊙ h_prev + z ⊙ h̃
    let keep = {
        let zc = g.one_minus(z)?;
        g.mul(zc, h_prev)?
    };
    let take = g.mul(z, cand)?;
    g.add(keep, take)
}

/// LSTM update from a precomputed input projection `px = x·Wx + b` (N × 4H).
fn lstm_from_proj<F: Real>(
    g: &mut Graph<F>,
    cell: &BoundCell,
    px: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let h = cell.hidden;
    let hh = g.matmul(h_prev, cell.wh_main)?; // (N × 4H)
    let pre = g.add(px, hh)?;
    let i_gate = {
        let s = g.slice(pre, 1, 0, h)?;
        g.sigmoid(s)?
    };
    let f_gate = {
        let s = g.slice(pre, 1, h, h)?;
        g.sigmoid(s)?
    };
    let o_gate = {
        let s = g.slice(pre, 1, 2 * h, h)?;
        g.sigmoid(s)?
    };
    let cand = {
        let s = g.slice(pre, 1, 3 * h, h)?;
        g.tanh(s)?
    };
    let c_new = {
        let keep = g.mul(f_gate, c_prev)?;
        let add = g.mul(i_gate, cand)?;
        g.add(keep, add)?
    };
    let h_new = {
        let tc = g.tanh(c_new)?;
        g.mul(o_gate, tc)?
    };
    Ok((h_new, c_new))
}

fn check_step_shape<F: Real>(g: &Graph<F>, x: Var, input_dim: usize, what: &str) -> Result<usize> {
    let s = g.value(x).shape();
    if s.len() != 2 || s[1] != input_dim {
        return Err(Error::shape(format!(
            "{what}: expected (N × {input_dim}) input, got {s:?}"
        )));
    }
    Ok(s[0])
}

/// One GRU step: rows of `x_t` are batch entries. Returns the new hidden
/// state (N × H).
pub fn gru_step<F: Real>(g: &mut Graph<F>, x_t: Var, h_prev: Var, p: &CellParams<F>) -> Result<Var> {
    if p.kind != CellKind::Gru {
        return Err(Error::contract("gru_step called with non-GRU params"));
    }
    p.validate()?;
    let n = check_step_shape(g, x_t, p.input_dim, "gru_step x_t")?;
    if g.value(h_prev).shape() != [n, p.hidden_dim] {
        return Err(Error::shape(format!(
            "gru_step h_prev: expected ({n} × {}), got {:?}",
            p.hidden_dim,
            g.value(h_prev).shape()
        )));
    }
    let mut leaves = Vec::new();
    let cell = bind_cell(g, p, &mut leaves)?;
    let px = {
        let m = g.matmul(x_t, cell.wx_cat)?;
        g.add(m, cell.b_cat)?
    };
    gru_from_proj(g, &cell, px, h_prev)
}

/// One LSTM step. Returns the new (hidden, cell) states, each (N × H).
pub fn lstm_step<F: Real>(
    g: &mut Graph<F>,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    p: &CellParams<F>,
) -> Result<(Var, Var)> {
    if p.kind != CellKind::Lstm {
        return Err(Error::contract("lstm_step called with non-LSTM params"));
    }
    p.validate()?;
    let n = check_step_shape(g, x_t, p.input_dim, "lstm_step x_t")?;
    for (state, name) in [(h_prev, "h_prev"), (c_prev, "c_prev")] {
        if g.value(state).shape() != [n, p.hidden_dim] {
            return Err(Error::shape(format!(
                "lstm_step {name}: expected ({n} × {}), got {:?}",
                p.hidden_dim,
                g.value(state).shape()
            )));
        }
    }
    let mut leaves = Vec::new();
    let cell = bind_cell(g, p, &mut leaves)?;
    let px = {
        let m = g.matmul(x_t, cell.wx_cat)?;
        g.add(m, cell.b_cat)?
    };
    lstm_from_proj(g, &cell, px, h_prev, c_prev)
}

// ── Block forward ───────────────────────────────────────────────────────

/// Per-timestep outputs of a block, kept stacked as one (T·N × out) matrix
/// until the caller slices or squashes them.
pub struct StepOutputs {
    pub big: Var,
    pub n: usize,
    pub t: usize,
}

impl StepOutputs {
    pub fn per_step<F: Real>(&self, g: &mut Graph<F>) -> Result<Vec<Var>> {
        (0..self.t)
            .map(|ti| g.slice(self.big, 0, ti * self.n, self.n))
            .collect()
    }
}

fn run_stack<F: Real>(
    g: &mut Graph<F>,
    cells: &[BoundCell],
    steps: &[Var],
    n: usize,
) -> Result<Vec<Var>> {
    let t = steps.len();
    let mut layer_in: Vec<Var> = steps.to_vec();
    for cell in cells {
        let big = g.concat(&layer_in, 0)?; // (T·N × D)
        let proj = {
            let m = g.matmul(big, cell.wx_cat)?;
            g.add(m, cell.b_cat)? // bias broadcast across rows
        };
        let mut h = g.constant(Tensor::zeros(&[n, cell.hidden]))?;
        let mut c_state = g.constant(Tensor::zeros(&[n, cell.hidden]))?;
        let mut outs = Vec::with_capacity(t);
        for ti in 0..t {
            let px = g.slice(proj, 0, ti * n, n)?;
            match cell.kind {
                CellKind::Gru => h = gru_from_proj(g, cell, px, h)?,
                CellKind::Lstm => {
                    let (nh, nc) = lstm_from_proj(g, cell, px, h, c_state)?;
                    h = nh;
                    c_state = nc;
                }
            }
            outs.push(h);
        }
        layer_in = outs;
    }
    Ok(layer_in)
}

/// Bind one cell and run it over `steps`, returning the hidden state at
/// every timestep. Parameter leaves are appended to `leaves` in canonical
/// (w_x, w_h, b)-per-gate order so gradients can be zipped back against
/// [`CellParams::gates`]. Used by the evaluation score networks, which are
/// single plain cells rather than hybrid blocks.
pub(crate) fn run_cell<F: Real>(
    g: &mut Graph<F>,
    p: &CellParams<F>,
    steps: &[Var],
    leaves: &mut Vec<Var>,
) -> Result<Vec<Var>> {
    if steps.is_empty() {
        return Err(Error::contract("run_cell over an empty sequence"));
    }
    p.validate()?;
    let n = check_step_shape(g, steps[0], p.input_dim, "run_cell input")?;
    let cell = bind_cell(g, p, leaves)?;
    run_stack(g, std::slice::from_ref(&cell), steps, n)
}

impl BoundBlock {
    /// Run both stacks over `steps` and merge per timestep. The output head
    /// is linear; role wrappers add their sigmoid on top.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, steps: &[Var]) -> Result<StepOutputs> {
        if steps.is_empty() {
            return Err(Error::contract("hybrid forward over an empty sequence"));
        }
        let n = check_step_shape(g, steps[0], self.input_dim, "hybrid input")?;
        for &s in &steps[1..] {
            if check_step_shape(g, s, self.input_dim, "hybrid input")? != n {
                return Err(Error::shape("batch size varies across timesteps"));
            }
        }
        let t = steps.len();
        let gru_tops = run_stack(g, &self.gru, steps, n)?;
        let lstm_tops = run_stack(g, &self.lstm, steps, n)?;
        let gru_big = g.concat(&gru_tops, 0)?; // (T·N × H)
        let lstm_big = g.concat(&lstm_tops, 0)?; // (T·N × H)
        let both = g.concat(&[gru_big, lstm_big], 1)?; // (T·N × 2H)
        let hidden = {
            let m = g.matmul(both, self.merge_w1)?;
            let m = g.add(m, self.merge_b1)?;
            g.tanh(m)?
        };
        let big = {
            let m = g.matmul(hidden, self.merge_w2)?;
            g.add(m, self.merge_b2)?
        };
        Ok(StepOutputs { big, n, t })
    }

    /// Forward pass followed by the sigmoid head every role applies.
    pub fn forward_squashed<F: Real>(&self, g: &mut Graph<F>, steps: &[Var]) -> Result<Vec<Var>> {
        let out = self.forward(g, steps)?;
        let sq = g.sigmoid(out.big)?;
        StepOutputs { big: sq, ..out }.per_step(g)
    }
}

/// Run a hybrid block over a sequence of (N × input_dim) steps, returning
/// per-timestep (N × output_dim) merge outputs (linear head).
pub fn hybrid_forward<F: Real>(
    g: &mut Graph<F>,
    steps: &[Var],
    p: &HybridBlockParams<F>,
) -> Result<Vec<Var>> {
    let bound = p.bind(g)?;
    let out = bound.forward(g, steps)?;
    out.per_step(g)
}

/// Run one role network of the bundle, sigmoid head included.
pub fn role_forward<F: Real>(
    g: &mut Graph<F>,
    role: Role,
    steps: &[Var],
    bundle: &ModelBundle<F>,
) -> Result<Vec<Var>> {
    let block = bundle.block(role);
    if !steps.is_empty() {
        check_step_shape(g, steps[0], block.input_dim, role.name())?;
    }
    let bound = block.bind(g)?;
    bound.forward_squashed(g, steps)
}
