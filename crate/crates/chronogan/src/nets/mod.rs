//! Recurrent cells and the five-network model.
//!
//! Each of the five role networks (encoder, decoder, generator, supervisor,
//! discriminator) shares one architecture: a stack of GRU cells and a stack
//! of LSTM cells run independently over the sequence, their top-layer hidden
//! states concatenated per timestep and merged by a small MLP. Role-specific
//! output heads squash everything through a sigmoid, which keeps latent
//! codes, reconstructions and discriminator probabilities in (0,1) — the
//! data side is min-max normalized to the same interval.

mod forward;

pub use forward::{
    batch_to_steps, gru_step, hybrid_forward, lstm_step, role_forward, steps_to_batch,
    BoundBlock, StepOutputs,
};
pub(crate) use forward::run_cell;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

/// Gate labels in canonical storage order.
pub const GRU_GATES: [&str; 3] = ["update", "reset", "candidate"];
pub const LSTM_GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

/// One gate: input weights `w_x` (input_dim × hidden), recurrent weights
/// `w_h` (hidden × hidden) and bias `b` (hidden).
#[derive(Clone, Debug)]
pub struct GateParams<F: Real> {
    pub w_x: Tensor<F>,
    pub w_h: Tensor<F>,
    pub b: Tensor<F>,
}

/// Parameters of one recurrent cell. GRU cells hold three gates
/// (update, reset, candidate); LSTM cells hold four (input, forget,
/// output, candidate). The GRU candidate's `w_h` multiplies the
/// reset-masked hidden state.
#[derive(Clone, Debug)]
pub struct CellParams<F: Real> {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub gates: Vec<GateParams<F>>,
}

impl<F: Real> CellParams<F> {
    pub fn init(kind: CellKind, input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let n_gates = match kind {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        };
        let in_bound = 1.0 / (input_dim as f64).sqrt();
        let h_bound = 1.0 / (hidden_dim as f64).sqrt();
        let gates = (0..n_gates)
            .map(|_| GateParams {
                w_x: Tensor::uniform(&[input_dim, hidden_dim], -in_bound, in_bound, rng),
                w_h: Tensor::uniform(&[hidden_dim, hidden_dim], -h_bound, h_bound, rng),
                b: Tensor::uniform(&[hidden_dim], -h_bound, h_bound, rng),
            })
            .collect();
        CellParams {
            kind,
            input_dim,
            hidden_dim,
            gates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        };
        if self.gates.len() != want {
            return Err(Error::contract(format!(
                "{:?} cell needs {want} gates, has {}",
                self.kind,
                self.gates.len()
            )));
        }
        for (gi, g) in self.gates.iter().enumerate() {
            if g.w_x.shape() != [self.input_dim, self.hidden_dim]
                || g.w_h.shape() != [self.hidden_dim, self.hidden_dim]
                || g.b.shape() != [self.hidden_dim]
            {
                return Err(Error::shape(format!(
                    "gate {gi} of {:?} cell has inconsistent shapes",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    fn gate_names(&self) -> &'static [&'static str] {
        match self.kind {
            CellKind::Gru => &GRU_GATES,
            CellKind::Lstm => &LSTM_GATES,
        }
    }
}

/// Two-layer perceptron merging the concatenated GRU/LSTM hidden states:
/// tanh hidden layer, linear output.
#[derive(Clone, Debug)]
pub struct MlpParams<F: Real> {
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
}

impl<F: Real> MlpParams<F> {
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let b_in = 1.0 / (input_dim as f64).sqrt();
        let b_hid = 1.0 / (hidden_dim as f64).sqrt();
        MlpParams {
            w1: Tensor::uniform(&[input_dim, hidden_dim], -b_in, b_in, rng),
            b1: Tensor::uniform(&[hidden_dim], -b_in, b_in, rng),
            w2: Tensor::uniform(&[hidden_dim, output_dim], -b_hid, b_hid, rng),
            b2: Tensor::uniform(&[output_dim], -b_hid, b_hid, rng),
        }
    }
}

/// Parameters of one GRU-LSTM hybrid block.
#[derive(Clone, Debug)]
pub struct HybridBlockParams<F: Real> {
    pub gru_stack: Vec<CellParams<F>>,
    pub lstm_stack: Vec<CellParams<F>>,
    pub merge: MlpParams<F>,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl<F: Real> HybridBlockParams<F> {
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        gru_layers: usize,
        lstm_layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let stack = |kind: CellKind, layers: usize, rng: &mut ChaCha8Rng| {
            (0..layers)
                .map(|l| {
                    let d = if l == 0 { input_dim } else { hidden_dim };
                    CellParams::init(kind, d, hidden_dim, rng)
                })
                .collect::<Vec<_>>()
        };
        let gru_stack = stack(CellKind::Gru, gru_layers, rng);
        let lstm_stack = stack(CellKind::Lstm, lstm_layers, rng);
        let merge = MlpParams::init(2 * hidden_dim, 2 * hidden_dim, output_dim, rng);
        HybridBlockParams {
            gru_stack,
            lstm_stack,
            merge,
            input_dim,
            hidden_dim,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gru_stack.is_empty() || self.lstm_stack.is_empty() {
            return Err(Error::contract("hybrid block requires both stacks non-empty"));
        }
        for (li, stack) in [&self.gru_stack, &self.lstm_stack].into_iter().enumerate() {
            let kind = if li == 0 { CellKind::Gru } else { CellKind::Lstm };
            for (l, cell) in stack.iter().enumerate() {
                let want_in = if l == 0 { self.input_dim } else { self.hidden_dim };
                if cell.kind != kind
                    || cell.input_dim != want_in
                    || cell.hidden_dim != self.hidden_dim
                {
                    return Err(Error::shape(format!(
                        "{kind:?} layer {l} dims inconsistent with block"
                    )));
                }
                cell.validate()?;
            }
        }
        if self.merge.w1.shape()[0] != 2 * self.hidden_dim {
            return Err(Error::shape(
                "merge input width must be gru hidden + lstm hidden",
            ));
        }
        if self.merge.w2.shape()[1] != self.output_dim {
            return Err(Error::shape("merge output width mismatch"));
        }
        Ok(())
    }

    /// Parameters in canonical order: GRU layers (per gate: w_x, w_h, b),
    /// LSTM layers, then the merge MLP. Checkpointing, gradient collection
    /// and optimizer state all rely on this order.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (label, stack) in [("gru", &self.gru_stack), ("lstm", &self.lstm_stack)] {
            for (l, cell) in stack.iter().enumerate() {
                for (gate, name) in cell.gates.iter().zip(cell.gate_names()) {
                    out.push((format!("{prefix}.{label}{l}.{name}.w_x"), &gate.w_x));
                    out.push((format!("{prefix}.{label}{l}.{name}.w_h"), &gate.w_h));
                    out.push((format!("{prefix}.{label}{l}.{name}.b"), &gate.b));
                }
            }
        }
        out.push((format!("{prefix}.merge.w1"), &self.merge.w1));
        out.push((format!("{prefix}.merge.b1"), &self.merge.b1));
        out.push((format!("{prefix}.merge.w2"), &self.merge.w2));
        out.push((format!("{prefix}.merge.b2"), &self.merge.b2));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out: Vec<&mut Tensor<F>> = Vec::new();
        for stack in [&mut self.gru_stack, &mut self.lstm_stack] {
            for cell in stack {
                for gate in &mut cell.gates {
                    out.push(&mut gate.w_x);
                    out.push(&mut gate.w_h);
                    out.push(&mut gate.b);
                }
            }
        }
        out.push(&mut self.merge.w1);
        out.push(&mut self.merge.b1);
        out.push(&mut self.merge.w2);
        out.push(&mut self.merge.b2);
        out
    }

    pub fn params(&self) -> Vec<&Tensor<F>> {
        self.named_params("x").into_iter().map(|(_, t)| t).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Encoder,
    Decoder,
    Generator,
    Supervisor,
    Discriminator,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Encoder,
        Role::Decoder,
        Role::Generator,
        Role::Supervisor,
        Role::Discriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Encoder => "encoder",
            Role::Decoder => "decoder",
            Role::Generator => "generator",
            Role::Supervisor => "supervisor",
            Role::Discriminator => "discriminator",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub noise_dim: usize,
}

/// The five jointly trained networks plus their shared dimension record.
#[derive(Clone, Debug)]
pub struct ModelBundle<F: Real> {
    pub encoder: HybridBlockParams<F>,
    pub decoder: HybridBlockParams<F>,
    pub generator: HybridBlockParams<F>,
    pub supervisor: HybridBlockParams<F>,
    pub discriminator: HybridBlockParams<F>,
    pub dims: ModelDims,
}

impl<F: Real> ModelBundle<F> {
    pub fn init(
        dims: ModelDims,
        gru_layers: usize,
        lstm_layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let h = dims.hidden_dim;
        let mk = |i, o, rng: &mut ChaCha8Rng| {
            HybridBlockParams::init(i, h, o, gru_layers, lstm_layers, rng)
        };
        ModelBundle {
            encoder: mk(dims.feature_dim, dims.latent_dim, rng),
            decoder: mk(dims.latent_dim, dims.feature_dim, rng),
            generator: mk(dims.noise_dim, dims.latent_dim, rng),
            supervisor: mk(dims.latent_dim, dims.latent_dim, rng),
            discriminator: mk(dims.feature_dim, 1, rng),
            dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let checks = [
            (&self.encoder, d.feature_dim, d.latent_dim, "encoder"),
            (&self.decoder, d.latent_dim, d.feature_dim, "decoder"),
            (&self.generator, d.noise_dim, d.latent_dim, "generator"),
            (&self.supervisor, d.latent_dim, d.latent_dim, "supervisor"),
            (&self.discriminator, d.feature_dim, 1, "discriminator"),
        ];
        for (block, want_in, want_out, name) in checks {
            if block.input_dim != want_in || block.output_dim != want_out {
                return Err(Error::shape(format!(
                    "{name} maps {} -> {}, expected {want_in} -> {want_out}",
                    block.input_dim, block.output_dim
                )));
            }
            block.validate()?;
        }
        Ok(())
    }

    pub fn block(&self, role: Role) -> &HybridBlockParams<F> {
        match role {
            Role::Encoder => &self.encoder,
            Role::Decoder => &self.decoder,
            Role::Generator => &self.generator,
            Role::Supervisor => &self.supervisor,
            Role::Discriminator => &self.discriminator,
        }
    }

    pub fn block_mut(&mut self, role: Role) -> &mut HybridBlockParams<F> {
        match role {
            Role::Encoder => &mut self.encoder,
            Role::Decoder => &mut self.decoder,
            Role::Generator => &mut self.generator,
            Role::Supervisor => &mut self.supervisor,
            Role::Discriminator => &mut self.discriminator,
        }
    }

    /// Every parameter of every network, names stable across runs.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        Role::ALL
            .iter()
            .flat_map(|&r| self.block(r).named_params(r.name()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    fn dims() -> ModelDims {
        ModelDims {
            feature_dim: 5,
            latent_dim: 8,
            hidden_dim: 8,
            noise_dim: 5,
        }
    }

    #[test]
    fn gate_counts_by_kind() {
        let mut rng = stream(1, "cells");
        let gru = CellParams::<f64>::init(CellKind::Gru, 3, 4, &mut rng);
        let lstm = CellParams::<f64>::init(CellKind::Lstm, 3, 4, &mut rng);
        assert_eq!(gru.gates.len(), 3);
        assert_eq!(lstm.gates.len(), 4);
        gru.validate().unwrap();
        lstm.validate().unwrap();
    }

    #[test]
    fn bundle_dims_line_up() {
        let mut rng = stream(7, "bundle");
        let b = ModelBundle::<f32>::init(dims(), 2, 2, &mut rng);
        b.validate().unwrap();
        assert_eq!(b.encoder.input_dim, 5);
        assert_eq!(b.encoder.output_dim, 8);
        assert_eq!(b.discriminator.output_dim, 1);
    }

    #[test]
    fn named_params_are_unique_and_stable() {
        let mut rng = stream(7, "bundle");
        let b = ModelBundle::<f32>::init(dims(), 2, 2, &mut rng);
        let names: Vec<String> = b.named_params().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len(), "duplicate parameter names");
        assert!(names.contains(&"encoder.gru0.update.w_x".to_string()));
        assert!(names.contains(&"discriminator.merge.b2".to_string()));
        // same seed, same ordering
        let mut rng2 = stream(7, "bundle");
        let b2 = ModelBundle::<f32>::init(dims(), 2, 2, &mut rng2);
        let names2: Vec<String> = b2.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names2);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = stream(3, "init");
        let cell = CellParams::<f64>::init(CellKind::Gru, 16, 4, &mut rng);
        let bound = 1.0 / 4.0; // 1/sqrt(16) for the input side
        for g in &cell.gates {
            assert!(g.w_x.data().iter().all(|v| v.abs() <= bound));
            assert!(g.w_h.data().iter().all(|v| v.abs() <= 0.5));
        }
    }

    #[test]
    fn mismatched_stack_rejected() {
        let mut rng = stream(9, "bad");
        let mut block = HybridBlockParams::<f64>::init(3, 4, 2, 2, 2, &mut rng);
        block.validate().unwrap();
        block.gru_stack[1] = CellParams::init(CellKind::Gru, 7, 4, &mut rng);
        assert!(block.validate().is_err());
        block.gru_stack.clear();
        assert!(block.validate().is_err());
    }
}
