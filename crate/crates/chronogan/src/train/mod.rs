//! The three-phase training driver.
//!
//! Phase 1 warms up the autoencoder against a discriminator that learns to
//! tell originals from reconstructions. Phase 2 teaches the supervisor to
//! predict embeddings two steps ahead on real data only. Phase 3 trains
//! everything jointly: the discriminator sees both reconstruction-path and
//! generation-path fakes, the generator/supervisor pair chases adversarial,
//! supervised and distribution-matching feedback, and the autoencoder keeps
//! refining with its phase-3 weighting.
//!
//! An "epoch" here is one minibatch round per network group — the deck of
//! sample indices is reshuffled whenever it runs out, so every sample is
//! visited evenly across epochs.

mod earlygen;

pub use earlygen::{early_check_schedule, EarlyGenRecord, EarlyGenState};

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::eval::{discriminative_score, moment_gap, predictive_score, EvalConfig};
use crate::loss::{
    adversarial_losses, compose_autoencoder_loss, compose_generator_loss,
    generator_adversarial_loss, moment_loss, reconstruction_loss, supervised_loss, ts_loss,
    LossWeights,
};
use crate::nets::{batch_to_steps, role_forward, steps_to_batch, ModelBundle, ModelDims, Role};
use crate::seed::{derive_seed, stream};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

// ── configuration ───────────────────────────────────────────────────────

/// Everything the trainer needs besides the data itself.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub dims: ModelDims,
    pub gru_layers: usize,
    pub lstm_layers: usize,
    pub epochs_phase1: u64,
    pub epochs_phase2: u64,
    pub epochs_phase3: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Evaluate-and-maybe-save cadence within phase 3.
    pub check_epoch: u64,
    /// Optimizer steps granted to each evaluation probe network.
    pub eval_budget_steps: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Per-timestep weights for the weighted-average statistic; `None`
    /// means the built-in linearly increasing profile.
    pub wavg_weights: Option<Vec<f64>>,
}

impl TrainConfig {
    /// The reference configuration for the given model dimensions.
    pub fn for_dims(dims: ModelDims) -> Self {
        TrainConfig {
            dims,
            gru_layers: 2,
            lstm_layers: 2,
            epochs_phase1: 500,
            epochs_phase2: 500,
            epochs_phase3: 4000,
            batch_size: 128,
            learning_rate: 1e-3,
            check_epoch: 500,
            eval_budget_steps: 500,
            seed: 42,
            weights: LossWeights::default(),
            wavg_weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::contract(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.check_epoch == 0 {
            return Err(Error::contract("check_epoch must be at least 1"));
        }
        if self.eval_budget_steps == 0 {
            return Err(Error::contract("eval_budget_steps must be at least 1"));
        }
        if self.gru_layers == 0 || self.lstm_layers == 0 {
            return Err(Error::contract(
                "each recurrent stack needs at least one layer",
            ));
        }
        if let Some(w) = &self.wavg_weights {
            if w.is_empty() || w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::contract(
                    "wavg_weights must be nonnegative, finite, and sum to a positive value",
                ));
            }
        }
        self.weights.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }
}

// ── trace rows ──────────────────────────────────────────────────────────

/// One row of the loss trace. Terms that don't exist in a phase stay `None`
/// and print as empty CSV cells.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLosses {
    pub phase: u8,
    pub epoch: u64,
    pub d_loss: Option<f64>,
    pub recon: Option<f64>,
    pub adv_ae: Option<f64>,
    pub ae_total: Option<f64>,
    pub sup: Option<f64>,
    pub adv_g: Option<f64>,
    pub moment: Option<f64>,
    pub ts: Option<f64>,
    pub gen_total: Option<f64>,
}

/// Render trace rows as CSV (header included, `None` as empty cell).
pub fn trace_csv(rows: &[EpochLosses]) -> String {
    let mut out =
        String::from("phase,epoch,d_loss,recon,adv_ae,ae_total,sup,adv_g,moment,ts,gen_total\n");
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.phase,
            r.epoch,
            cell(r.d_loss),
            cell(r.recon),
            cell(r.adv_ae),
            cell(r.ae_total),
            cell(r.sup),
            cell(r.adv_g),
            cell(r.moment),
            cell(r.ts),
            cell(r.gen_total),
        )
        .expect("writing to a String cannot fail");
    }
    out
}

// ── batching ────────────────────────────────────────────────────────────

/// A shuffled deck of sample indices; dealing past the end reshuffles, so
/// successive minibatches sweep the whole set before repeating anything.
#[derive(Debug)]
struct BatchDeck {
    idx: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchDeck {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        BatchDeck {
            idx: (0..n).collect(),
            pos: n, // force a shuffle on the first deal
            rng,
        }
    }

    fn deal(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            if self.pos >= self.idx.len() {
                self.idx.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.idx[self.pos]);
            self.pos += 1;
        }
        out
    }
}

// ── small graph helpers ─────────────────────────────────────────────────

fn constant_steps(g: &mut Graph<f32>, batch: &Tensor<f32>) -> Result<Vec<Var>> {
    batch_to_steps(batch)?
        .into_iter()
        .map(|t| g.constant(t))
        .collect()
}

fn steps_values(g: &Graph<f32>, steps: &[Var]) -> Result<Tensor<f32>> {
    let tensors: Vec<Tensor<f32>> = steps.iter().map(|&v| g.value(v).clone()).collect();
    steps_to_batch(&tensors)
}

/// Stack sample batches along the sample axis; trailing dims must agree.
fn concat_samples(parts: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    if parts.is_empty() {
        return Err(Error::contract("concat_samples: nothing to join"));
    }
    let tail = parts[0].shape()[1..].to_vec();
    let mut n = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.shape().is_empty() || p.shape()[1..] != tail[..] {
            return Err(Error::shape(format!(
                "concat_samples: trailing dims differ ({:?} vs {:?})",
                p.shape(),
                tail
            )));
        }
        n += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![n];
    shape.extend(&tail);
    Tensor::new(shape, data)
}

/// A numeric failure mid-epoch means the optimization blew up; everything
/// else (shape/contract mistakes) stays what it is.
fn mark_divergence(err: Error, epoch: u64) -> Error {
    match err {
        Error::Domain(reason) => Error::TrainingDiverged {
            epoch: epoch as usize,
            reason,
        },
        other => other,
    }
}

// ── sampling ────────────────────────────────────────────────────────────

/// Sample `n` sequences of length `t_len`: noise Z ~ U[0,1) is pushed
/// through generator, supervisor and decoder. Inference only; large
/// requests run in bounded chunks off one up-front noise draw, so the
/// output for a given (seed, t_len) is a prefix-stable function of `n`.
pub fn generate(
    bundle: &ModelBundle<f32>,
    n: usize,
    t_len: usize,
    seed: u64,
) -> Result<SequenceBatch<f32>> {
    bundle.validate()?;
    if n == 0 || t_len == 0 {
        return Err(Error::contract(format!(
            "generate needs n >= 1 and t >= 1, got n = {n}, t = {t_len}"
        )));
    }
    let nd = bundle.dims.noise_dim;
    let mut rng = stream(seed, "generate");
    let z_all: Vec<f32> = (0..n * t_len * nd).map(|_| rng.gen::<f32>()).collect();
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < n {
        let k = (n - start).min(512);
        let z = Tensor::new(
            vec![k, t_len, nd],
            z_all[start * t_len * nd..(start + k) * t_len * nd].to_vec(),
        )?;
        let mut g = Graph::inference();
        let zs = constant_steps(&mut g, &z)?;
        let latent = role_forward(&mut g, Role::Generator, &zs, bundle)?;
        let smoothed = role_forward(&mut g, Role::Supervisor, &latent, bundle)?;
        let out = role_forward(&mut g, Role::Decoder, &smoothed, bundle)?;
        chunks.push(steps_values(&g, &out)?);
        start += k;
    }
    SequenceBatch::new(concat_samples(&chunks)?, "generated")
}

// ── the trainer ─────────────────────────────────────────────────────────

/// The model state as of the last epoch that finished cleanly; reported
/// alongside divergence errors so a crashed run still points at something
/// usable.
#[derive(Clone, Debug)]
pub struct LastHealthy {
    pub phase: u8,
    pub epoch: u64,
    pub bundle: ModelBundle<f32>,
}

#[derive(Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    pub bundle: ModelBundle<f32>,
    train_data: SequenceBatch<f32>,
    eval_data: Option<SequenceBatch<f32>>,
    pub trace: Vec<EpochLosses>,
    pub egs: EarlyGenState,
    deck: BatchDeck,
    noise_rng: ChaCha8Rng,
    last_healthy: Option<LastHealthy>,
    /// Suppress progress lines on stderr (tests want silence).
    pub quiet: bool,
}

impl Trainer {
    /// Data must already be normalized into [0,1]. When phase 3 schedules
    /// any evaluation, the last fifth of the samples (capped at 512) is
    /// held aside for scoring and never trained on.
    pub fn new(data: SequenceBatch<f32>, cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        data.validate()?;
        if data
            .values
            .data()
            .iter()
            .any(|v| *v < 0.0 || *v > 1.0)
        {
            return Err(Error::contract(
                "training data must be min-max normalized into [0,1] first",
            ));
        }
        if data.f() != cfg.dims.feature_dim {
            return Err(Error::shape(format!(
                "data has {} features but the model expects {}",
                data.f(),
                cfg.dims.feature_dim
            )));
        }
        if let Some(w) = &cfg.wavg_weights {
            if w.len() != data.t() {
                return Err(Error::shape(format!(
                    "wavg_weights has {} entries for sequences of length {}",
                    w.len(),
                    data.t()
                )));
            }
        }
        let schedule = early_check_schedule(cfg.epochs_phase3, cfg.check_epoch);
        let (train_data, eval_data) = if schedule.is_empty() {
            (data, None)
        } else {
            let eval_n = (data.n() / 5).clamp(1, 512);
            if eval_n < 10 {
                return Err(Error::contract(format!(
                    "scheduled early-generation checks hold aside a fifth of the data and \
                     need at least 10 such sequences; got {} of {} — provide >= 50 samples \
                     or shorten phase 3 below the first check",
                    eval_n,
                    data.n()
                )));
            }
            let (head, tail) = data.split_tail(eval_n)?;
            (head, Some(tail))
        };
        let bundle = ModelBundle::init(
            cfg.dims,
            cfg.gru_layers,
            cfg.lstm_layers,
            &mut stream(cfg.seed, "model-init"),
        );
        let deck = BatchDeck::new(train_data.n(), stream(cfg.seed, "batching"));
        let noise_rng = stream(cfg.seed, "noise");
        Ok(Trainer {
            cfg,
            bundle,
            train_data,
            eval_data,
            trace: Vec::new(),
            egs: EarlyGenState::new(),
            deck,
            noise_rng,
            last_healthy: None,
            quiet: true,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn train_len(&self) -> usize {
        self.train_data.n()
    }

    pub fn eval_holdout(&self) -> Option<&SequenceBatch<f32>> {
        self.eval_data.as_ref()
    }

    pub fn last_healthy(&self) -> Option<&LastHealthy> {
        self.last_healthy.as_ref()
    }

    /// All three phases back to back.
    pub fn run(&mut self) -> Result<()> {
        self.phase1()?;
        self.phase2()?;
        self.phase3()
    }

    // ── phase drivers ───────────────────────────────────────────────────

    /// Autoencoder warm-up with adversarial feedback on reconstructions.
    pub fn phase1(&mut self) -> Result<()> {
        let mut d_opt = Adam::new(self.cfg.adam());
        let mut ae_opt = Adam::new(self.cfg.adam());
        for epoch in 1..=self.cfg.epochs_phase1 {
            let row = self
                .phase1_epoch(epoch, &mut d_opt, &mut ae_opt)
                .map_err(|e| mark_divergence(e, epoch))?;
            self.commit(row);
        }
        Ok(())
    }

    /// Supervisor-only training on real embeddings.
    pub fn phase2(&mut self) -> Result<()> {
        let mut s_opt = Adam::new(self.cfg.adam());
        for epoch in 1..=self.cfg.epochs_phase2 {
            let row = self
                .phase2_epoch(epoch, &mut s_opt)
                .map_err(|e| mark_divergence(e, epoch))?;
            self.commit(row);
        }
        Ok(())
    }

    /// Joint adversarial training with scheduled evaluation checkpoints.
    pub fn phase3(&mut self) -> Result<()> {
        let mut d_opt = Adam::new(self.cfg.adam());
        let mut gs_opt = Adam::new(self.cfg.adam());
        let mut ae_opt = Adam::new(self.cfg.adam());
        let schedule = early_check_schedule(self.cfg.epochs_phase3, self.cfg.check_epoch);
        for epoch in 1..=self.cfg.epochs_phase3 {
            let row = self
                .phase3_epoch(epoch, &mut d_opt, &mut gs_opt, &mut ae_opt)
                .map_err(|e| mark_divergence(e, epoch))?;
            self.commit(row);
            if schedule.contains(&epoch) {
                self.run_early_check(epoch)
                    .map_err(|e| mark_divergence(e, epoch))?;
            }
        }
        Ok(())
    }

    // ── per-epoch work ──────────────────────────────────────────────────

    fn phase1_epoch(
        &mut self,
        epoch: u64,
        d_opt: &mut Adam<f32>,
        ae_opt: &mut Adam<f32>,
    ) -> Result<EpochLosses> {
        let x = self.next_batch()?;
        let x_ae = self.reconstruct(&x)?;
        let d_loss = self.discriminator_step(d_opt, &[x.clone()], &[x_ae])?;
        let (recon, adv_ae, ae_total) = self.autoencoder_step(ae_opt, &x, 1)?;
        Ok(EpochLosses {
            phase: 1,
            epoch,
            d_loss: Some(d_loss),
            recon: Some(recon),
            adv_ae: Some(adv_ae),
            ae_total: Some(ae_total),
            ..EpochLosses::default()
        })
    }

    fn phase2_epoch(&mut self, epoch: u64, opt: &mut Adam<f32>) -> Result<EpochLosses> {
        let x = self.next_batch()?;
        let h = self.embed(&x)?; // encoder frozen: supervisor sees constants
        let mut g = Graph::new();
        let hs = constant_steps(&mut g, &h)?;
        let sup = self.bundle.supervisor.bind(&mut g)?;
        let out = sup.forward_squashed(&mut g, &hs)?;
        let loss = supervised_loss(&mut g, &hs, &out)?;
        let val = f64::from(g.scalar_value(loss)?);
        g.backward(loss)?;
        let grads: Vec<Tensor<f32>> = sup.leaves.iter().map(|&v| g.grad_or_zeros(v)).collect();
        opt.step_refs(&mut self.bundle.supervisor.params_mut(), &grads)?;
        Ok(EpochLosses {
            phase: 2,
            epoch,
            sup: Some(val),
            ..EpochLosses::default()
        })
    }

    fn phase3_epoch(
        &mut self,
        epoch: u64,
        d_opt: &mut Adam<f32>,
        gs_opt: &mut Adam<f32>,
        ae_opt: &mut Adam<f32>,
    ) -> Result<EpochLosses> {
        let x = self.next_batch()?;
        let (b, t) = (x.shape()[0], x.shape()[1]);
        let z = self.draw_noise(b, t)?;
        let (x_ae, x_g, x_tilde) = self.phase3_views(&x, &z)?;
        let d_loss = self.discriminator_step(d_opt, &[x.clone(), x_ae], &[x_g, x_tilde])?;
        let (sup, adv_g, moment, ts, gen_total) = self.generator_step(gs_opt, &x, &z)?;
        let (recon, adv_ae, ae_total) = self.autoencoder_step(ae_opt, &x, 3)?;
        Ok(EpochLosses {
            phase: 3,
            epoch,
            d_loss: Some(d_loss),
            recon: Some(recon),
            adv_ae: Some(adv_ae),
            ae_total: Some(ae_total),
            sup: Some(sup),
            adv_g: Some(adv_g),
            moment: Some(moment),
            ts: Some(ts),
            gen_total: Some(gen_total),
        })
    }

    // ── update steps ────────────────────────────────────────────────────

    /// One discriminator update on the stacked real and fake views.
    /// Inputs arrive as plain tensors, so no gradient reaches the networks
    /// that produced them.
    fn discriminator_step(
        &mut self,
        opt: &mut Adam<f32>,
        real: &[Tensor<f32>],
        fake: &[Tensor<f32>],
    ) -> Result<f64> {
        let real_big = concat_samples(real)?;
        let fake_big = concat_samples(fake)?;
        let mut g = Graph::new();
        let rs = constant_steps(&mut g, &real_big)?;
        let fs = constant_steps(&mut g, &fake_big)?;
        let bound = self.bundle.discriminator.bind(&mut g)?;
        let y_real = bound.forward_squashed(&mut g, &rs)?;
        let y_fake = bound.forward_squashed(&mut g, &fs)?;
        let (d_loss, _) = adversarial_losses(&mut g, &y_real, &y_fake)?;
        let val = f64::from(g.scalar_value(d_loss)?);
        g.backward(d_loss)?;
        let grads: Vec<Tensor<f32>> = bound.leaves.iter().map(|&v| g.grad_or_zeros(v)).collect();
        opt.step_refs(&mut self.bundle.discriminator.params_mut(), &grads)?;
        Ok(val)
    }

    /// Encoder + decoder update: reconstruction plus the discriminator's
    /// verdict on the reconstruction, with phase-specific weighting. The
    /// discriminator participates in the graph but its gradients are
    /// dropped.
    fn autoencoder_step(
        &mut self,
        opt: &mut Adam<f32>,
        x: &Tensor<f32>,
        phase: u8,
    ) -> Result<(f64, f64, f64)> {
        let mut g = Graph::new();
        let xs = constant_steps(&mut g, x)?;
        let enc = self.bundle.encoder.bind(&mut g)?;
        let dec = self.bundle.decoder.bind(&mut g)?;
        let disc = self.bundle.discriminator.bind(&mut g)?;
        let h = enc.forward_squashed(&mut g, &xs)?;
        let x_ae = dec.forward_squashed(&mut g, &h)?;
        let recon = reconstruction_loss(&mut g, &xs, &x_ae)?;
        let y_ae = disc.forward_squashed(&mut g, &x_ae)?;
        let adv = generator_adversarial_loss(&mut g, &y_ae)?;
        let total = compose_autoencoder_loss(&mut g, &self.cfg.weights, recon, adv, phase)?;
        let vals = (
            f64::from(g.scalar_value(recon)?),
            f64::from(g.scalar_value(adv)?),
            f64::from(g.scalar_value(total)?),
        );
        g.backward(total)?;
        let grads: Vec<Tensor<f32>> = enc
            .leaves
            .iter()
            .chain(&dec.leaves)
            .map(|&v| g.grad_or_zeros(v))
            .collect();
        let ModelBundle {
            encoder, decoder, ..
        } = &mut self.bundle;
        let mut params = encoder.params_mut();
        params.extend(decoder.params_mut());
        opt.step_refs(&mut params, &grads)?;
        Ok(vals)
    }

    /// Joint generator + supervisor update against the frozen decoder and
    /// discriminator: adversarial feedback on both generated views,
    /// supervision on generated latents, and moment/statistic matching
    /// between the real batch and the supervised generation.
    fn generator_step(
        &mut self,
        opt: &mut Adam<f32>,
        x: &Tensor<f32>,
        z: &Tensor<f32>,
    ) -> Result<(f64, f64, f64, f64, f64)> {
        let mut g = Graph::new();
        let xs = constant_steps(&mut g, x)?;
        let zs = constant_steps(&mut g, z)?;
        let gen = self.bundle.generator.bind(&mut g)?;
        let sup = self.bundle.supervisor.bind(&mut g)?;
        let dec = self.bundle.decoder.bind(&mut g)?;
        let disc = self.bundle.discriminator.bind(&mut g)?;
        let latent = gen.forward_squashed(&mut g, &zs)?;
        let sup_out = sup.forward_squashed(&mut g, &latent)?;
        let x_g = dec.forward_squashed(&mut g, &latent)?;
        let x_tilde = dec.forward_squashed(&mut g, &sup_out)?;
        let y_g = disc.forward_squashed(&mut g, &x_g)?;
        let y_t = disc.forward_squashed(&mut g, &x_tilde)?;
        let adv = {
            let a = generator_adversarial_loss(&mut g, &y_g)?;
            let b = generator_adversarial_loss(&mut g, &y_t)?;
            let s = g.add(a, b)?;
            g.scale(s, 0.5)?
        };
        let sup_l = supervised_loss(&mut g, &latent, &sup_out)?;
        let mom = moment_loss(&mut g, &xs, &x_tilde)?;
        let ts = ts_loss(&mut g, &xs, &x_tilde, self.cfg.wavg_weights.as_deref())?;
        let total = compose_generator_loss(&mut g, &self.cfg.weights, adv, sup_l, mom, ts)?;
        let vals = (
            f64::from(g.scalar_value(sup_l)?),
            f64::from(g.scalar_value(adv)?),
            f64::from(g.scalar_value(mom)?),
            f64::from(g.scalar_value(ts)?),
            f64::from(g.scalar_value(total)?),
        );
        g.backward(total)?;
        let grads: Vec<Tensor<f32>> = gen
            .leaves
            .iter()
            .chain(&sup.leaves)
            .map(|&v| g.grad_or_zeros(v))
            .collect();
        let ModelBundle {
            generator,
            supervisor,
            ..
        } = &mut self.bundle;
        let mut params = generator.params_mut();
        params.extend(supervisor.params_mut());
        opt.step_refs(&mut params, &grads)?;
        Ok(vals)
    }

    // ── evaluation checkpoints ──────────────────────────────────────────

    fn run_early_check(&mut self, epoch: u64) -> Result<()> {
        let eval = self
            .eval_data
            .as_ref()
            .expect("a nonempty schedule implies a holdout");
        let base = derive_seed(self.cfg.seed, &format!("earlygen-{epoch}"));
        let synth = generate(&self.bundle, eval.n(), eval.t(), base)?;
        let ecfg = EvalConfig::budgeted(self.cfg.eval_budget_steps);
        let dis = discriminative_score(eval, &synth, &ecfg, derive_seed(base, "dis"))?;
        let pre = predictive_score(eval, &synth, &ecfg, derive_seed(base, "pre"))?;
        let gap = moment_gap(eval, &synth)?;
        let saved = self
            .egs
            .update(epoch, dis, pre, gap.mse_mean, gap.mse_std, &self.bundle, &synth)?;
        if !self.quiet {
            let last = self.egs.history.last().expect("update just pushed");
            eprintln!(
                "  check @ {epoch}: dis {dis:.4} pre {pre:.4} mse ({:.5}, {:.5}) score {:.4}{}",
                gap.mse_mean,
                gap.mse_std,
                last.score,
                if saved { "  [saved]" } else { "" }
            );
        }
        Ok(())
    }

    // ── plumbing ────────────────────────────────────────────────────────

    fn next_batch(&mut self) -> Result<Tensor<f32>> {
        let k = self.cfg.batch_size.min(self.train_data.n());
        let idx = self.deck.deal(k);
        self.train_data.select(&idx)
    }

    fn draw_noise(&mut self, n: usize, t: usize) -> Result<Tensor<f32>> {
        let nd = self.cfg.dims.noise_dim;
        let data: Vec<f32> = (0..n * t * nd).map(|_| self.noise_rng.gen::<f32>()).collect();
        Tensor::new(vec![n, t, nd], data)
    }

    /// Inference reconstruction X → e → r.
    fn reconstruct(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::inference();
        let xs = constant_steps(&mut g, x)?;
        let h = role_forward(&mut g, Role::Encoder, &xs, &self.bundle)?;
        let out = role_forward(&mut g, Role::Decoder, &h, &self.bundle)?;
        steps_values(&g, &out)
    }

    /// Inference embedding X → e.
    fn embed(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::inference();
        let xs = constant_steps(&mut g, x)?;
        let h = role_forward(&mut g, Role::Encoder, &xs, &self.bundle)?;
        steps_values(&g, &h)
    }

    /// Inference views for the phase-3 discriminator batch: the
    /// reconstruction X^AE and both generation paths X^G (unsupervised)
    /// and X̃ (through the supervisor).
    fn phase3_views(
        &self,
        x: &Tensor<f32>,
        z: &Tensor<f32>,
    ) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
        let mut g = Graph::inference();
        let xs = constant_steps(&mut g, x)?;
        let zs = constant_steps(&mut g, z)?;
        let h = role_forward(&mut g, Role::Encoder, &xs, &self.bundle)?;
        let x_ae = role_forward(&mut g, Role::Decoder, &h, &self.bundle)?;
        let latent = role_forward(&mut g, Role::Generator, &zs, &self.bundle)?;
        let x_g = role_forward(&mut g, Role::Decoder, &latent, &self.bundle)?;
        let smoothed = role_forward(&mut g, Role::Supervisor, &latent, &self.bundle)?;
        let x_tilde = role_forward(&mut g, Role::Decoder, &smoothed, &self.bundle)?;
        Ok((
            steps_values(&g, &x_ae)?,
            steps_values(&g, &x_g)?,
            steps_values(&g, &x_tilde)?,
        ))
    }

    fn commit(&mut self, row: EpochLosses) {
        self.note_progress(&row);
        self.last_healthy = Some(LastHealthy {
            phase: row.phase,
            epoch: row.epoch,
            bundle: self.bundle.clone(),
        });
        self.trace.push(row);
    }

    fn note_progress(&self, row: &EpochLosses) {
        if self.quiet {
            return;
        }
        let total = match row.phase {
            1 => self.cfg.epochs_phase1,
            2 => self.cfg.epochs_phase2,
            _ => self.cfg.epochs_phase3,
        };
        if row.epoch != 1 && row.epoch % 100 != 0 && row.epoch != total {
            return;
        }
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        match row.phase {
            1 => eprintln!(
                "phase 1 [{}/{}] d {} recon {} ae {}",
                row.epoch,
                total,
                fmt(row.d_loss),
                fmt(row.recon),
                fmt(row.ae_total)
            ),
            2 => eprintln!(
                "phase 2 [{}/{}] sup {}",
                row.epoch,
                total,
                fmt(row.sup)
            ),
            _ => eprintln!(
                "phase 3 [{}/{}] d {} gen {} ae {}",
                row.epoch,
                total,
                fmt(row.d_loss),
                fmt(row.gen_total),
                fmt(row.ae_total)
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_sines;

    fn tiny_dims(features: usize) -> ModelDims {
        ModelDims {
            feature_dim: features,
            latent_dim: 4,
            hidden_dim: 8,
            noise_dim: features,
        }
    }

    fn tiny_cfg(features: usize) -> TrainConfig {
        let mut cfg = TrainConfig::for_dims(tiny_dims(features));
        cfg.gru_layers = 1;
        cfg.lstm_layers = 1;
        cfg.epochs_phase1 = 0;
        cfg.epochs_phase2 = 0;
        cfg.epochs_phase3 = 0;
        cfg.batch_size = 16;
        cfg.seed = 11;
        cfg
    }

    fn sines(n: usize, t: usize, f: usize) -> SequenceBatch<f32> {
        generate_sines::<f32>(n, t, f, 5).unwrap()
    }

    fn flat_params(bundle: &ModelBundle<f32>) -> Vec<(String, Vec<u32>)> {
        bundle
            .named_params()
            .into_iter()
            .map(|(name, t)| (name, t.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    }

    #[test]
    fn zero_epochs_leave_the_model_at_initialization() {
        let data = sines(20, 6, 2);
        let cfg = tiny_cfg(2);
        let mut tr = Trainer::new(data, cfg.clone()).unwrap();
        let before = flat_params(&tr.bundle);
        tr.run().unwrap();
        assert_eq!(flat_params(&tr.bundle), before);
        assert!(tr.trace.is_empty());
        assert!(tr.last_healthy().is_none());
        let fresh = ModelBundle::init(
            cfg.dims,
            cfg.gru_layers,
            cfg.lstm_layers,
            &mut stream(cfg.seed, "model-init"),
        );
        assert_eq!(flat_params(&fresh), before);
    }

    #[test]
    fn phase1_reduces_reconstruction_error() {
        let data = sines(32, 8, 2);
        let mut cfg = tiny_cfg(2);
        cfg.epochs_phase1 = 60;
        let mut tr = Trainer::new(data, cfg).unwrap();
        tr.phase1().unwrap();
        let recon: Vec<f64> = tr.trace.iter().map(|r| r.recon.unwrap()).collect();
        let head: f64 = recon[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = recon[recon.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(
            tail < head,
            "reconstruction should improve: first ten avg {head}, last ten avg {tail}"
        );
        for r in &tr.trace {
            assert_eq!(r.phase, 1);
            assert!(r.sup.is_none() && r.gen_total.is_none());
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let data = sines(24, 6, 2);
            let mut cfg = tiny_cfg(2);
            cfg.epochs_phase1 = 5;
            cfg.epochs_phase2 = 5;
            cfg.epochs_phase3 = 5;
            let mut tr = Trainer::new(data, cfg).unwrap();
            tr.run().unwrap();
            (flat_params(&tr.bundle), tr.trace.clone())
        };
        let (p1, t1) = run();
        let (p2, t2) = run();
        assert_eq!(p1, p2, "parameter bits must match across reruns");
        assert_eq!(t1, t2, "traces must match across reruns");
    }

    #[test]
    fn phase2_touches_only_the_supervisor() {
        let data = sines(24, 6, 2);
        let mut cfg = tiny_cfg(2);
        cfg.epochs_phase2 = 10;
        let mut tr = Trainer::new(data, cfg).unwrap();
        let before = flat_params(&tr.bundle);
        tr.phase2().unwrap();
        let after = flat_params(&tr.bundle);
        for ((name, a), (_, b)) in before.iter().zip(&after) {
            if name.starts_with("supervisor.") {
                assert_ne!(a, b, "{name} should move during phase 2");
            } else {
                assert_eq!(a, b, "{name} must stay frozen during phase 2");
            }
        }
        assert!(tr.trace.iter().all(|r| r.phase == 2 && r.sup.is_some()));
    }

    #[test]
    fn phase2_rejects_sequences_too_short_to_supervise() {
        let data = sines(20, 2, 2);
        let mut cfg = tiny_cfg(2);
        cfg.epochs_phase2 = 1;
        let mut tr = Trainer::new(data, cfg).unwrap();
        let err = tr.phase2().unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err:?}");
    }

    #[test]
    fn phase3_runs_checks_on_schedule_and_freezes_proportions() {
        let data = sines(60, 8, 2);
        let mut cfg = tiny_cfg(2);
        cfg.epochs_phase3 = 4;
        cfg.check_epoch = 2;
        cfg.eval_budget_steps = 8;
        let mut tr = Trainer::new(data, cfg).unwrap();
        assert_eq!(tr.train_len(), 48);
        assert_eq!(tr.eval_holdout().unwrap().n(), 12);
        tr.phase3().unwrap();
        let epochs: Vec<u64> = tr.egs.history.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![2, 4]);
        assert!(tr.egs.history[0].saved, "the first check always saves");
        assert!(tr.egs.p1.is_some() && tr.egs.p2.is_some());
        let best = tr.egs.best_synthetic.as_ref().unwrap();
        assert_eq!((best.n(), best.t(), best.f()), (12, 8, 2));
        assert!(tr.egs.best_checkpoint.is_some());
        tr.egs.validate().unwrap();
        let row = tr.trace.last().unwrap();
        assert!(row.gen_total.is_some() && row.moment.is_some() && row.ts.is_some());
    }

    #[test]
    fn divergence_reports_the_failing_epoch() {
        let data = sines(20, 6, 2);
        let mut cfg = tiny_cfg(2);
        cfg.epochs_phase1 = 3;
        let mut tr = Trainer::new(data, cfg).unwrap();
        tr.bundle.encoder.params_mut()[0].data_mut()[0] = f32::NAN;
        let err = tr.phase1().unwrap_err();
        match err {
            Error::TrainingDiverged { epoch, .. } => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(tr.last_healthy().is_none());
    }

    #[test]
    fn scheduled_checks_demand_a_usable_holdout() {
        let data = sines(40, 6, 2); // a fifth is 8 < 10
        let mut cfg = tiny_cfg(2);
        cfg.epochs_phase3 = 4000;
        cfg.check_epoch = 500;
        let err = Trainer::new(data, cfg).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err:?}");
    }

    #[test]
    fn generate_is_shaped_bounded_and_prefix_stable() {
        let dims = tiny_dims(2);
        let bundle = ModelBundle::init(dims, 1, 1, &mut stream(3, "model-init"));
        let small = generate(&bundle, 5, 4, 99).unwrap();
        assert_eq!((small.n(), small.t(), small.f()), (5, 4, 2));
        assert!(small
            .values
            .data()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
        let again = generate(&bundle, 5, 4, 99).unwrap();
        assert_eq!(
            small.values.data(), again.values.data(),
            "same seed must reproduce bit-identical output"
        );
        let other = generate(&bundle, 5, 4, 100).unwrap();
        assert_ne!(small.values.data(), other.values.data());
        // chunked generation (n > 512) agrees with the small draw on its prefix
        let big = generate(&bundle, 600, 4, 99).unwrap();
        assert_eq!(&big.values.data()[..small.values.data().len()], small.values.data());
        assert!(generate(&bundle, 0, 4, 99).is_err());
        assert!(generate(&bundle, 3, 0, 99).is_err());
    }

    #[test]
    fn trace_csv_layout_matches_the_phase_columns() {
        let rows = vec![
            EpochLosses {
                phase: 1,
                epoch: 1,
                d_loss: Some(1.5),
                recon: Some(0.25),
                adv_ae: Some(0.5),
                ae_total: Some(3.0),
                ..EpochLosses::default()
            },
            EpochLosses {
                phase: 2,
                epoch: 1,
                sup: Some(0.125),
                ..EpochLosses::default()
            },
        ];
        let csv = trace_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "phase,epoch,d_loss,recon,adv_ae,ae_total,sup,adv_g,moment,ts,gen_total"
        );
        assert_eq!(lines[1], "1,1,1.5,0.25,0.5,3,,,,,");
        assert_eq!(lines[2], "2,1,,,,,0.125,,,,");
    }

    #[test]
    fn unnormalized_data_is_rejected() {
        let raw = generate_sines::<f32>(20, 6, 2, 5).unwrap();
        let mut shifted = raw.clone();
        shifted.norm = None; // e.g. sequences imported from a raw CSV
        for v in shifted.values.data_mut() {
            *v = *v * 4.0 - 2.0;
        }
        let err = Trainer::new(shifted, tiny_cfg(2)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err:?}");
    }
}
