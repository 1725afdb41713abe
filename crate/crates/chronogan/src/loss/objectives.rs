//! The training objectives, each built as graph ops over step lists.
//!
//! A "sequence batch" here is `&[Var]`: T nodes of shape (N × F), one per
//! timestep, as produced by the network forward passes.

use super::stats::{stat_steps, StatKind};
use crate::error::{Error, Result};
use crate::tensor::{c, Graph, Real, Var};

/// Probabilities are clamped into [CLAMP_LO, 1−CLAMP_LO] before any log.
const CLAMP_LO: f64 = 1e-7;

fn check_pair<F: Real>(g: &Graph<F>, a: &[Var], b: &[Var], what: &str) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract(format!("{what}: empty sequence batch")));
    }
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "{what}: sequence lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let s0 = g.value(a[0]).shape().to_vec();
    for &v in a.iter().chain(b) {
        if g.value(v).shape() != s0.as_slice() {
            return Err(Error::shape(format!(
                "{what}: step shapes differ ({:?} vs {:?})",
                g.value(v).shape(),
                s0
            )));
        }
    }
    Ok(())
}

/// Batch mean over samples of Σ_t ‖x_t − x^AE_t‖₂.
pub fn reconstruction_loss<F: Real>(g: &mut Graph<F>, x: &[Var], x_ae: &[Var]) -> Result<Var> {
    check_pair(g, x, x_ae, "reconstruction_loss")?;
    let mut acc: Option<Var> = None;
    for (&xt, &at) in x.iter().zip(x_ae) {
        let d = g.sub(xt, at)?;
        let sq = g.square(d)?;
        let row = g.sum(sq, Some(1))?; // per-sample squared norm
        let norm = g.sqrt(row)?;
        acc = Some(match acc {
            None => norm,
            Some(p) => g.add(p, norm)?,
        });
    }
    g.mean(acc.expect("nonempty checked"), None)
}

fn check_probs<F: Real>(g: &Graph<F>, name: &str, ys: &[Var]) -> Result<()> {
    if ys.is_empty() {
        return Err(Error::contract(format!(
            "adversarial loss: {name} is empty"
        )));
    }
    for &y in ys {
        let v = g.value(y);
        if v.data().iter().any(|&p| p < F::zero() || p > F::one()) {
            return Err(Error::domain(format!(
                "adversarial loss: {name} holds values outside [0,1]"
            )));
        }
    }
    Ok(())
}

/// The generator-facing adversarial term alone, −E Σ_t log ỹ_t, for
/// updates that see only a fake head (e.g. the autoencoder's binary
/// feedback on reconstructions).
pub fn generator_adversarial_loss<F: Real>(g: &mut Graph<F>, y_fake: &[Var]) -> Result<Var> {
    check_probs(g, "y_fake", y_fake)?;
    let s = sum_log_clamped(g, y_fake, false)?;
    g.scale(s, -F::one())
}

fn sum_log_clamped<F: Real>(g: &mut Graph<F>, ys: &[Var], one_minus: bool) -> Result<Var> {
    let lo = c::<F>(CLAMP_LO);
    let hi = F::one() - lo;
    let mut acc: Option<Var> = None;
    for &y in ys {
        let y = if one_minus { g.one_minus(y)? } else { y };
        let cl = g.clamp(y, lo, hi)?;
        let l = g.log(cl)?;
        acc = Some(match acc {
            None => l,
            Some(p) => g.add(p, l)?,
        });
    }
    // mean over the batch of the per-sequence sums
    g.mean(acc.expect("nonempty checked"), None)
}

/// Discriminator and generator adversarial objectives from per-timestep
/// probabilities. `d_loss` is the negated two-sided log-likelihood;
/// `g_loss` is the non-saturating generator form −E Σ_t log ỹ_t.
pub fn adversarial_losses<F: Real>(
    g: &mut Graph<F>,
    y_real: &[Var],
    y_fake: &[Var],
) -> Result<(Var, Var)> {
    check_probs(g, "y_real", y_real)?;
    check_probs(g, "y_fake", y_fake)?;
    if y_real.len() != y_fake.len() {
        return Err(Error::shape(format!(
            "adversarial_losses: sequence lengths differ ({} vs {})",
            y_real.len(),
            y_fake.len()
        )));
    }
    let real_term = sum_log_clamped(g, y_real, false)?;
    let fake_term = sum_log_clamped(g, y_fake, true)?;
    let d_loss = {
        let s = g.add(real_term, fake_term)?;
        g.scale(s, -F::one())?
    };
    let g_loss = {
        let s = sum_log_clamped(g, y_fake, false)?;
        g.scale(s, -F::one())?
    };
    Ok((d_loss, g_loss))
}

/// Two-step-ahead supervision: batch mean of Σ_{t=3..T} ‖h_t − ŝ_{t}‖₂
/// where ŝ_t is `supervisor_out[t−2]`, the estimate produced two steps
/// earlier. Timesteps 1 and 2 have no estimate and are excluded.
pub fn supervised_loss<F: Real>(
    g: &mut Graph<F>,
    h: &[Var],
    supervisor_out: &[Var],
) -> Result<Var> {
    check_pair(g, h, supervisor_out, "supervised_loss")?;
    let t_len = h.len();
    if t_len < 3 {
        return Err(Error::contract(format!(
            "supervised_loss needs T >= 3, got T = {t_len}"
        )));
    }
    let mut acc: Option<Var> = None;
    for t in 2..t_len {
        let d = g.sub(h[t], supervisor_out[t - 2])?;
        let sq = g.square(d)?;
        let row = g.sum(sq, Some(1))?;
        let norm = g.sqrt(row)?;
        acc = Some(match acc {
            None => norm,
            Some(p) => g.add(p, norm)?,
        });
    }
    g.mean(acc.expect("T >= 3 checked"), None)
}

/// Mean + variance matching: Σ_t Σ_f |μ_real − μ_synth| + |σ²_real − σ²_synth|
/// with batch statistics taken over samples (population variance).
pub fn moment_loss<F: Real>(g: &mut Graph<F>, x: &[Var], x_synth: &[Var]) -> Result<Var> {
    if x.is_empty() || x_synth.is_empty() {
        return Err(Error::contract("moment_loss: empty sequence batch"));
    }
    if x.len() != x_synth.len() {
        return Err(Error::shape(format!(
            "moment_loss: sequence lengths differ ({} vs {})",
            x.len(),
            x_synth.len()
        )));
    }
    let f_real = g.value(x[0]).shape()[1];
    let f_synth = g.value(x_synth[0]).shape()[1];
    if f_real != f_synth {
        return Err(Error::shape(format!(
            "moment_loss: feature widths differ ({f_real} vs {f_synth})"
        )));
    }
    let mut acc: Option<Var> = None;
    for (&rt, &st) in x.iter().zip(x_synth) {
        let mr = g.mean(rt, Some(0))?;
        let ms = g.mean(st, Some(0))?;
        let md = {
            let d = g.sub(mr, ms)?;
            let a = g.abs(d)?;
            g.sum(a, None)?
        };
        let vr = g.variance(rt, 0)?;
        let vs = g.variance(st, 0)?;
        let vd = {
            let d = g.sub(vr, vs)?;
            let a = g.abs(d)?;
            g.sum(a, None)?
        };
        let both = g.add(md, vd)?;
        acc = Some(match acc {
            None => both,
            Some(p) => g.add(p, both)?,
        });
    }
    Ok(acc.expect("nonempty checked"))
}

/// Per-statistic contribution: Σ_f (μ_real − μ_synth)² + Σ_f (σ_real − σ_synth)²
/// where μ/σ are the batch mean and population std of the per-sample
/// statistic values.
fn stat_contribution<F: Real>(
    g: &mut Graph<F>,
    kind: StatKind,
    x: &[Var],
    x_synth: &[Var],
    weights: Option<&[f64]>,
) -> Result<Var> {
    let sr = stat_steps(g, kind, x, weights)?; // (N × F)
    let ss = stat_steps(g, kind, x_synth, weights)?;
    let mean_term = {
        let mr = g.mean(sr, Some(0))?;
        let ms = g.mean(ss, Some(0))?;
        let d = g.sub(mr, ms)?;
        let sq = g.square(d)?;
        g.sum(sq, None)?
    };
    let std_term = {
        let vr = g.variance(sr, 0)?;
        let vs = g.variance(ss, 0)?;
        let dr = g.sqrt(vr)?;
        let ds = g.sqrt(vs)?;
        let d = g.sub(dr, ds)?;
        let sq = g.square(d)?;
        g.sum(sq, None)?
    };
    g.add(mean_term, std_term)
}

/// All four per-statistic contributions in [`StatKind::ALL`] order:
/// slope, skewness, weighted average, median.
pub fn ts_contributions<F: Real>(
    g: &mut Graph<F>,
    x: &[Var],
    x_synth: &[Var],
    weights: Option<&[f64]>,
) -> Result<[Var; 4]> {
    if x.len() != x_synth.len() {
        return Err(Error::shape(format!(
            "ts_loss: sequence lengths differ ({} vs {})",
            x.len(),
            x_synth.len()
        )));
    }
    if !x.is_empty() {
        let f_real = g.value(x[0]).shape()[1];
        let f_synth = g.value(x_synth[0]).shape()[1];
        if f_real != f_synth {
            return Err(Error::shape(format!(
                "ts_loss: feature widths differ ({f_real} vs {f_synth})"
            )));
        }
    }
    let mut out = Vec::with_capacity(4);
    for kind in StatKind::ALL {
        out.push(stat_contribution(g, kind, x, x_synth, weights)?);
    }
    Ok([out[0], out[1], out[2], out[3]])
}

/// Sum of the four statistic contributions.
pub fn ts_loss<F: Real>(
    g: &mut Graph<F>,
    x: &[Var],
    x_synth: &[Var],
    weights: Option<&[f64]>,
) -> Result<Var> {
    let [a, b, c_, d] = ts_contributions(g, x, x_synth, weights)?;
    let ab = g.add(a, b)?;
    let abc = g.add(ab, c_)?;
    g.add(abc, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::batch_to_steps;
    use crate::seed::stream;
    use crate::tensor::Tensor;

    fn to_steps(g: &mut Graph<f64>, batch: &Tensor<f64>) -> Vec<Var> {
        batch_to_steps(batch)
            .unwrap()
            .into_iter()
            .map(|t| g.constant(t).unwrap())
            .collect()
    }

    fn batch(n: usize, t: usize, f: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![n, t, f], vals.to_vec()).unwrap()
    }

    #[test]
    fn reconstruction_zero_on_identical() {
        let mut g = Graph::<f64>::new();
        let b = batch(2, 3, 2, &[0.1; 12]);
        let x = to_steps(&mut g, &b);
        let l = reconstruction_loss(&mut g, &x, &x).unwrap();
        assert_eq!(g.scalar_value(l).unwrap(), 0.0);
    }

    #[test]
    fn reconstruction_single_norm() {
        // one sample, T=1, F=2: ‖(3,4)−(0,0)‖ = 5
        let mut g = Graph::<f64>::new();
        let x = to_steps(&mut g, &batch(1, 1, 2, &[3.0, 4.0]));
        let a = to_steps(&mut g, &batch(1, 1, 2, &[0.0, 0.0]));
        let l = reconstruction_loss(&mut g, &x, &a).unwrap();
        assert!((g.scalar_value(l).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_matches_direct_summation() {
        let mut rng = stream(51, "recon");
        for _ in 0..10 {
            let xb = Tensor::<f64>::uniform(&[4, 5, 3], 0.0, 1.0, &mut rng);
            let ab = Tensor::<f64>::uniform(&[4, 5, 3], 0.0, 1.0, &mut rng);
            // independent oracle: plain loops over (n,t): norm, sum, mean
            let mut want = 0.0;
            for n in 0..4 {
                for t in 0..5 {
                    let mut sq = 0.0;
                    for f in 0..3 {
                        let i = (n * 5 + t) * 3 + f;
                        sq += (xb.data()[i] - ab.data()[i]).powi(2);
                    }
                    want += sq.sqrt();
                }
            }
            want /= 4.0;
            let mut g = Graph::<f64>::new();
            let x = to_steps(&mut g, &xb);
            let a = to_steps(&mut g, &ab);
            let l = reconstruction_loss(&mut g, &x, &a).unwrap();
            assert!((g.scalar_value(l).unwrap() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn adversarial_at_half_is_two_log_two() {
        let mut g = Graph::<f64>::new();
        let yr = vec![g.constant(Tensor::full(&[1, 1], 0.5)).unwrap()];
        let yf = vec![g.constant(Tensor::full(&[1, 1], 0.5)).unwrap()];
        let (d, gl) = adversarial_losses(&mut g, &yr, &yf).unwrap();
        assert!((g.scalar_value(d).unwrap() - 2.0 * (2.0f64).ln()).abs() < 1e-12);
        assert!((g.scalar_value(gl).unwrap() - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn adversarial_perfect_discrimination_near_zero() {
        let mut g = Graph::<f64>::new();
        let yr = vec![g.constant(Tensor::full(&[2, 1], 1.0 - 1e-7)).unwrap()];
        let yf = vec![g.constant(Tensor::full(&[2, 1], 1e-7)).unwrap()];
        let (d, _) = adversarial_losses(&mut g, &yr, &yf).unwrap();
        assert!(g.scalar_value(d).unwrap().abs() < 1e-5);
    }

    #[test]
    fn adversarial_matches_scalar_oracle() {
        let mut rng = stream(53, "adv");
        for _ in 0..10 {
            let yr = Tensor::<f64>::uniform(&[3, 4, 1], 0.05, 0.95, &mut rng);
            let yf = Tensor::<f64>::uniform(&[3, 4, 1], 0.05, 0.95, &mut rng);
            // oracle: per sample sum over t, then mean
            let term = |t: &Tensor<f64>, flip: bool| -> f64 {
                let mut acc = 0.0;
                for n in 0..3 {
                    for ti in 0..4 {
                        let v = t.data()[n * 4 + ti];
                        acc += if flip { (1.0 - v).ln() } else { v.ln() };
                    }
                }
                acc / 3.0
            };
            let want_d = -(term(&yr, false) + term(&yf, true));
            let want_g = -term(&yf, false);
            let mut g = Graph::<f64>::new();
            let yrs = to_steps(&mut g, &yr);
            let yfs = to_steps(&mut g, &yf);
            let (d, gl) = adversarial_losses(&mut g, &yrs, &yfs).unwrap();
            assert!((g.scalar_value(d).unwrap() - want_d).abs() < 1e-10);
            assert!((g.scalar_value(gl).unwrap() - want_g).abs() < 1e-10);
        }
    }

    #[test]
    fn adversarial_rejects_out_of_range() {
        let mut g = Graph::<f64>::new();
        let yr = vec![g.constant(Tensor::full(&[1, 1], 1.2)).unwrap()];
        let yf = vec![g.constant(Tensor::full(&[1, 1], 0.5)).unwrap()];
        assert!(matches!(
            adversarial_losses(&mut g, &yr, &yf),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn supervised_aligned_is_zero() {
        // supervisor_out[t-2] == h[t] exactly
        let mut g = Graph::<f64>::new();
        let h_vals: Vec<f64> = (0..8).map(|v| v as f64 / 10.0).collect();
        let hb = batch(1, 8, 1, &h_vals);
        let h = to_steps(&mut g, &hb);
        let mut sup = h[2..].to_vec();
        // last two supervisor entries are unused by the alignment
        sup.push(h[0]);
        sup.push(h[1]);
        let l = supervised_loss(&mut g, &h, &sup).unwrap();
        assert!(g.scalar_value(l).unwrap() < 1e-12);
    }

    #[test]
    fn supervised_minimal_case() {
        // T=3, one latent dim: only t=3 contributes, ‖1−0‖ = 1
        let mut g = Graph::<f64>::new();
        let h = to_steps(&mut g, &batch(1, 3, 1, &[0.7, 0.9, 1.0]));
        let sup = to_steps(&mut g, &batch(1, 3, 1, &[0.0, 0.5, 0.5]));
        let l = supervised_loss(&mut g, &h, &sup).unwrap();
        assert!((g.scalar_value(l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn supervised_matches_shift_oracle() {
        let mut rng = stream(59, "sup");
        let hb = Tensor::<f64>::uniform(&[3, 6, 2], 0.0, 1.0, &mut rng);
        let sb = Tensor::<f64>::uniform(&[3, 6, 2], 0.0, 1.0, &mut rng);
        let mut want = 0.0;
        for n in 0..3 {
            for t in 2..6 {
                let mut sq = 0.0;
                for f in 0..2 {
                    let hv = hb.data()[(n * 6 + t) * 2 + f];
                    let sv = sb.data()[(n * 6 + (t - 2)) * 2 + f];
                    sq += (hv - sv).powi(2);
                }
                want += sq.sqrt();
            }
        }
        want /= 3.0;
        let mut g = Graph::<f64>::new();
        let h = to_steps(&mut g, &hb);
        let s = to_steps(&mut g, &sb);
        let l = supervised_loss(&mut g, &h, &s).unwrap();
        assert!((g.scalar_value(l).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn supervised_too_short_rejected() {
        let mut g = Graph::<f64>::new();
        let h = to_steps(&mut g, &batch(1, 2, 1, &[0.1, 0.2]));
        assert!(matches!(
            supervised_loss(&mut g, &h, &h),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn moment_hand_case() {
        // T=1, F=1: real [0,2] vs synth [1,1]: |1−1| + |1−0| = 1
        let mut g = Graph::<f64>::new();
        let r = to_steps(&mut g, &batch(2, 1, 1, &[0.0, 2.0]));
        let s = to_steps(&mut g, &batch(2, 1, 1, &[1.0, 1.0]));
        let l = moment_loss(&mut g, &r, &s).unwrap();
        assert!((g.scalar_value(l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moment_permutation_invariant() {
        let mut rng = stream(61, "perm");
        let xb = Tensor::<f64>::uniform(&[4, 3, 2], 0.0, 1.0, &mut rng);
        // reverse the sample order
        let mut rev = vec![0.0; xb.size()];
        for n in 0..4 {
            let src = n * 6;
            let dst = (3 - n) * 6;
            rev[dst..dst + 6].copy_from_slice(&xb.data()[src..src + 6]);
        }
        let rb = Tensor::new(vec![4, 3, 2], rev).unwrap();
        let mut g = Graph::<f64>::new();
        let x = to_steps(&mut g, &xb);
        let p = to_steps(&mut g, &rb);
        let l = moment_loss(&mut g, &x, &p).unwrap();
        assert!(g.scalar_value(l).unwrap() < 1e-12);
        let l2 = moment_loss(&mut g, &x, &x).unwrap();
        assert_eq!(g.scalar_value(l2).unwrap(), 0.0);
    }

    #[test]
    fn ts_slope_contribution() {
        // single samples: slopes 1.1 vs 0, std terms vanish → (1.1)² = 1.21
        let mut g = Graph::<f64>::new();
        let r = to_steps(&mut g, &batch(1, 4, 1, &[1.0, 3.0, 2.0, 5.0]));
        let s = to_steps(&mut g, &batch(1, 4, 1, &[2.75; 4]));
        let parts = ts_contributions(&mut g, &r, &s, None).unwrap();
        let slope_part = g.scalar_value(parts[0]).unwrap();
        assert!((slope_part - 1.21).abs() < 1e-10, "got {slope_part}");
    }

    #[test]
    fn ts_loss_zero_on_permutation() {
        let mut rng = stream(67, "tsperm");
        let xb = Tensor::<f64>::uniform(&[5, 6, 2], 0.0, 1.0, &mut rng);
        let mut rev = vec![0.0; xb.size()];
        let stride = 6 * 2;
        for n in 0..5 {
            rev[(4 - n) * stride..(5 - n) * stride]
                .copy_from_slice(&xb.data()[n * stride..(n + 1) * stride]);
        }
        let rb = Tensor::new(vec![5, 6, 2], rev).unwrap();
        let mut g = Graph::<f64>::new();
        let x = to_steps(&mut g, &xb);
        let p = to_steps(&mut g, &rb);
        let l = ts_loss(&mut g, &x, &p, None).unwrap();
        assert!(g.scalar_value(l).unwrap() < 1e-12);
    }

    #[test]
    fn losses_nonnegative_on_random_input() {
        let mut rng = stream(71, "nonneg");
        for _ in 0..5 {
            let xb = Tensor::<f64>::uniform(&[3, 5, 2], 0.0, 1.0, &mut rng);
            let yb = Tensor::<f64>::uniform(&[3, 5, 2], 0.0, 1.0, &mut rng);
            let mut g = Graph::<f64>::new();
            let x = to_steps(&mut g, &xb);
            let y = to_steps(&mut g, &yb);
            for l in [
                reconstruction_loss(&mut g, &x, &y).unwrap(),
                supervised_loss(&mut g, &x, &y).unwrap(),
                moment_loss(&mut g, &x, &y).unwrap(),
                ts_loss(&mut g, &x, &y, None).unwrap(),
            ] {
                assert!(g.scalar_value(l).unwrap() >= 0.0);
            }
        }
    }
}
