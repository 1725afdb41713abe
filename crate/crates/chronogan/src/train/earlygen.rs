//! In-training checkpoint selection. Every `check_epoch` epochs in the
//! second half of the joint phase, fresh synthetic data is scored against a
//! held-aside real slice — discriminative score, predictive score, and
//! batch-moment gaps — and the snapshot minimizing
//!
//! ```text
//! score = dis + p1·pre + p2·(mseMean + mseSTD)
//! ```
//!
//! is kept. The mixing proportions p1 = dis/pre and p2 = dis/(mseMean +
//! mseSTD) are frozen at the first evaluation so later scores stay
//! comparable on one scale.

use crate::data::{EarlyGenSummary, SequenceBatch};
use crate::error::{Error, Result};
use crate::nets::ModelBundle;

/// Denominator guard for the frozen proportions.
const EPS: f64 = 1e-12;

/// One scored evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyGenRecord {
    pub epoch: u64,
    pub dis: f64,
    pub pre: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub score: f64,
    /// Whether this evaluation became (or tied) the best snapshot.
    pub saved: bool,
}

/// Selector state across the joint phase.
#[derive(Clone, Debug, Default)]
pub struct EarlyGenState {
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    /// Best (lowest) score so far; only updated when a snapshot is saved.
    pub total_error: Option<f64>,
    pub best_epoch: Option<u64>,
    pub best_synthetic: Option<SequenceBatch<f32>>,
    pub best_checkpoint: Option<ModelBundle<f32>>,
    pub history: Vec<EarlyGenRecord>,
}

impl EarlyGenState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fold one evaluation into the state. Returns whether the snapshot was
    /// saved. All arithmetic runs in f64.
    pub fn update(
        &mut self,
        epoch: u64,
        dis: f64,
        pre: f64,
        mse_mean: f64,
        mse_std: f64,
        bundle: &ModelBundle<f32>,
        synthetic: &SequenceBatch<f32>,
    ) -> Result<bool> {
        for (name, v) in [
            ("dis", dis),
            ("pre", pre),
            ("mse_mean", mse_mean),
            ("mse_std", mse_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!(
                    "early-generation metric {name} = {v} is not a finite nonnegative value"
                )));
            }
        }
        if let Some(last) = self.history.last() {
            if epoch <= last.epoch {
                return Err(Error::contract(format!(
                    "early-generation epochs must increase ({} after {})",
                    epoch, last.epoch
                )));
            }
        }
        let mse_sum = mse_mean + mse_std;
        if self.p1.is_none() {
            self.p1 = Some(dis / pre.max(EPS));
            self.p2 = Some(dis / mse_sum.max(EPS));
        }
        let p1 = self.p1.expect("set above");
        let p2 = self.p2.expect("set above");
        let score = dis + p1 * pre + p2 * mse_sum;
        if !score.is_finite() {
            return Err(Error::domain("early-generation score went non-finite"));
        }
        let saved = match self.total_error {
            None => true,
            Some(best) => score <= best,
        };
        if saved {
            self.total_error = Some(score);
            self.best_epoch = Some(epoch);
            self.best_synthetic = Some(synthetic.clone());
            self.best_checkpoint = Some(bundle.clone());
        }
        self.history.push(EarlyGenRecord {
            epoch,
            dis,
            pre,
            mse_mean,
            mse_std,
            score,
            saved,
        });
        Ok(saved)
    }

    /// The persistable slice of the state.
    pub fn summary(&self) -> EarlyGenSummary {
        EarlyGenSummary {
            best_epoch: self.best_epoch,
            total_error: self.total_error,
            p1: self.p1,
            p2: self.p2,
        }
    }

    /// Check the cross-update invariants: proportions set together and
    /// fixed, best score equals the minimum of saved history scores.
    pub fn validate(&self) -> Result<()> {
        if self.p1.is_some() != self.p2.is_some() {
            return Err(Error::contract("p1 and p2 must be set together"));
        }
        if self.history.is_empty() {
            return Ok(());
        }
        if self.p1.is_none() || self.total_error.is_none() {
            return Err(Error::contract(
                "evaluations recorded but proportions or best score missing",
            ));
        }
        let min = self
            .history
            .iter()
            .map(|r| r.score)
            .fold(f64::INFINITY, f64::min);
        if (self.total_error.expect("checked") - min).abs() > 1e-12 {
            return Err(Error::contract(
                "best score does not match the history minimum",
            ));
        }
        Ok(())
    }

    /// History as CSV, one line per evaluation.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,dis_score,pre_score,mse_mean,mse_std,score,saved\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.dis, r.pre, r.mse_mean, r.mse_std, r.score, r.saved
            ));
        }
        out
    }
}

/// The epochs (1-based) of the joint phase at which evaluations fire:
/// every `check_epoch` epochs once the phase is half over.
pub fn early_check_schedule(phase3_epochs: u64, check_epoch: u64) -> Vec<u64> {
    if check_epoch == 0 {
        return Vec::new();
    }
    let start = phase3_epochs / 2;
    (1..=phase3_epochs)
        .filter(|e| *e >= start && e % check_epoch == 0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ModelDims;
    use crate::seed::stream;
    use crate::tensor::Tensor;

    fn tiny_bundle() -> ModelBundle<f32> {
        let dims = ModelDims {
            feature_dim: 1,
            latent_dim: 2,
            hidden_dim: 2,
            noise_dim: 1,
        };
        ModelBundle::init(dims, 1, 1, &mut stream(0, "egs-test"))
    }

    fn tiny_batch(fill: f32) -> SequenceBatch<f32> {
        SequenceBatch::new(Tensor::new(vec![2, 3, 1], vec![fill; 6]).unwrap(), "t").unwrap()
    }

    #[test]
    fn hand_fed_sequence_matches_hand_arithmetic() {
        let bundle = tiny_bundle();
        let mut egs = EarlyGenState::new();
        // mseMean + mseSTD = 0.1 split as 0.06 + 0.04
        let saved1 = egs
            .update(10, 0.4, 0.2, 0.06, 0.04, &bundle, &tiny_batch(0.1))
            .unwrap();
        assert!(saved1, "first call always saves");
        assert!((egs.p1.unwrap() - 2.0).abs() <= 1e-12);
        assert!((egs.p2.unwrap() - 4.0).abs() <= 1e-12);
        assert!((egs.total_error.unwrap() - 1.2).abs() <= 1e-12);
        let saved2 = egs
            .update(20, 0.3, 0.2, 0.06, 0.04, &bundle, &tiny_batch(0.2))
            .unwrap();
        assert!(saved2, "1.1 beats 1.2");
        assert!((egs.history[1].score - 1.1).abs() <= 1e-12);
        assert!((egs.p1.unwrap() - 2.0).abs() <= 1e-12, "p1 frozen");
        assert!((egs.p2.unwrap() - 4.0).abs() <= 1e-12, "p2 frozen");
        assert_eq!(egs.best_epoch, Some(20));
        assert_eq!(
            egs.best_synthetic.as_ref().unwrap().values.data()[0],
            0.2f32
        );
        // a worse third evaluation leaves the snapshot alone
        let saved3 = egs
            .update(30, 0.9, 0.9, 0.5, 0.5, &bundle, &tiny_batch(0.3))
            .unwrap();
        assert!(!saved3);
        assert_eq!(egs.best_epoch, Some(20));
        assert!((egs.total_error.unwrap() - 1.1).abs() <= 1e-12);
        egs.validate().unwrap();
    }

    #[test]
    fn equal_score_still_saves() {
        let bundle = tiny_bundle();
        let mut egs = EarlyGenState::new();
        egs.update(1, 0.4, 0.2, 0.06, 0.04, &bundle, &tiny_batch(0.1))
            .unwrap();
        let saved = egs
            .update(2, 0.4, 0.2, 0.06, 0.04, &bundle, &tiny_batch(0.9))
            .unwrap();
        assert!(saved, "ties go to the newer snapshot");
        assert_eq!(egs.best_epoch, Some(2));
    }

    #[test]
    fn zero_denominators_are_guarded() {
        let bundle = tiny_bundle();
        let mut egs = EarlyGenState::new();
        egs.update(1, 0.4, 0.0, 0.0, 0.0, &bundle, &tiny_batch(0.1))
            .unwrap();
        assert!(egs.p1.unwrap().is_finite());
        assert!(egs.p2.unwrap().is_finite());
        assert!(egs.total_error.unwrap().is_finite());
        assert_eq!(egs.history.len(), 1);
    }

    #[test]
    fn bad_metrics_rejected() {
        let bundle = tiny_bundle();
        let mut egs = EarlyGenState::new();
        assert!(egs
            .update(1, f64::NAN, 0.1, 0.1, 0.1, &bundle, &tiny_batch(0.1))
            .is_err());
        assert!(egs
            .update(1, -0.2, 0.1, 0.1, 0.1, &bundle, &tiny_batch(0.1))
            .is_err());
        assert!(egs.history.is_empty());
    }

    #[test]
    fn schedule_enumeration() {
        assert_eq!(
            early_check_schedule(4000, 500),
            vec![2000, 2500, 3000, 3500, 4000]
        );
        assert_eq!(early_check_schedule(1000, 500), vec![500, 1000]);
        assert_eq!(early_check_schedule(7, 2), vec![4, 6]);
        assert_eq!(early_check_schedule(4, 2), vec![2, 4]);
        assert!(early_check_schedule(999, 500).contains(&500));
        assert!(early_check_schedule(0, 500).is_empty());
    }

    #[test]
    fn history_csv_layout() {
        let bundle = tiny_bundle();
        let mut egs = EarlyGenState::new();
        // dyadic inputs so the score (0.5 + 2·0.25 + 4·0.125 = 1.5) prints
        // without a floating-point tail
        egs.update(5, 0.5, 0.25, 0.0625, 0.0625, &bundle, &tiny_batch(0.1))
            .unwrap();
        let csv = egs.history_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,dis_score,pre_score,mse_mean,mse_std,score,saved"
        );
        assert_eq!(lines.next().unwrap(), "5,0.5,0.25,0.0625,0.0625,1.5,true");
    }

    #[test]
    fn summary_projects_the_persistable_fields() {
        let bundle = tiny_bundle();
        let mut egs = EarlyGenState::new();
        egs.update(7, 0.4, 0.2, 0.06, 0.04, &bundle, &tiny_batch(0.1))
            .unwrap();
        let s = egs.summary();
        assert_eq!(s.best_epoch, Some(7));
        assert_eq!(s.p1, Some(2.0));
        assert_eq!(s.p2, Some(4.0));
        assert!((s.total_error.unwrap() - 1.2).abs() <= 1e-12);
    }
}
