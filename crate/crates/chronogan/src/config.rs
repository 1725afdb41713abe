//! Run configuration: one JSON file describing data, model, training and
//! loss settings. Every key is optional and takes a documented default;
//! unknown keys are rejected by name so typos fail fast instead of
//! silently training with defaults.

use crate::data::{generate_sines, load_csv_windows, SequenceBatch};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::nets::ModelDims;
use crate::train::TrainConfig;
use serde::Deserialize;
use std::path::Path;

/// Where the sequences come from.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// "sines" (synthetic multi-sine) or "csv" (windowed columnar file).
    pub source: String,
    /// Input file, required for (and only meaningful with) `source = "csv"`.
    pub path: Option<String>,
    /// Sequence length.
    #[serde(rename = "T")]
    pub t: usize,
    /// Window step for CSV sources.
    pub stride: usize,
    /// Feature count; for CSV sources this must match the column count.
    pub features: usize,
    /// Sample count for generated sources.
    pub n: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "sines".into(),
            path: None,
            t: 24,
            stride: 1,
            features: 5,
            n: 1000,
        }
    }
}

/// Network sizes shared by all five roles.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Defaults to the feature count when omitted.
    pub noise_dim: Option<usize>,
    pub gru_layers: usize,
    pub lstm_layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: 24,
            latent_dim: 24,
            noise_dim: None,
            gru_layers: 2,
            lstm_layers: 2,
        }
    }
}

/// Optimization schedule.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs_phase1: u64,
    pub epochs_phase2: u64,
    pub epochs_phase3: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub check_epoch: u64,
    pub eval_budget_steps: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs_phase1: 500,
            epochs_phase2: 500,
            epochs_phase3: 4000,
            batch_size: 128,
            learning_rate: 1e-3,
            check_epoch: 500,
            eval_budget_steps: 500,
            seed: 42,
        }
    }
}

/// Weights for the weighted-average statistic: a named profile or explicit
/// per-timestep values.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TsWeights {
    /// Only "linear" (w_t rising linearly with t) is defined.
    Policy(String),
    /// One weight per timestep; length must equal the sequence length.
    Explicit(Vec<f64>),
}

impl Default for TsWeights {
    fn default() -> Self {
        TsWeights::Policy("linear".into())
    }
}

impl TsWeights {
    /// `None` means "use the built-in linear profile".
    fn resolve(&self, t_len: usize) -> Result<Option<Vec<f64>>> {
        match self {
            TsWeights::Policy(name) if name == "linear" => Ok(None),
            TsWeights::Policy(other) => Err(Error::Config(format!(
                "losses.ts_weights: unknown policy \"{other}\" — use \"linear\" or an explicit array"
            ))),
            TsWeights::Explicit(w) => {
                if w.len() != t_len {
                    return Err(Error::Config(format!(
                        "losses.ts_weights has {} entries for sequences of length {}",
                        w.len(),
                        t_len
                    )));
                }
                Ok(Some(w.clone()))
            }
        }
    }
}

/// Loss weighting, mirroring [`LossWeights`] plus the statistic profile.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub w_r_phase1: f64,
    pub w_r_phase3: f64,
    pub w_u_ae_phase1: f64,
    pub w_u_ae_phase3: f64,
    pub w_u_g: f64,
    pub w_s: f64,
    pub w_v: f64,
    pub w_ts: f64,
    pub ts_weights: TsWeights,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossSection {
            w_r_phase1: w.w_r_phase1,
            w_r_phase3: w.w_r_phase3,
            w_u_ae_phase1: w.w_u_ae_phase1,
            w_u_ae_phase3: w.w_u_ae_phase3,
            w_u_g: w.w_u_g,
            w_s: w.w_s,
            w_v: w.w_v,
            w_ts: w.w_ts,
            ts_weights: TsWeights::default(),
        }
    }
}

impl LossSection {
    fn weights(&self) -> LossWeights {
        LossWeights {
            w_r_phase1: self.w_r_phase1,
            w_r_phase3: self.w_r_phase3,
            w_u_ae_phase1: self.w_u_ae_phase1,
            w_u_ae_phase3: self.w_u_ae_phase3,
            w_u_g: self.w_u_g,
            w_s: self.w_s,
            w_v: self.w_v,
            w_ts: self.w_ts,
        }
    }
}

/// The whole run configuration.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub losses: LossSection,
}

/// Parse a configuration from JSON text. Serde's message names any unknown
/// key and its location.
pub fn parse_run_config(text: &str) -> Result<RunConfigFile> {
    let cfg: RunConfigFile =
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read and parse a configuration file.
pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfigFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_run_config(&text)
}

impl RunConfigFile {
    pub fn validate(&self) -> Result<()> {
        match self.data.source.as_str() {
            "sines" => {
                if self.data.path.is_some() {
                    return Err(Error::Config(
                        "data.path is only meaningful with data.source = \"csv\"".into(),
                    ));
                }
            }
            "csv" => {
                if self.data.path.is_none() {
                    return Err(Error::Config(
                        "data.path is required when data.source = \"csv\"".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "data.source must be \"sines\" or \"csv\", got \"{other}\""
                )))
            }
        }
        for (key, v) in [
            ("data.T", self.data.t),
            ("data.stride", self.data.stride),
            ("data.features", self.data.features),
            ("data.n", self.data.n),
            ("model.hidden_dim", self.model.hidden_dim),
            ("model.latent_dim", self.model.latent_dim),
            ("model.gru_layers", self.model.gru_layers),
            ("model.lstm_layers", self.model.lstm_layers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be at least 1")));
            }
        }
        if self.model.noise_dim == Some(0) {
            return Err(Error::Config("model.noise_dim must be at least 1".into()));
        }
        self.losses.ts_weights.resolve(self.data.t)?;
        Ok(())
    }

    /// Build the sequences this configuration describes, normalized and
    /// ready for the trainer.
    pub fn load_data(&self) -> Result<SequenceBatch<f32>> {
        self.validate()?;
        match self.data.source.as_str() {
            "sines" => generate_sines(self.data.n, self.data.t, self.data.features, self.train.seed),
            _ => {
                let path = self.data.path.as_deref().expect("validated above");
                let batch = load_csv_windows::<f32>(path, self.data.t, self.data.stride)?;
                if batch.f() != self.data.features {
                    return Err(Error::Config(format!(
                        "data.features = {} but {} has {} columns",
                        self.data.features,
                        path,
                        batch.f()
                    )));
                }
                Ok(batch)
            }
        }
    }

    /// Resolve into the trainer's configuration. Deeper numeric checks
    /// (positive learning rate, weight proportions, …) run in
    /// [`TrainConfig::validate`].
    pub fn train_config(&self) -> Result<TrainConfig> {
        self.validate()?;
        let cfg = TrainConfig {
            dims: ModelDims {
                feature_dim: self.data.features,
                latent_dim: self.model.latent_dim,
                hidden_dim: self.model.hidden_dim,
                noise_dim: self.model.noise_dim.unwrap_or(self.data.features),
            },
            gru_layers: self.model.gru_layers,
            lstm_layers: self.model.lstm_layers,
            epochs_phase1: self.train.epochs_phase1,
            epochs_phase2: self.train.epochs_phase2,
            epochs_phase3: self.train.epochs_phase3,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            check_epoch: self.train.check_epoch,
            eval_budget_steps: self.train.eval_budget_steps,
            seed: self.train.seed,
            weights: self.losses.weights(),
            wavg_weights: self.losses.ts_weights.resolve(self.data.t)?,
        };
        cfg.validate().map_err(|e| match e {
            Error::Contract(msg) => Error::Config(msg),
            other => other,
        })?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_yields_the_reference_configuration() {
        let cfg = parse_run_config("{}").unwrap();
        assert_eq!(cfg.data.source, "sines");
        assert_eq!((cfg.data.t, cfg.data.features, cfg.data.n), (24, 5, 1000));
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.dims.feature_dim, 5);
        assert_eq!(tc.dims.hidden_dim, 24);
        assert_eq!(tc.dims.latent_dim, 24);
        assert_eq!(tc.dims.noise_dim, 5, "noise width follows the feature count");
        assert_eq!((tc.gru_layers, tc.lstm_layers), (2, 2));
        assert_eq!(
            (tc.epochs_phase1, tc.epochs_phase2, tc.epochs_phase3),
            (500, 500, 4000)
        );
        assert_eq!(tc.batch_size, 128);
        assert_eq!(tc.learning_rate, 1e-3);
        assert_eq!((tc.check_epoch, tc.eval_budget_steps), (500, 500));
        assert_eq!(tc.seed, 42);
        assert_eq!(tc.weights.w_r_phase1, 10.0);
        assert!(tc.wavg_weights.is_none());
    }

    #[test]
    fn partial_sections_keep_unmentioned_defaults() {
        let cfg = parse_run_config(r#"{"data": {"n": 12}, "train": {"seed": 7}}"#).unwrap();
        assert_eq!(cfg.data.n, 12);
        assert_eq!(cfg.data.t, 24);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.batch_size, 128);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = parse_run_config(r#"{"train": {"lr": 0.01}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lr"), "message should name the key: {msg}");
        let err = parse_run_config(r#"{"outputs": {}}"#).unwrap_err();
        assert!(err.to_string().contains("outputs"));
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn csv_source_requires_a_path_and_sines_refuses_one() {
        let err = parse_run_config(r#"{"data": {"source": "csv"}}"#).unwrap_err();
        assert!(err.to_string().contains("data.path"));
        let err =
            parse_run_config(r#"{"data": {"source": "sines", "path": "x.csv"}}"#).unwrap_err();
        assert!(err.to_string().contains("data.path"));
        let err = parse_run_config(r#"{"data": {"source": "parquet"}}"#).unwrap_err();
        assert!(err.to_string().contains("parquet"));
    }

    #[test]
    fn ts_weight_policies_resolve() {
        let cfg =
            parse_run_config(r#"{"data": {"T": 3}, "losses": {"ts_weights": "linear"}}"#).unwrap();
        assert!(cfg.train_config().unwrap().wavg_weights.is_none());
        let cfg =
            parse_run_config(r#"{"data": {"T": 3}, "losses": {"ts_weights": [1.0, 2.0, 4.0]}}"#)
                .unwrap();
        assert_eq!(
            cfg.train_config().unwrap().wavg_weights,
            Some(vec![1.0, 2.0, 4.0])
        );
        let err = parse_run_config(r#"{"losses": {"ts_weights": "quadratic"}}"#).unwrap_err();
        assert!(err.to_string().contains("quadratic"));
        let err =
            parse_run_config(r#"{"data": {"T": 4}, "losses": {"ts_weights": [1.0, 2.0]}}"#)
                .unwrap_err();
        assert!(err.to_string().contains("length 4"), "{err}");
    }

    #[test]
    fn zero_dimensions_are_named() {
        for (snippet, key) in [
            (r#"{"data": {"T": 0}}"#, "data.T"),
            (r#"{"data": {"features": 0}}"#, "data.features"),
            (r#"{"model": {"hidden_dim": 0}}"#, "model.hidden_dim"),
            (r#"{"model": {"noise_dim": 0}}"#, "model.noise_dim"),
        ] {
            let err = parse_run_config(snippet).unwrap_err();
            assert!(
                err.to_string().contains(key),
                "expected {key} in: {err}"
            );
        }
    }

    #[test]
    fn sines_data_load_matches_the_requested_shape() {
        let cfg = parse_run_config(
            r#"{"data": {"source": "sines", "n": 6, "T": 5, "features": 2}}"#,
        )
        .unwrap();
        let batch = cfg.load_data().unwrap();
        assert_eq!((batch.n(), batch.t(), batch.f()), (6, 5, 2));
        assert!(batch.norm.is_some(), "loader output arrives normalized");
    }

    #[test]
    fn bad_train_numbers_surface_as_config_errors() {
        let err = parse_run_config(r#"{"train": {"learning_rate": 0.0}}"#)
            .unwrap()
            .train_config()
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
        let err = parse_run_config(r#"{"losses": {"w_r_phase3": 50.0}}"#)
            .unwrap()
            .train_config()
            .unwrap_err();
        assert!(err.to_string().contains("proportion"), "{err}");
    }
}
