//! Run configuration: every hyperparameter, stored as flat TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MafnError, Result};

/// Environment variables `MAFN_<KEY>` override top-level config keys,
/// e.g. `MAFN_SEED=7` or `MAFN_FUSION_WIDTHS="[16, 16]"`.
pub const ENV_PREFIX: &str = "MAFN_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    // windowing
    pub window: usize,
    pub horizon: usize,
    pub stride: usize,
    pub rul_cap: f64,

    // operating-state clustering
    pub num_states: usize,
    pub cluster_restarts: usize,
    pub cluster_max_iter: usize,
    pub cluster_tol: f64,

    // architecture
    pub embed_dim: usize,
    pub conv_kernel: usize,
    pub conv_filters: usize,
    pub lstm_hidden: usize,
    pub attention_dim: usize,
    pub decoder_hidden: usize,
    pub trend_dim: usize,
    pub fusion_widths: Vec<usize>,
    pub rul_hidden: [usize; 2],

    // loss weighting
    pub w_state: f64,
    pub w_degradation: f64,
    pub w_forecast: f64,
    pub w_rul: f64,
    pub lambda_smooth: f64,
    pub lambda_late: f64,
    pub lambda_early: f64,
    /// Compute the RUL loss on targets divided by `rul_cap`.
    pub rul_loss_normalized: bool,

    // optimization
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,

    // inference
    /// Left-pad histories shorter than `window` by repeating the first cycle.
    pub pad_short_histories: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 30,
            horizon: 10,
            stride: 1,
            rul_cap: 125.0,
            num_states: 6,
            cluster_restarts: 10,
            cluster_max_iter: 300,
            cluster_tol: 1e-10,
            embed_dim: 8,
            conv_kernel: 3,
            conv_filters: 16,
            lstm_hidden: 32,
            attention_dim: 16,
            decoder_hidden: 16,
            trend_dim: 4,
            fusion_widths: vec![32],
            rul_hidden: [32, 16],
            w_state: 0.5,
            w_degradation: 0.3,
            w_forecast: 1.0,
            w_rul: 1.0,
            lambda_smooth: 0.1,
            lambda_late: 2.0,
            lambda_early: 1.0,
            rul_loss_normalized: true,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 5.0,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.2,
            seed: 42,
            pad_short_histories: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("horizon", self.horizon),
            ("stride", self.stride),
            ("num_states", self.num_states),
            ("cluster_restarts", self.cluster_restarts),
            ("cluster_max_iter", self.cluster_max_iter),
            ("embed_dim", self.embed_dim),
            ("conv_kernel", self.conv_kernel),
            ("conv_filters", self.conv_filters),
            ("lstm_hidden", self.lstm_hidden),
            ("attention_dim", self.attention_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("trend_dim", self.trend_dim),
            ("rul_hidden[0]", self.rul_hidden[0]),
            ("rul_hidden[1]", self.rul_hidden[1]),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(MafnError::Config(format!("`{name}` must be positive")));
            }
        }
        if self.fusion_widths.is_empty() || self.fusion_widths.contains(&0) {
            return Err(MafnError::Config(
                "`fusion_widths` needs at least one positive width".into(),
            ));
        }
        if self.conv_kernel > 2 * self.window {
            return Err(MafnError::Config(format!(
                "conv_kernel {} exceeds twice the window {}",
                self.conv_kernel, self.window
            )));
        }
        let nonneg = [
            ("w_state", self.w_state),
            ("w_degradation", self.w_degradation),
            ("w_forecast", self.w_forecast),
            ("w_rul", self.w_rul),
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_late", self.lambda_late),
            ("lambda_early", self.lambda_early),
            ("learning_rate", self.learning_rate),
            ("grad_clip", self.grad_clip),
            ("cluster_tol", self.cluster_tol),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MafnError::Config(format!("`{name}` must be finite and >= 0")));
            }
        }
        if self.lambda_late <= self.lambda_early {
            return Err(MafnError::Config(
                "lambda_late must be greater than lambda_early".into(),
            ));
        }
        if [self.w_state, self.w_degradation, self.w_forecast, self.w_rul]
            .iter()
            .all(|&w| w == 0.0)
        {
            return Err(MafnError::Config("at least one loss weight must be positive".into()));
        }
        if self.rul_cap.is_nan() || self.rul_cap <= 0.0 {
            return Err(MafnError::Config("`rul_cap` must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(MafnError::Config("`validation_fraction` must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(MafnError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(MafnError::Config("`adam_eps` must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> crate::loss::LossWeights {
        crate::loss::LossWeights {
            w_state: self.w_state,
            w_degradation: self.w_degradation,
            w_forecast: self.w_forecast,
            w_rul: self.w_rul,
            lambda_smooth: self.lambda_smooth,
            lambda_late: self.lambda_late,
            lambda_early: self.lambda_early,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| MafnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `MAFN_*` environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MafnError::io(path, e))?;
        Self::from_toml_with_overrides(&text, &Self::env_vars())
    }

    /// Defaults plus environment overrides.
    pub fn from_env() -> Result<Self> {
        Self::from_toml_with_overrides("", &Self::env_vars())
    }

    fn env_vars() -> Vec<(String, String)> {
        std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect()
    }

    /// Variables whose key is not a config field (e.g. `MAFN_FD002_DIR`)
    /// are left alone; unknown keys in the file itself are still rejected.
    pub fn from_toml_with_overrides(text: &str, vars: &[(String, String)]) -> Result<Self> {
        let known = toml::Table::try_from(TrainConfig::default()).expect("config serializes");
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| MafnError::Config(e.to_string()))?;
        for (key, raw) in vars {
            let Some(field) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let field = field.to_ascii_lowercase();
            if !known.contains_key(&field) {
                log::debug!("ignoring {key}: not a config key");
                continue;
            }
            let value: toml::Value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.clone()));
            table.insert(field, value);
        }
        let cfg: TrainConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| MafnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        format!(
            "# MAFN run configuration. Every key is optional; missing keys take the\n\
             # defaults shown here. Any key can be overridden with MAFN_<KEY>.\n\n{body}"
        )
    }

    /// Stable SHA-256 of the canonical serialization.
    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(toml::to_string(self).expect("config serializes")))
    }
}
