use std::path::Path;

use crate::config::{parse_value, read_kv, unknown_key, Entry};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

use super::AdamConfig;

/// Optimization and bookkeeping settings of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub updates: u64,
    pub warmup: u64,
    /// Multiplier on the inverse square-root schedule.
    pub lr_scale: f64,
    /// Padded token budget per batch.
    pub batch_tokens: usize,
    pub valid_interval: u64,
    /// Number of trailing checkpoints averaged into the final model.
    pub average_last: usize,
    pub beam: usize,
    pub clip_norm: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            updates: 2000,
            warmup: 200,
            lr_scale: 1.0,
            batch_tokens: 512,
            valid_interval: 200,
            average_last: 5,
            beam: 5,
            clip_norm: 1.0,
            adam: AdamConfig::default(),
        }
    }
}

pub(crate) const TRAIN_KEYS: &[&str] = &[
    "seed",
    "updates",
    "warmup",
    "lr_scale",
    "batch_tokens",
    "valid_interval",
    "average_last",
    "beam",
    "clip_norm",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
];

impl TrainConfig {
    pub fn set(&mut self, e: &Entry) -> Result<bool> {
        let (k, v) = (e.key.as_str(), e.value.as_str());
        match k {
            "seed" => self.seed = parse_value(k, v)?,
            "updates" => self.updates = parse_value(k, v)?,
            "warmup" => self.warmup = parse_value(k, v)?,
            "lr_scale" => self.lr_scale = parse_value(k, v)?,
            "batch_tokens" => self.batch_tokens = parse_value(k, v)?,
            "valid_interval" => self.valid_interval = parse_value(k, v)?,
            "average_last" => self.average_last = parse_value(k, v)?,
            "beam" => self.beam = parse_value(k, v)?,
            "clip_norm" => self.clip_norm = parse_value(k, v)?,
            "adam_beta1" => self.adam.beta1 = parse_value(k, v)?,
            "adam_beta2" => self.adam.beta2 = parse_value(k, v)?,
            "adam_eps" => self.adam.eps = parse_value(k, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.updates == 0 || self.warmup == 0 || self.valid_interval == 0 {
            return Err(Error::Config("updates, warmup and valid_interval must be positive".into()));
        }
        if self.average_last == 0 || self.beam == 0 || self.batch_tokens == 0 {
            return Err(Error::Config("average_last, beam and batch_tokens must be positive".into()));
        }
        if self.lr_scale <= 0.0 {
            return Err(Error::Config("lr_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn to_entries(&self) -> Vec<(String, String)> {
        [
            ("seed", self.seed.to_string()),
            ("updates", self.updates.to_string()),
            ("warmup", self.warmup.to_string()),
            ("lr_scale", self.lr_scale.to_string()),
            ("batch_tokens", self.batch_tokens.to_string()),
            ("valid_interval", self.valid_interval.to_string()),
            ("average_last", self.average_last.to_string()),
            ("beam", self.beam.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("adam_beta1", self.adam.beta1.to_string()),
            ("adam_beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Model and training settings of a run, read from one `key=value` file.
///
/// Recognized keys: every `ModelConfig` field (`d_model`, `n_heads`,
/// `n_enc_layers`, `n_dec_layers`, `ff_dim`, `max_len`, `dpe_layers`,
/// `lambda`, `label_smoothing`, `dpe_injection`, `layer_norm_eps`,
/// `dropout` (must be 0), `vocab_src`, `vocab_tgt`) and every `TrainConfig`
/// field (`seed`, `updates`, `warmup`, `lr_scale`, `batch_tokens`,
/// `valid_interval`, `average_last`, `beam`, `clip_norm`, `adam_beta1`,
/// `adam_beta2`, `adam_eps`). Anything else is an error.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn apply(&mut self, entries: &[Entry]) -> Result<()> {
        for e in entries {
            if !self.model.set(e)? && !self.train.set(e)? {
                return Err(unknown_key(e));
            }
        }
        Ok(())
    }

    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(entries)?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_entries(&read_kv(path)?)
    }

    pub fn is_key(key: &str) -> bool {
        crate::model::MODEL_KEYS.contains(&key) || TRAIN_KEYS.contains(&key)
    }

    pub fn to_text(&self) -> String {
        self.model
            .to_entries()
            .into_iter()
            .chain(self.train.to_entries())
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
