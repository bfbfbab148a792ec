use std::fmt;
use std::str::FromStr;

use crate::config::{parse_value, Entry};
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
/// Number of reserved ids at the start of every vocabulary.
pub const RESERVED: usize = 4;

/// How the DPE output reaches the first encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Injection {
    /// The encoder consumes `r` in place of the enriched embeddings.
    Replace,
    /// The encoder consumes `enriched + r`.
    Residual,
    /// The encoder consumes the enriched embeddings; `r` only feeds the
    /// order loss.
    Bypass,
}

impl FromStr for Injection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replace" => Ok(Self::Replace),
            "residual" => Ok(Self::Residual),
            "bypass" => Ok(Self::Bypass),
            _ => Err(Error::Config(format!("unknown dpe_injection {s:?}"))),
        }
    }
}

impl fmt::Display for Injection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Replace => "replace",
            Self::Residual => "residual",
            Self::Bypass => "bypass",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub ff_dim: usize,
    pub vocab_src: usize,
    pub vocab_tgt: usize,
    pub max_len: usize,
    /// Number of DPE layers in front of the encoder; 0 is the plain baseline.
    pub dpe_layers: usize,
    /// Weight of the translation loss; the order loss gets `1 - lambda`.
    pub lambda: f64,
    pub label_smoothing: f64,
    pub dpe_injection: Injection,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            ff_dim: 256,
            vocab_src: 0,
            vocab_tgt: 0,
            max_len: 128,
            dpe_layers: 0,
            lambda: 0.5,
            label_smoothing: 0.1,
            dpe_injection: Injection::Replace,
            layer_norm_eps: 1e-5,
        }
    }
}

pub(crate) const MODEL_KEYS: &[&str] = &[
    "d_model",
    "n_heads",
    "n_enc_layers",
    "n_dec_layers",
    "ff_dim",
    "vocab_src",
    "vocab_tgt",
    "max_len",
    "dpe_layers",
    "lambda",
    "label_smoothing",
    "dpe_injection",
    "layer_norm_eps",
    "dropout",
];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return bad(format!("d_model {} must be even", self.d_model));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.vocab_src <= RESERVED || self.vocab_tgt <= RESERVED {
            return bad("vocabularies need at least one non-reserved token".into());
        }
        if self.max_len == 0 || self.ff_dim == 0 || self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            return bad("max_len, ff_dim and layer counts must be positive".into());
        }
        Ok(())
    }

    /// Applies one `key=value` entry. Returns `false` for keys this struct
    /// does not own.
    pub fn set(&mut self, e: &Entry) -> Result<bool> {
        let v = e.value.as_str();
        let k = e.key.as_str();
        match k {
            "d_model" => self.d_model = parse_value(k, v)?,
            "n_heads" => self.n_heads = parse_value(k, v)?,
            "n_enc_layers" => self.n_enc_layers = parse_value(k, v)?,
            "n_dec_layers" => self.n_dec_layers = parse_value(k, v)?,
            "ff_dim" => self.ff_dim = parse_value(k, v)?,
            "vocab_src" => self.vocab_src = parse_value(k, v)?,
            "vocab_tgt" => self.vocab_tgt = parse_value(k, v)?,
            "max_len" => self.max_len = parse_value(k, v)?,
            "dpe_layers" => self.dpe_layers = parse_value(k, v)?,
            "lambda" => self.lambda = parse_value(k, v)?,
            "label_smoothing" => self.label_smoothing = parse_value(k, v)?,
            "dpe_injection" => self.dpe_injection = v.parse()?,
            "layer_norm_eps" => self.layer_norm_eps = parse_value(k, v)?,
            "dropout" => {
                let p: f64 = parse_value(k, v)?;
                if p != 0.0 {
                    return Err(Error::Config(
                        "dropout is not supported; training is deterministic (use dropout=0)".into(),
                    ));
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_entries(&self) -> Vec<(String, String)> {
        [
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_enc_layers", self.n_enc_layers.to_string()),
            ("n_dec_layers", self.n_dec_layers.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("vocab_src", self.vocab_src.to_string()),
            ("vocab_tgt", self.vocab_tgt.to_string()),
            ("max_len", self.max_len.to_string()),
            ("dpe_layers", self.dpe_layers.to_string()),
            ("lambda", self.lambda.to_string()),
            ("label_smoothing", self.label_smoothing.to_string()),
            ("dpe_injection", self.dpe_injection.to_string()),
            ("layer_norm_eps", self.layer_norm_eps.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Rebuilds a config from `to_entries` output, ignoring foreign keys.
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut cfg = Self::default();
        for e in entries {
            cfg.set(e)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_kv;

    fn valid() -> ModelConfig {
        ModelConfig {
            vocab_src: 10,
            vocab_tgt: 10,
            ..Default::default()
        }
    }

    #[test]
    fn entries_round_trip() {
        let mut cfg = valid();
        cfg.lambda = 0.3;
        cfg.dpe_layers = 2;
        cfg.dpe_injection = Injection::Residual;
        let text: String = cfg
            .to_entries()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        assert_eq!(ModelConfig::from_entries(&parse_kv(&text).unwrap()).unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_settings() {
        let mut cfg = valid();
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = valid();
        cfg.lambda = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = valid();
        cfg.d_model = 6;
        cfg.n_heads = 3;
        cfg.d_model = 9;
        assert!(cfg.validate().is_err());
        let e = Entry {
            line: 1,
            key: "dropout".into(),
            value: "0.1".into(),
        };
        assert!(valid().set(&e).is_err());
    }
}
