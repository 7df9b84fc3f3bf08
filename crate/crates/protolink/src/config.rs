//! Flat `key=value` run configuration mirroring the encoder and training
//! fields, with a canonical rendering used for config hashing.

use thiserror::Error;

use crate::encoder::{EncoderConfig, FfActivation};
use crate::train::{OptimizerKind, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {got:?}")]
    BadLine { line: usize, got: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {detail}")]
    BadValue { line: usize, key: String, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { encoder: EncoderConfig::default(), train: TrainConfig::default() }
    }
}

impl RunConfig {
    /// Parses `key=value` lines over the given base; blank lines and `#`
    /// comments are ignored, unknown keys are errors.
    pub fn parse_over(base: RunConfig, text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = base;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::BadLine { line: i + 1, got: raw.to_string() })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |detail: String| ConfigError::BadValue {
                line: i + 1,
                key: key.to_string(),
                detail,
            };
            macro_rules! num {
                () => {
                    value.parse().map_err(|e| bad(format!("{e}")))?
                };
            }
            match key {
                "num_blocks" => cfg.encoder.num_blocks = num!(),
                "hidden_size" => cfg.encoder.hidden_size = num!(),
                "num_heads" => cfg.encoder.num_heads = num!(),
                "max_desc_len" => cfg.encoder.max_desc_len = num!(),
                "max_field_len" => cfg.encoder.max_field_len = num!(),
                "vocab_size" => cfg.encoder.vocab_size = num!(),
                "dropout" => cfg.encoder.dropout = num!(),
                "ff_activation" => {
                    cfg.encoder.ff_activation = match value {
                        "relu" => FfActivation::Relu,
                        "gelu" => FfActivation::Gelu,
                        other => return Err(bad(format!("unknown activation {other:?}"))),
                    }
                }
                "epochs" => cfg.train.epochs = num!(),
                "learning_rate" => cfg.train.learning_rate = num!(),
                "batch_size" => cfg.train.batch_size = num!(),
                "seed" => cfg.train.seed = num!(),
                "optimizer" => {
                    cfg.train.optimizer = match value {
                        "sgd" => OptimizerKind::Sgd,
                        "adam" => OptimizerKind::Adam,
                        other => return Err(bad(format!("unknown optimizer {other:?}"))),
                    }
                }
                "max_iterations" => {
                    cfg.train.max_iterations =
                        if value.is_empty() || value == "none" { None } else { Some(num!()) }
                }
                "svm_l2" => cfg.train.svm_l2 = num!(),
                other => {
                    return Err(ConfigError::UnknownKey { line: i + 1, key: other.to_string() })
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse_over(RunConfig::default(), text)
    }

    /// Canonical rendering: fixed key order, one `key=value` per line.
    pub fn render(&self) -> String {
        let e = &self.encoder;
        let t = &self.train;
        let act = match e.ff_activation {
            FfActivation::Relu => "relu",
            FfActivation::Gelu => "gelu",
        };
        let opt = match t.optimizer {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        };
        let iter = t.max_iterations.map_or("none".to_string(), |n| n.to_string());
        format!(
            "num_blocks={}\nhidden_size={}\nnum_heads={}\nmax_desc_len={}\nmax_field_len={}\nvocab_size={}\ndropout={}\nff_activation={act}\nepochs={}\nlearning_rate={}\nbatch_size={}\nseed={}\noptimizer={opt}\nmax_iterations={iter}\nsvm_l2={}\n",
            e.num_blocks,
            e.hidden_size,
            e.num_heads,
            e.max_desc_len,
            e.max_field_len,
            e.vocab_size,
            e.dropout,
            t.epochs,
            t.learning_rate,
            t.batch_size,
            t.seed,
            t.svm_l2,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trips_through_render() {
        let mut cfg = RunConfig::default();
        cfg.encoder.num_blocks = 3;
        cfg.train.learning_rate = 0.001;
        cfg.train.optimizer = OptimizerKind::Sgd;
        cfg.train.max_iterations = Some(500);
        let parsed = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(
            RunConfig::parse("frobnication=9"),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse("# a comment\n\nepochs = 9\n").unwrap();
        assert_eq!(cfg.train.epochs, 9);
    }

    #[test]
    fn bad_value_reports_key_and_line() {
        match RunConfig::parse("epochs=notanumber") {
            Err(ConfigError::BadValue { line, key, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(key, "epochs");
            }
            other => panic!("expected BadValue, got {other:?}"),
        }
    }
}
