// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pipeline configuration (TOML).
//!
//! ```toml
//! seed = 7
//! artifacts = "artifacts"     # relative to the config file's directory
//!
//! [task]                      # synthetic task generator
//! vocab_size = 8
//! order = 1
//!
//! [paths]                     # relative to `artifacts`
//! theta_model = "theta.nglm"
//!
//! [pretrain]                  # training of the base model
//! learning_rate = 1.0
//! epochs = 10
//!
//! [warmstart]                 # short fine-tune on the task split
//! epochs = 1
//!
//! [steering]
//! alpha = 0.1
//! penalty = "-inf"            # or a finite number
//!
//! [calibration]
//! aggregator = "mean"         # "median", "trimmed:<tau>"
//!
//! [decode]
//! strategy = "greedy"         # "beam:<w>", "top_k:<k>", "top_p:<p>"
//! max_len = 16
//! prompt_len = 2
//! ```
//!
//! Every section and key is optional. The `seed` key inside `[pretrain]` and
//! `[warmstart]` is an offset added to the top-level seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::{DecodeConfig, Strategy};
use crate::error::{Error, Result};
use crate::steering::SteeringConfig;
use crate::strength::Aggregator;
use crate::toymodel::{SyntheticConfig, TokenId, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub pretrain_corpus: PathBuf,
    pub task_train: PathBuf,
    pub task_calib: PathBuf,
    pub task_test: PathBuf,
    pub theta_model: PathBuf,
    pub phi_model: PathBuf,
    pub report: PathBuf,
    pub generations: PathBuf,
    pub eval_summary: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            pretrain_corpus: "pretrain.txt".into(),
            task_train: "task_train.txt".into(),
            task_calib: "task_calib.txt".into(),
            task_test: "task_test.txt".into(),
            theta_model: "theta.nglm".into(),
            phi_model: "phi.nglm".into(),
            report: "calibration.json".into(),
            generations: "generations.txt".into(),
            eval_summary: "eval.json".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub aggregator: Aggregator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub strategy: Strategy,
    pub max_len: usize,
    /// Leading tokens of each test sequence used as the prompt.
    pub prompt_len: usize,
    pub stop_token: Option<TokenId>,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            max_len: 16,
            prompt_len: 2,
            stop_token: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub artifacts: PathBuf,
    pub task: SyntheticConfig,
    pub paths: Paths,
    pub pretrain: TrainConfig,
    pub warmstart: TrainConfig,
    pub steering: SteeringConfig,
    pub calibration: CalibrationSection,
    pub decode: DecodeSection,
    /// Directory the config was loaded from; relative paths hang off it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            artifacts: "artifacts".into(),
            task: SyntheticConfig::default(),
            paths: Paths::default(),
            pretrain: TrainConfig {
                learning_rate: 1.0,
                epochs: 20,
                seed: 0,
                l2: 0.0,
                batch_size: 16,
            },
            warmstart: TrainConfig {
                learning_rate: 0.5,
                epochs: 1,
                seed: 1,
                l2: 0.0,
                batch_size: 4,
            },
            steering: SteeringConfig::default(),
            calibration: CalibrationSection::default(),
            decode: DecodeSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error, section: &str| match e {
            Error::InvalidParameter(m) | Error::Config(m) => {
                Error::Config(format!("[{section}] {m}"))
            }
            other => other,
        };
        self.task.validate().map_err(|e| wrap(e, "task"))?;
        self.pretrain.validate().map_err(|e| wrap(e, "pretrain"))?;
        self.warmstart
            .validate()
            .map_err(|e| wrap(e, "warmstart"))?;
        self.steering.validate().map_err(|e| wrap(e, "steering"))?;
        self.decode
            .strategy
            .validate()
            .map_err(|e| wrap(e, "decode"))?;
        if let Some(t) = self.decode.stop_token {
            if t as usize >= self.task.vocab_size {
                return Err(Error::Config(format!(
                    "[decode] stop_token {t} outside vocabulary"
                )));
            }
        }
        if self.decode.prompt_len > self.task.sequence_len {
            return Err(Error::Config(
                "[decode] prompt_len exceeds task.sequence_len".into(),
            ));
        }
        Ok(())
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.base_dir.join(&self.artifacts)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.artifacts_dir().join(p)
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(self.pretrain.seed),
            ..self.pretrain
        }
    }

    pub fn warmstart_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(self.warmstart.seed),
            ..self.warmstart
        }
    }

    pub fn decode_config(&self, mu_bar: f64) -> DecodeConfig {
        DecodeConfig {
            strategy: self.decode.strategy,
            mu_bar,
            steering: self.steering,
            max_len: self.decode.max_len,
            seed: self.seed,
            stop_token: self.decode.stop_token,
        }
    }
}
