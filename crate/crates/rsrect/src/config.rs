//! Run configuration: one TOML document, every field optional.
//!
//! Resolution order: built-in defaults, then the config file (the
//! `--config` flag, else the path in `RSRECT_CONFIG`), then command-line
//! flags. Angles are given in degrees and converted to radians here.

use std::fs;
use std::path::{Path, PathBuf};

use rsrect_core::train::{AdamConfig, LossWeights, PretrainConfig, TrainConfig};
use rsrect_core::MotionRanges;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "RSRECT_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Image side the network and dataset use.
    pub r: usize,
    pub seed: u64,
    /// Degree of the trajectory fit used for smoothing.
    pub degree: usize,
    pub motion: MotionSection,
    pub loss: LossSection,
    pub optimizer: OptimizerSection,
    pub train: TrainSection,
    pub pretrain: PretrainSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSection {
    pub max_tx_px: f64,
    pub max_rz_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub rec_mse: f64,
    pub reg_mse: f64,
    pub rec_edge: f64,
    pub reg_edge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub smoothing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub max_samples: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            r: 64,
            seed: 0,
            degree: train.degree,
            motion: MotionSection::default(),
            loss: LossSection::default(),
            optimizer: OptimizerSection::default(),
            train: TrainSection::default(),
            pretrain: PretrainSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl Default for MotionSection {
    fn default() -> Self {
        Self {
            max_tx_px: MotionRanges::DEFAULT_MAX_TX_PX,
            max_rz_deg: MotionRanges::DEFAULT_MAX_RZ_DEG,
        }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            rec_mse: w.rec_mse,
            reg_mse: w.reg_mse,
            rec_edge: w.rec_edge,
            reg_edge: w.reg_edge,
        }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            smoothing: t.smoothing,
        }
    }
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            epochs: p.epochs,
            max_samples: p.max_samples,
            batch_size: p.batch_size,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(path, e.message()))
    }

    /// Defaults overlaid with `explicit`, or else the file named by
    /// [`CONFIG_ENV`] when set and non-empty.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let env = std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(env) {
            Some(path) => {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Self::from_toml(&text, &path)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn ranges(&self) -> MotionRanges {
        MotionRanges::from_degrees(self.motion.max_tx_px, self.motion.max_rz_deg)
    }

    pub fn weights(&self) -> LossWeights {
        let l = &self.loss;
        LossWeights {
            rec_mse: l.rec_mse,
            reg_mse: l.reg_mse,
            rec_edge: l.rec_edge,
            reg_edge: l.reg_edge,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        let o = &self.optimizer;
        AdamConfig {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            weights: self.weights(),
            adam: self.adam(),
            smoothing: self.train.smoothing,
            degree: self.degree,
            seed: self.seed,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain.epochs,
            max_samples: self.pretrain.max_samples,
            batch_size: self.pretrain.batch_size,
            adam: self.adam(),
            seed: self.seed,
        }
    }

    /// Rejects settings no command can run with.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Usage(format!("config: {m}")));
        if self.r < 8 {
            return bad("r must be at least 8");
        }
        if !(2..=3).contains(&self.degree) {
            return bad("degree must be 2 or 3");
        }
        let m = &self.motion;
        if !(m.max_tx_px >= 0.0
            && m.max_tx_px.is_finite()
            && m.max_rz_deg >= 0.0
            && m.max_rz_deg.is_finite())
        {
            return bad("motion ranges must be finite and non-negative");
        }
        if self.train.batch_size == 0 || self.pretrain.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        self.weights().validate()?;
        self.adam().validate()?;
        Ok(())
    }
}
