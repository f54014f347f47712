//! Training configuration.

use serde::{Deserialize, Serialize};

use super::optim::AdamWConfig;
use crate::embedbank::{multiscale_layout, ViewKind};
use crate::error::{Error, Result};
use crate::objective::LossWeights;
use crate::student::DEFAULT_BETA;
use crate::teacher::TeacherConfig;

/// Which crop views the teacher sees as patch nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSet {
    /// Every view in the bank, global included.
    Multiscale,
    /// Only the 2×2 grid of the 18-view layout.
    Grid2x2,
    /// Only the 3×3 grid of the 18-view layout.
    Grid3x3,
}

impl ViewSet {
    /// Bank row indices for this set given `m` views per image.
    pub fn indices(self, m: usize) -> Result<Vec<usize>> {
        let kind = match self {
            ViewSet::Multiscale => return Ok((0..m).collect()),
            ViewSet::Grid2x2 => ViewKind::Grid2x2,
            ViewSet::Grid3x3 => ViewKind::Grid3x3,
        };
        let layout = multiscale_layout();
        if m != layout.len() {
            return Err(Error::Config(format!(
                "grid view sets need the {}-view layout, bank has {m} views",
                layout.len()
            )));
        }
        Ok(layout.indices_of(kind))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub adamw: AdamWConfig,
    pub loss: LossWeights,
    /// Cache sharpness `β`.
    pub cache_beta: f64,
    pub teacher: TeacherConfig,
    pub views: ViewSet,
    pub seed: u64,
    /// Std of gaussian feature jitter applied each epoch; 0 disables it.
    pub jitter: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 100,
            adamw: AdamWConfig::default(),
            loss: LossWeights::default(),
            cache_beta: DEFAULT_BETA,
            teacher: TeacherConfig::default(),
            views: ViewSet::Multiscale,
            seed: 0,
            jitter: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.cache_beta > 0.0 && self.cache_beta.is_finite()) {
            return Err(Error::Config(format!("cache beta must be positive, got {}", self.cache_beta)));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Config(format!("jitter must be non-negative, got {}", self.jitter)));
        }
        self.loss.validate()?;
        self.teacher.validate()
    }

    /// Student-only configuration with the same optimizer settings.
    pub fn baseline(&self) -> Self {
        let mut cfg = self.clone();
        cfg.loss.delta = 0.0;
        cfg.loss.lambda = 0.0;
        cfg
    }
}
