//! Grid search over training hyperparameters on a validation split.
//!
//! Candidates are trained on the episode's supports and scored on the
//! support-pool images that were not drawn as supports. Query images are
//! never looked at.

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::train;
use crate::embedbank::{EmbeddingBank, Episode};
use crate::error::{Error, Result};

/// Candidate values per knob; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lr: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            alpha: vec![1.0, 3.0, 10.0],
            beta: vec![1.0, 5.5],
            delta: Vec::new(),
            lambda: Vec::new(),
            gamma: Vec::new(),
            lr: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub config: TrainConfig,
    pub validation_accuracy: f64,
    /// Every candidate with its validation accuracy, in grid order.
    pub trials: Vec<(TrainConfig, f64)>,
}

fn or_base(values: &[f64], base: f64) -> Vec<f64> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SearchGrid {
    /// All candidate configurations, `alpha` varying slowest.
    pub fn candidates(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &alpha in &or_base(&self.alpha, base.loss.alpha) {
            for &beta in &or_base(&self.beta, base.cache_beta) {
                for &delta in &or_base(&self.delta, base.loss.delta) {
                    for &lambda in &or_base(&self.lambda, base.loss.lambda) {
                        for &gamma in &or_base(&self.gamma, base.loss.gamma) {
                            for &lr in &or_base(&self.lr, base.lr) {
                                let mut c = base.clone();
                                c.loss.alpha = alpha;
                                c.cache_beta = beta;
                                c.loss.delta = delta;
                                c.loss.lambda = lambda;
                                c.loss.gamma = gamma;
                                c.lr = lr;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Picks the candidate with the best validation accuracy; ties go to the
/// earlier candidate.
pub fn select_hyperparameters(
    bank: &EmbeddingBank,
    episode: &Episode,
    base: &TrainConfig,
    grid: &SearchGrid,
) -> Result<SearchResult> {
    let validation = Episode {
        shots: episode.shots,
        support_ids: episode.support_ids.clone(),
        query_ids: episode.validation_ids(bank),
    };
    if validation.query_ids.is_empty() {
        return Err(Error::Sampling("no support-pool images left over for validation".into()));
    }
    let mut trials = Vec::new();
    for cfg in grid.candidates(base) {
        let acc = train(bank, &validation, &cfg)?.metrics.summary.accuracy;
        trials.push((cfg, acc));
    }
    let mut best = 0;
    for (i, (_, acc)) in trials.iter().enumerate() {
        if *acc > trials[best].1 {
            best = i;
        }
    }
    Ok(SearchResult { config: trials[best].0.clone(), validation_accuracy: trials[best].1, trials })
}
