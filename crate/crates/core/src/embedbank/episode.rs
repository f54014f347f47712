//! K-shot episodes drawn from a bank's support pool.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::bank::{EmbeddingBank, Split};
use crate::error::{Error, Result};
use crate::numcore::rng::{stream, Stream};

/// Support ids are grouped by class (class 0 first), `shots` per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub shots: usize,
    pub support_ids: Vec<usize>,
    pub query_ids: Vec<usize>,
}

impl Episode {
    pub fn support_labels(&self, bank: &EmbeddingBank) -> Vec<usize> {
        self.support_ids.iter().map(|&i| bank.label(i)).collect()
    }

    pub fn query_labels(&self, bank: &EmbeddingBank) -> Vec<usize> {
        self.query_ids.iter().map(|&i| bank.label(i)).collect()
    }

    /// Pool images not used as supports; used for hyperparameter selection so
    /// that queries are never touched before the final evaluation.
    pub fn validation_ids(&self, bank: &EmbeddingBank) -> Vec<usize> {
        bank.ids_with_split(Split::SupportPool)
            .into_iter()
            .filter(|i| !self.support_ids.contains(i))
            .collect()
    }

    pub fn validate(&self, bank: &EmbeddingBank) -> Result<()> {
        let n = bank.num_images();
        if self.support_ids.len() != self.shots * bank.num_classes() {
            return Err(Error::Sampling("support count does not match shots × classes".into()));
        }
        let mut counts = vec![0usize; bank.num_classes()];
        for &id in &self.support_ids {
            if id >= n {
                return Err(Error::Sampling(format!("support id {id} out of range")));
            }
            counts[bank.label(id)] += 1;
        }
        if counts.iter().any(|&k| k != self.shots) {
            return Err(Error::Sampling("supports are not balanced across classes".into()));
        }
        if self.query_ids.iter().any(|&q| q >= n || self.support_ids.contains(&q)) {
            return Err(Error::Sampling("query ids overlap supports or are out of range".into()));
        }
        Ok(())
    }
}

/// Draws `shots` pool images per class; queries are every query-tagged image.
pub fn sample_episode(bank: &EmbeddingBank, shots: usize, seed: u64) -> Result<Episode> {
    if shots == 0 {
        return Err(Error::Sampling("shots must be positive".into()));
    }
    let mut rng = stream(seed, Stream::Episode);
    let pool = bank.ids_with_split(Split::SupportPool);
    let mut support_ids = Vec::with_capacity(shots * bank.num_classes());
    for c in 0..bank.num_classes() {
        let mut ids: Vec<usize> = pool.iter().copied().filter(|&i| bank.label(i) == c).collect();
        if ids.len() < shots {
            return Err(Error::Sampling(format!(
                "class {c} has {} support-pool images, need {shots}",
                ids.len()
            )));
        }
        ids.shuffle(&mut rng);
        support_ids.extend_from_slice(&ids[..shots]);
    }
    Ok(Episode { shots, support_ids, query_ids: bank.query_ids() })
}
