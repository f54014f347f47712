//! Training logits and losses.
//!
//! The training logits mix three branches: zero-shot, cache, and the teacher's
//! graph cosines rescaled by `τ`. The total loss is cross-entropy on that
//! mixture plus a focal term that pushes the teacher branch on its own.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{focal_terms, log_sum_exp, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Cache branch weight `α`.
    pub alpha: f64,
    /// Graph branch weight `δ` inside the mixture.
    pub delta: f64,
    /// Focal term weight `λ`.
    pub lambda: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// Logit scale shared by the zero-shot and graph branches.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, delta: 1.0, lambda: 1.0, gamma: 2.0, tau: 100.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("delta", self.delta), ("lambda", self.lambda), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// True when neither loss term reaches the teacher.
    pub fn teacher_detached(&self) -> bool {
        self.delta == 0.0 && self.lambda == 0.0
    }
}

/// `l_zs + α·l_cache + δ·τ·l_graph`.
pub fn train_logits(l_zs: &[f64], l_cache: &[f64], l_graph: &[f64], w: &LossWeights) -> Result<Vec<f64>> {
    if l_zs.len() != l_cache.len() || l_zs.len() != l_graph.len() {
        return Err(Error::Shape(format!(
            "branch lengths differ: {}, {}, {}",
            l_zs.len(),
            l_cache.len(),
            l_graph.len()
        )));
    }
    Ok((0..l_zs.len()).map(|c| l_zs[c] + w.alpha * l_cache[c] + w.delta * w.tau * l_graph[c]).collect())
}

fn check_label(logits: &[f64], y: usize) -> Result<()> {
    if y >= logits.len() {
        return Err(Error::Contract(format!("label {y} out of range for {} classes", logits.len())));
    }
    Ok(())
}

pub fn cross_entropy(logits: &[f64], y: usize) -> Result<f64> {
    check_label(logits, y)?;
    Ok(log_sum_exp(logits) - logits[y])
}

/// `−(1−p_t)^γ·log p_t` with `p_t = softmax(τ·graph)_y`.
pub fn focal_loss(graph: &[f64], y: usize, gamma: f64, tau: f64) -> Result<f64> {
    check_label(graph, y)?;
    if !(gamma >= 0.0) {
        return Err(Error::Config(format!("focal gamma {gamma} must be >= 0")));
    }
    let scaled: Vec<f64> = graph.iter().map(|g| tau * g).collect();
    Ok(focal_terms(&scaled, y, gamma).0)
}

/// `cross_entropy(train_logits) + λ·focal_loss` for one example.
pub fn total_loss(l_zs: &[f64], l_cache: &[f64], l_graph: &[f64], y: usize, w: &LossWeights) -> Result<f64> {
    let mixed = train_logits(l_zs, l_cache, l_graph, w)?;
    Ok(cross_entropy(&mixed, y)? + w.lambda * focal_loss(l_graph, y, w.gamma, w.tau)?)
}

/// Batch-mean loss terms on the tape.
#[derive(Clone, Copy)]
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub ce: Var<'t>,
    /// `None` when the teacher is detached.
    pub focal: Option<Var<'t>>,
}

/// Tape form of [`total_loss`] averaged over a batch. `l_graph` is omitted
/// when the teacher does not run, which is only valid for `δ = λ = 0`.
pub fn total_loss_var<'t>(
    l_zs: Var<'t>,
    l_cache: Var<'t>,
    l_graph: Option<Var<'t>>,
    labels: &[usize],
    w: &LossWeights,
) -> Result<LossParts<'t>> {
    let mut mixed = l_zs.add(l_cache.scale(w.alpha))?;
    let Some(graph) = l_graph else {
        if !w.teacher_detached() {
            return Err(Error::Contract("graph logits required when delta or lambda is nonzero".into()));
        }
        let ce = mixed.cross_entropy(labels)?;
        return Ok(LossParts { total: ce, ce, focal: None });
    };
    mixed = mixed.add(graph.scale(w.delta * w.tau))?;
    let ce = mixed.cross_entropy(labels)?;
    let focal = graph.scale(w.tau).focal(labels, w.gamma)?;
    Ok(LossParts { total: ce.add(focal.scale(w.lambda))?, ce, focal: Some(focal) })
}
