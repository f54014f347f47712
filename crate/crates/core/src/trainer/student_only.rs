//! Student-only trainer with hand-derived gradients.
//!
//! Trains only the adapter on cross-entropy over `zero-shot + α·cache`, the
//! Tip-Adapter-F style objective, without the tape. It exists as an
//! independent reference for the reduction `δ = λ = 0`.

use super::config::TrainConfig;
use super::optim::{adamw_step, cosine_lr, AdamWState};
use super::train::EpochRecord;
use crate::embedbank::{EmbeddingBank, Episode};
use crate::error::{Error, Result};
use crate::numcore::{dot, log_sum_exp, norm, Tensor2D};
use crate::student::{build_cache, CacheModel};

/// Mean loss and adapter gradient for supports `z` (rows) with `labels`.
fn loss_and_grad(
    adapter: &Tensor2D,
    z: &Tensor2D,
    labels: &[usize],
    prompts: &Tensor2D,
    keys: &Tensor2D,
    values: &Tensor2D,
    cfg: &TrainConfig,
) -> (f64, Tensor2D) {
    let (b, d) = z.shape();
    let c = prompts.rows();
    let (alpha, beta, tau) = (cfg.loss.alpha, cfg.cache_beta, cfg.loss.tau);
    let mut loss = 0.0;
    let mut grad = Tensor2D::zeros(d, d);
    for i in 0..b {
        let zi = z.row(i);
        let a: Vec<f64> = (0..d).map(|r| dot(adapter.row(r), zi)).collect();
        let na = norm(&a);
        let u: Vec<f64> = a.iter().map(|v| v / na).collect();
        let e: Vec<f64> = (0..keys.rows()).map(|j| (beta * (dot(&u, keys.row(j)) - 1.0)).exp()).collect();
        let logits: Vec<f64> = (0..c)
            .map(|k| {
                let cache: f64 = (0..keys.rows()).map(|j| e[j] * values.get(j, k)).sum();
                tau * dot(zi, prompts.row(k)) + alpha * cache
            })
            .collect();
        let lse = log_sum_exp(&logits);
        loss += lse - logits[labels[i]];

        // d loss / d logits, averaged over the batch
        let dl: Vec<f64> = (0..c)
            .map(|k| ((logits[k] - lse).exp() - if k == labels[i] { 1.0 } else { 0.0 }) / b as f64)
            .collect();
        let mut du = vec![0.0; d];
        for j in 0..keys.rows() {
            let de: f64 = (0..c).map(|k| alpha * dl[k] * values.get(j, k)).sum();
            let ds = de * beta * e[j];
            for (g, kv) in du.iter_mut().zip(keys.row(j)) {
                *g += ds * kv;
            }
        }
        // through u = a/|a|
        let proj = dot(&du, &u);
        for r in 0..d {
            let da = (du[r] - proj * u[r]) / na;
            for (k, zk) in zi.iter().enumerate() {
                grad.set(r, k, grad.get(r, k) + da * zk);
            }
        }
    }
    (loss / b as f64, grad)
}

/// Trains only the adapter; returns the model and per-epoch records (focal
/// always 0). Feature jitter is not supported here.
pub fn train_student_only(
    bank: &EmbeddingBank,
    episode: &Episode,
    cfg: &TrainConfig,
) -> Result<(CacheModel, Vec<EpochRecord>)> {
    cfg.validate()?;
    if cfg.jitter > 0.0 {
        return Err(Error::Config("the student-only reference trainer does not jitter features".into()));
    }
    let (keys, values) = build_cache(bank, episode)?;
    let labels = episode.support_labels(bank);
    let z = keys.clone();
    let mut adapter = Tensor2D::identity(bank.dim());
    let mut state = AdamWState::new(&[adapter.shape()]);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr)?;
        let (loss, grad) = loss_and_grad(&adapter, &z, &labels, bank.prompts(), &keys, &values, cfg);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, reason: format!("loss is {loss}") });
        }
        records.push(EpochRecord { epoch, loss, ce: loss, focal: 0.0, lr });
        adamw_step(&mut [&mut adapter], &[grad], &mut state, lr, &cfg.adamw)?;
    }
    let model = CacheModel::new(keys, values, adapter, cfg.loss.alpha, cfg.cache_beta, cfg.loss.tau)?;
    Ok((model, records))
}
