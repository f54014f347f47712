//! The joint student/teacher training loop and evaluation.

use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{adamw_step, cosine_lr, AdamWState};
use crate::embedbank::{EmbeddingBank, Episode};
use crate::error::{Error, Result};
use crate::numcore::rng::{gaussian, stream, Stream};
use crate::numcore::{l2_normalize_rows, matmul_nt, GradTape, Gradients, Tensor2D};
use crate::objective::total_loss_var;
use crate::student::{accuracy, batch_test_logits, build_cache, cache_logits_var, CacheModel};
use crate::teacher::{teacher_forward_var, teacher_predict, TeacherParams};

/// Images per gradient chunk. Chunks run in parallel and their gradients are
/// summed in chunk order, so results do not depend on the thread count.
pub const CHUNK: usize = 8;

/// Summary `mode` for runs where the teacher never touches the loss.
pub const MODE_BASELINE: &str = "tip-adapter-f-equivalent";
pub const MODE_TOGA: &str = "toga";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub focal: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub seed: u64,
    pub shots: usize,
    /// Query accuracy through the inference path.
    pub accuracy: f64,
    /// Accuracy of the teacher's graph logits alone (diagnostic).
    pub teacher_accuracy: Option<f64>,
    /// Fraction of kept patch nodes that are planted foreground views.
    pub filter_precision: Option<f64>,
    pub config: TrainConfig,
    pub query_ids: Vec<usize>,
    pub query_logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub epochs: Vec<EpochRecord>,
    pub summary: Summary,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CacheModel,
    pub teacher: TeacherParams,
    pub metrics: Metrics,
}

/// Support inputs for one epoch: global features `B×D` and each image's
/// teacher views.
pub(crate) struct SupportBatch {
    pub globals: Tensor2D,
    pub images: Vec<Tensor2D>,
}

/// Gathers support features, optionally jittered by per-coordinate gaussian
/// noise of std `sigma` and re-normalized.
pub(crate) fn support_batch(
    bank: &EmbeddingBank,
    ids: &[usize],
    views: &[usize],
    jitter: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<SupportBatch> {
    let mut feats: Vec<Tensor2D> = ids.iter().map(|&i| bank.features(i).clone()).collect();
    if let Some((rng, sigma)) = jitter {
        for f in &mut feats {
            for v in f.data_mut() {
                *v += sigma * gaussian(rng);
            }
            *f = l2_normalize_rows(f)?;
        }
    }
    let d = bank.dim();
    let globals = Tensor2D::from_fn(ids.len(), d, |r, c| feats[r].get(0, c));
    let images = feats.iter().map(|f| f.gather_rows(views)).collect();
    Ok(SupportBatch { globals, images })
}

fn chunks(n: usize) -> Vec<Range<usize>> {
    (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK).min(n)).collect()
}

struct StepResult {
    loss: f64,
    ce: f64,
    focal: f64,
    grads: Vec<Tensor2D>,
}

fn grads_in_order(g: &Gradients, params: &[&Tensor2D]) -> Vec<Tensor2D> {
    params
        .iter()
        .map(|p| g.wrt(p).cloned().unwrap_or_else(|| Tensor2D::zeros(p.rows(), p.cols())))
        .collect()
}

struct LossInputs<'a> {
    prompts: &'a Tensor2D,
    keys: &'a Tensor2D,
    values: &'a Tensor2D,
    labels: &'a [usize],
    cfg: &'a TrainConfig,
}

fn chunk_step(
    adapter: &Tensor2D,
    teacher: Option<&TeacherParams>,
    inputs: &LossInputs,
    batch: &SupportBatch,
    range: Range<usize>,
) -> Result<StepResult> {
    let cfg = inputs.cfg;
    let total = inputs.labels.len() as f64;
    let frac = range.len() as f64 / total;
    let z = batch.globals.slice_rows(range.start, range.end);
    let tape = GradTape::new();
    let l_zs = tape.constant(matmul_nt(&z, inputs.prompts)?.scale(cfg.loss.tau));
    let l_cache = cache_logits_var(tape.constant(z), tape.param(adapter), inputs.keys, inputs.values, cfg.cache_beta)?;
    let l_graph = match teacher {
        Some(t) => Some(teacher_forward_var(&tape, t, inputs.prompts, &batch.images[range.clone()])?.logits),
        None => None,
    };
    let parts = total_loss_var(l_zs, l_cache, l_graph, &inputs.labels[range], &cfg.loss)?;
    let g = tape.backward(parts.total.scale(frac))?;
    let mut params = vec![adapter];
    if let Some(t) = teacher {
        params.extend(t.named_tensors().into_iter().map(|(_, p)| p));
    }
    Ok(StepResult {
        loss: frac * parts.total.value().item(),
        ce: frac * parts.ce.value().item(),
        focal: parts.focal.map_or(0.0, |f| frac * f.value().item()),
        grads: grads_in_order(&g, &params),
    })
}

fn full_step(
    adapter: &Tensor2D,
    teacher: Option<&TeacherParams>,
    inputs: &LossInputs,
    batch: &SupportBatch,
) -> Result<StepResult> {
    let parts = chunks(inputs.labels.len())
        .into_par_iter()
        .map(|r| chunk_step(adapter, teacher, inputs, batch, r))
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let mut acc = iter.next().ok_or_else(|| Error::Contract("empty support set".into()))?;
    for p in iter {
        acc.loss += p.loss;
        acc.ce += p.ce;
        acc.focal += p.focal;
        for (a, g) in acc.grads.iter_mut().zip(&p.grads) {
            a.add_assign(g);
        }
    }
    Ok(acc)
}

/// Trains the student (and, unless `δ = λ = 0`, the teacher) on the episode's
/// supports, then scores the queries through the inference path.
pub fn train(bank: &EmbeddingBank, episode: &Episode, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    episode.validate(bank)?;
    let views = cfg.views.indices(bank.patches_per_image())?;
    let (keys, values) = build_cache(bank, episode)?;
    let labels = episode.support_labels(bank);
    let inputs = LossInputs { prompts: bank.prompts(), keys: &keys, values: &values, labels: &labels, cfg };

    let attached = !cfg.loss.teacher_detached();
    let mut adapter = Tensor2D::identity(bank.dim());
    let mut teacher = TeacherParams::init(&cfg.teacher, bank.dim(), &mut stream(cfg.seed, Stream::TeacherInit))?;
    let mut shapes = vec![adapter.shape()];
    if attached {
        shapes.extend(teacher.named_tensors().iter().map(|(_, t)| t.shape()));
    }
    let mut state = AdamWState::new(&shapes);
    let mut jitter_rng = stream(cfg.seed, Stream::Jitter);
    let mut fixed = None;

    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr)?;
        let jittered;
        let batch = if cfg.jitter > 0.0 {
            jittered = support_batch(bank, &episode.support_ids, &views, Some((&mut jitter_rng, cfg.jitter)))?;
            &jittered
        } else {
            fixed.get_or_insert(support_batch(bank, &episode.support_ids, &views, None)?)
        };
        let step = match full_step(&adapter, attached.then_some(&teacher), &inputs, batch) {
            Err(Error::NonFinite(reason)) => return Err(Error::Divergence { epoch, reason }),
            other => other?,
        };
        if !step.loss.is_finite() {
            return Err(Error::Divergence { epoch, reason: format!("loss is {}", step.loss) });
        }
        if let Some(i) = step.grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch, reason: format!("non-finite gradient in parameter {i}") });
        }
        records.push(EpochRecord { epoch, loss: step.loss, ce: step.ce, focal: step.focal, lr });
        let mut params: Vec<&mut Tensor2D> = vec![&mut adapter];
        if attached {
            params.extend(teacher.tensors_mut());
        }
        adamw_step(&mut params, &step.grads, &mut state, lr, &cfg.adamw)?;
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch, reason: format!("parameter {i} became non-finite") });
        }
    }

    let model = CacheModel::new(keys, values, adapter, cfg.loss.alpha, cfg.cache_beta, cfg.loss.tau)?;
    let logits = query_logits(&model, bank, &episode.query_ids)?;
    let query_labels = episode.query_labels(bank);
    let (teacher_accuracy, filter_precision) = if attached {
        let diag = teacher_diagnostics(&teacher, bank, &episode.query_ids, &views)?;
        (Some(diag.0), diag.1)
    } else {
        (None, None)
    };
    let summary = Summary {
        mode: if attached { MODE_TOGA } else { MODE_BASELINE }.to_string(),
        seed: cfg.seed,
        shots: episode.shots,
        accuracy: accuracy(&logits, &query_labels),
        teacher_accuracy,
        filter_precision,
        config: cfg.clone(),
        query_ids: episode.query_ids.clone(),
        query_logits: (0..logits.rows()).map(|r| logits.row(r).to_vec()).collect(),
    };
    Ok(TrainOutcome { model, teacher, metrics: Metrics { epochs: records, summary } })
}

/// Teacher graph-logit accuracy and filter precision over `ids`.
pub fn teacher_diagnostics(
    teacher: &TeacherParams,
    bank: &EmbeddingBank,
    ids: &[usize],
    views: &[usize],
) -> Result<(f64, Option<f64>)> {
    if ids.is_empty() {
        return Err(Error::Contract("no images to diagnose".into()));
    }
    let batch = support_batch(bank, ids, views, None)?;
    let parts = chunks(ids.len())
        .into_par_iter()
        .map(|r| teacher_predict(teacher, bank.prompts(), &batch.images[r]))
        .collect::<Result<Vec<_>>>()?;
    let mut hits = 0usize;
    let mut precision = Some(0.0);
    let mut row = 0;
    for (logits, kept) in parts {
        for (i, k) in kept.iter().enumerate() {
            let id = ids[row];
            if logits.argmax_row(i) == bank.label(id) {
                hits += 1;
            }
            precision = match (precision, &bank.image(id).foreground) {
                (Some(acc), Some(fg)) => {
                    let found = k.iter().filter(|&&j| fg.contains(&(views[j] as u16))).count();
                    Some(acc + found as f64 / k.len() as f64)
                }
                _ => None,
            };
            row += 1;
        }
    }
    let n = ids.len() as f64;
    Ok((hits as f64 / n, precision.map(|p| p / n)))
}

/// Inference-path logits for `ids`, one row each.
pub fn query_logits(model: &CacheModel, bank: &EmbeddingBank, ids: &[usize]) -> Result<Tensor2D> {
    let z = Tensor2D::from_fn(ids.len(), bank.dim(), |r, c| bank.global(ids[r])[c]);
    batch_test_logits(model, bank.prompts(), &z)
}

/// Query accuracy of a standalone student; no teacher state is involved.
pub fn evaluate(model: &CacheModel, bank: &EmbeddingBank, episode: &Episode) -> Result<f64> {
    if episode.query_ids.is_empty() {
        return Err(Error::Contract("episode has no query images".into()));
    }
    let logits = query_logits(model, bank, &episode.query_ids)?;
    Ok(accuracy(&logits, &episode.query_labels(bank)))
}
