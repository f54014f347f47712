//! Discriminative node filtering, pooling, and graph logits.

use super::params::TeacherConfig;
use crate::error::{Error, Result};
use crate::numcore::{GradTape, Tensor2D, Var};

/// Indices of the `n` highest scores, best first; ties go to the lower index.
pub fn top_indices(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(n);
    idx
}

/// Scores patch nodes by cosine with `direction`, keeps the top
/// `⌈keep·P⌉`, sums them and normalizes. With `gate` and a strict subset kept,
/// each kept node is weighted by `1 + s_i`.
///
/// Returns the `1×d` pooled vector and the kept node indices.
pub fn filter_and_pool_var<'t>(
    tape: &'t GradTape,
    nodes: Var<'t>,
    direction: Var<'t>,
    keep: f64,
    gate: bool,
) -> Result<(Var<'t>, Vec<usize>)> {
    let (p, d) = nodes.shape();
    if p == 0 {
        return Err(Error::Shape("cannot pool an empty node set".into()));
    }
    let n = TeacherConfig { keep, ..Default::default() }.kept(p);
    let scores = nodes.l2_normalize_rows()?.matmul_nt(direction.l2_normalize_rows()?)?;
    let kept = top_indices(scores.value().data(), n);
    let selected = nodes.gather_rows(&kept)?;
    let weighted = if gate && n < p {
        let w = scores.gather_rows(&kept)?.add_scalar(1.0);
        selected.mul(w.matmul(tape.constant(Tensor2D::filled(1, d, 1.0)))?)?
    } else {
        selected
    };
    let pooled = tape.constant(Tensor2D::filled(1, n, 1.0)).matmul(weighted)?;
    Ok((pooled.l2_normalize_rows()?, kept))
}

/// Cosine between the pooled vector (`1×d`, unit) and each text node.
pub fn graph_logits_var<'t>(pooled: Var<'t>, text_nodes: Var<'t>) -> Result<Var<'t>> {
    pooled.matmul_nt(text_nodes.l2_normalize_rows()?)
}

pub fn filter_and_pool(
    nodes: &Tensor2D,
    direction: &[f64],
    keep: f64,
    gate: bool,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let tape = GradTape::new();
    let (f, kept) = filter_and_pool_var(
        &tape,
        tape.constant(nodes.clone()),
        tape.constant(Tensor2D::row_vector(direction)),
        keep,
        gate,
    )?;
    Ok((f.value().data().to_vec(), kept))
}

pub fn graph_logits(pooled: &[f64], text_nodes: &Tensor2D) -> Result<Vec<f64>> {
    let tape = GradTape::new();
    let out = graph_logits_var(tape.constant(Tensor2D::row_vector(pooled)), tape.constant(text_nodes.clone()))?;
    Ok(out.value().data().to_vec())
}
