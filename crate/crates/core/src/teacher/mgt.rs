//! Modality-aware graph transformer layers.
//!
//! Every target attends jointly over all of its incoming edges. A source's
//! key and value come from its own node type's projections and are then passed
//! through the edge relation's per-head adapters; the relation also adds a
//! per-head score bias and scales its messages by a positive gate.

use super::graph::GraphTopology;
use super::params::{MgtLayerParams, RelationParams, TypeParams};
use crate::error::{Error, Result};
use crate::numcore::{attention, concat_cols, concat_rows, GradTape, Tensor2D, Var, LN_EPS};

/// `H×(H·dk)` matrix that repeats each head's scalar across its columns.
fn head_expander(heads: usize, dk: usize) -> Tensor2D {
    Tensor2D::from_fn(heads, heads * dk, |h, c| if c / dk == h { 1.0 } else { 0.0 })
}

struct Relational<'t> {
    keys: Var<'t>,
    values: Var<'t>,
}

fn relate<'t>(
    tape: &'t GradTape,
    keys: Var<'t>,
    values: Var<'t>,
    rel: &RelationParams,
    heads: usize,
    expander: &Tensor2D,
) -> Result<Relational<'t>> {
    let gate = tape.param(&rel.rho).softplus().matmul(tape.constant(expander.clone()))?;
    Ok(Relational {
        keys: keys.block_diag_matmul(tape.param(&rel.wk), heads)?,
        values: values.block_diag_matmul(tape.param(&rel.wv), heads)?.mul_row(gate)?,
    })
}

/// `heads×n` matrix holding the relation's bias for each of `n` sources.
fn bias_block<'t>(tape: &'t GradTape, rel: &RelationParams, n: usize) -> Result<Var<'t>> {
    tape.param(&rel.bias).transpose().matmul(tape.constant(Tensor2D::filled(1, n, 1.0)))
}

fn type_output<'t>(tape: &'t GradTape, h: Var<'t>, message: Var<'t>, ty: &TypeParams) -> Result<Var<'t>> {
    let p = |t: &Tensor2D| tape.param(t);
    let ffn = message
        .matmul(p(&ty.wo))?
        .matmul(p(&ty.w1))?
        .add_row(p(&ty.b1))?
        .gelu()
        .matmul(p(&ty.w2))?
        .add_row(p(&ty.b2))?;
    h.add(ffn)?.layer_norm(p(&ty.ln_gamma), p(&ty.ln_beta), LN_EPS)
}

/// One layer over all nodes (`h` rows ordered as in `topo`).
pub fn mgt_layer_var<'t>(
    tape: &'t GradTape,
    h: Var<'t>,
    topo: &GraphTopology,
    layer: &MgtLayerParams,
    heads: usize,
) -> Result<Var<'t>> {
    let (np, nt) = (topo.num_patches(), topo.num_texts());
    let (rows, width) = h.shape();
    if rows != np + nt {
        return Err(Error::Shape(format!("{rows} node rows for a graph of {} nodes", np + nt)));
    }
    if heads == 0 || width % heads != 0 {
        return Err(Error::Shape(format!("width {width} does not split into {heads} heads")));
    }
    let expander = head_expander(heads, width / heads);
    let p = |t: &Tensor2D| tape.param(t);

    let hp = h.slice_rows(0, np)?;
    let patch_k = hp.matmul(p(&layer.patch.wk))?;
    let patch_v = hp.matmul(p(&layer.patch.wv))?;
    let pp = relate(tape, patch_k, patch_v, &layer.pp, heads, &expander)?;

    let ht = if nt > 0 { Some(h.slice_rows(np, np + nt)?) } else { None };
    let (keys, values, bias) = if let Some(ht) = ht {
        let text_k = ht.matmul(p(&layer.text.wk))?;
        let text_v = ht.matmul(p(&layer.text.wv))?;
        let tp = relate(tape, text_k, text_v, &layer.tp, heads, &expander)?;
        (
            concat_rows(&[pp.keys, tp.keys])?,
            concat_rows(&[pp.values, tp.values])?,
            concat_cols(&[bias_block(tape, &layer.pp, np)?, bias_block(tape, &layer.tp, nt)?])?,
        )
    } else {
        (pp.keys, pp.values, bias_block(tape, &layer.pp, np)?)
    };
    let q = hp.matmul(p(&layer.patch.wq))?;
    let message = attention(q, keys, values, Some(bias), heads, topo.patch_target_mask()?)?;
    let out_p = type_output(tape, hp, message, &layer.patch)?;
    let Some(ht) = ht else {
        return Ok(out_p);
    };

    let pt = relate(tape, patch_k, patch_v, &layer.pt, heads, &expander)?;
    let q = ht.matmul(p(&layer.text.wq))?;
    let bias = bias_block(tape, &layer.pt, np)?;
    let message = attention(q, pt.keys, pt.values, Some(bias), heads, topo.text_target_mask()?)?;
    let out_t = type_output(tape, ht, message, &layer.text)?;
    concat_rows(&[out_p, out_t])
}

/// Stacks `layers` over patch nodes `vis` and text nodes `text`. With no text
/// nodes in `topo`, `text` is returned untouched.
pub fn mgt_forward_var<'t>(
    tape: &'t GradTape,
    vis: Var<'t>,
    text: Var<'t>,
    topo: &GraphTopology,
    layers: &[MgtLayerParams],
    heads: usize,
) -> Result<(Var<'t>, Var<'t>)> {
    if layers.is_empty() {
        return Ok((vis, text));
    }
    let np = topo.num_patches();
    let with_text = topo.num_texts() > 0;
    let mut h = if with_text { concat_rows(&[vis, text])? } else { vis };
    for layer in layers {
        h = mgt_layer_var(tape, h, topo, layer, heads)?;
    }
    if with_text {
        Ok((h.slice_rows(0, np)?, h.slice_rows(np, np + topo.num_texts())?))
    } else {
        Ok((h, text))
    }
}

pub fn mgt_layer(h: &Tensor2D, topo: &GraphTopology, layer: &MgtLayerParams, heads: usize) -> Result<Tensor2D> {
    let tape = GradTape::new();
    let x = tape.constant(h.clone());
    Ok(mgt_layer_var(&tape, x, topo, layer, heads)?.value().as_ref().clone())
}

pub fn mgt_forward(
    vis: &Tensor2D,
    text: &Tensor2D,
    topo: &GraphTopology,
    layers: &[MgtLayerParams],
    heads: usize,
) -> Result<(Tensor2D, Tensor2D)> {
    let tape = GradTape::new();
    let (v, t) = mgt_forward_var(
        &tape,
        tape.constant(vis.clone()),
        tape.constant(text.clone()),
        topo,
        layers,
        heads,
    )?;
    Ok((v.value().as_ref().clone(), t.value().as_ref().clone()))
}
