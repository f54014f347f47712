//! The training-only graph teacher.
//!
//! For each image the patch views and the class prompts are enriched by
//! separate Transformer encoders, joined into one heterogeneous graph, passed
//! through the graph transformer, and the most prompt-like patch nodes are
//! pooled into a single vector that is scored against the text nodes.

mod encoder;
mod filter;
mod graph;
mod mgt;
mod params;

pub use encoder::{encode_unimodal, encode_unimodal_var};
pub use filter::{filter_and_pool, filter_and_pool_var, graph_logits, graph_logits_var, top_indices};
pub use graph::{build_graph, Edge, GraphTopology, NodeType, Relation};
pub use mgt::{mgt_forward, mgt_forward_var, mgt_layer, mgt_layer_var};
pub use params::{
    unit_gate_rho, EncoderBlock, MgtLayerParams, RelationParams, TeacherConfig, TeacherParams,
    TypeParams, UnimodalEncoder,
};

use crate::error::{Error, Result};
use crate::numcore::{concat_rows, GradTape, Tensor2D, Var};

/// Graph logits (raw cosines, `B×C`) for a batch of images plus, per image,
/// the patch rows the filter kept.
pub struct TeacherOutput<'t> {
    pub logits: Var<'t>,
    pub kept: Vec<Vec<usize>>,
}

/// Runs the full teacher branch on `images` (each `P×D`, views in layout
/// order) against the `C×D` prompts.
pub fn teacher_forward_var<'t>(
    tape: &'t GradTape,
    params: &TeacherParams,
    prompts: &Tensor2D,
    images: &[Tensor2D],
) -> Result<TeacherOutput<'t>> {
    let cfg = &params.config;
    let Some(first) = images.first() else {
        return Err(Error::Shape("teacher needs at least one image".into()));
    };
    let patches = first.rows();
    if images.iter().any(|im| im.shape() != first.shape()) {
        return Err(Error::Shape("images in a batch must share their view count".into()));
    }
    let text_u = encode_unimodal_var(tape, tape.constant(prompts.clone()), &params.text, cfg.heads)?;
    let graph_texts = if cfg.use_mgt && cfg.use_text_nodes { prompts.rows() } else { 0 };
    let topo = build_graph(patches, graph_texts);
    let layers: &[MgtLayerParams] = if cfg.use_mgt { &params.mgt } else { &[] };
    let direction = tape.param(&params.direction);

    let mut rows = Vec::with_capacity(images.len());
    let mut kept = Vec::with_capacity(images.len());
    for image in images {
        let vis_u = encode_unimodal_var(tape, tape.constant(image.clone()), &params.vis, cfg.heads)?;
        let (vis, text) = mgt_forward_var(tape, vis_u, text_u, &topo, layers, cfg.graph_heads)?;
        let (pooled, k) = filter_and_pool_var(tape, vis, direction, cfg.keep, cfg.gate_filter)?;
        rows.push(graph_logits_var(pooled, text)?);
        kept.push(k);
    }
    Ok(TeacherOutput { logits: concat_rows(&rows)?, kept })
}

/// Untracked teacher predictions: `B×C` cosines and kept indices.
pub fn teacher_predict(
    params: &TeacherParams,
    prompts: &Tensor2D,
    images: &[Tensor2D],
) -> Result<(Tensor2D, Vec<Vec<usize>>)> {
    let tape = GradTape::new();
    let out = teacher_forward_var(&tape, params, prompts, images)?;
    Ok((out.logits.value().as_ref().clone(), out.kept))
}
