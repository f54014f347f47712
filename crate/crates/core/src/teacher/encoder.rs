//! Per-modality Transformer encoder over an image's patch set or the class
//! prompt set.

use super::params::UnimodalEncoder;
use crate::error::Result;
use crate::numcore::{attention, GradTape, Tensor2D, Var, LN_EPS};

/// Input projection followed by the encoder blocks; `x` is `n×D`.
pub fn encode_unimodal_var<'t>(
    tape: &'t GradTape,
    x: Var<'t>,
    enc: &UnimodalEncoder,
    heads: usize,
) -> Result<Var<'t>> {
    let p = |t: &Tensor2D| tape.param(t);
    let mut h = x.matmul(p(&enc.w_in))?.add_row(p(&enc.b_in))?;
    for b in &enc.blocks {
        let q = h.matmul(p(&b.wq))?;
        let k = h.matmul(p(&b.wk))?;
        let v = h.matmul(p(&b.wv))?;
        let z = attention(q, k, v, None, heads, None)?;
        h = h.add(z.matmul(p(&b.wo))?)?.layer_norm(p(&b.ln1_gamma), p(&b.ln1_beta), LN_EPS)?;
        let ffn = h.matmul(p(&b.w1))?.add_row(p(&b.b1))?.gelu().matmul(p(&b.w2))?.add_row(p(&b.b2))?;
        h = h.add(ffn)?.layer_norm(p(&b.ln2_gamma), p(&b.ln2_beta), LN_EPS)?;
    }
    Ok(h)
}

pub fn encode_unimodal(features: &Tensor2D, enc: &UnimodalEncoder, heads: usize) -> Result<Tensor2D> {
    let tape = GradTape::new();
    let x = tape.constant(features.clone());
    Ok(encode_unimodal_var(&tape, x, enc, heads)?.value().as_ref().clone())
}
