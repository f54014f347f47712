//! Multi-head scaled dot-product attention with per-head source biases.

use std::rc::Rc;

use super::tensor::{softmax_in_place, Mask, Tensor2D};
use crate::error::{Error, Result};

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionSaved {
    pub heads: usize,
    /// Attention weights per head, each `nt×ns`.
    pub weights: Vec<Tensor2D>,
    pub mask: Option<Rc<Mask>>,
}

pub(crate) struct AttentionGrads {
    pub dq: Tensor2D,
    pub dk: Tensor2D,
    pub dv: Tensor2D,
    pub dbias: Tensor2D,
}

fn check(
    q: &Tensor2D,
    k: &Tensor2D,
    v: &Tensor2D,
    bias: Option<&Tensor2D>,
    heads: usize,
    mask: Option<&Mask>,
) -> Result<usize> {
    let d = q.cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape(format!("width {d} does not split into {heads} heads")));
    }
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(Error::Shape(format!(
            "attention operands q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != (heads, k.rows()) {
            return Err(Error::Shape(format!(
                "attention bias {:?}, expected {:?}",
                b.shape(),
                (heads, k.rows())
            )));
        }
    }
    if let Some(m) = mask {
        if m.shape() != (q.rows(), k.rows()) {
            return Err(Error::Shape(format!(
                "attention mask {:?}, expected {:?}",
                m.shape(),
                (q.rows(), k.rows())
            )));
        }
    }
    Ok(d / heads)
}

/// Computes `concat_h softmax(Q_h K_hᵀ/√dk + b_h) V_h` and the per-head
/// weights.
pub fn attention_forward(
    q: &Tensor2D,
    k: &Tensor2D,
    v: &Tensor2D,
    bias: Option<&Tensor2D>,
    heads: usize,
    mask: Option<Rc<Mask>>,
) -> Result<(Tensor2D, AttentionSaved)> {
    let dk = check(q, k, v, bias, heads, mask.as_deref())?;
    let (nt, ns) = (q.rows(), k.rows());
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Tensor2D::zeros(nt, q.cols());
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let off = h * dk;
        let mut w = Tensor2D::zeros(nt, ns);
        for t in 0..nt {
            let qrow = &q.row(t)[off..off + dk];
            let wrow = w.row_mut(t);
            for (s, slot) in wrow.iter_mut().enumerate() {
                let krow = &k.row(s)[off..off + dk];
                let mut e = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                if let Some(b) = bias {
                    e += b.get(h, s);
                }
                *slot = e;
            }
            softmax_in_place(wrow, mask.as_deref().map(|m| m.row(t)))?;
            let orow = &mut out.row_mut(t)[off..off + dk];
            for s in 0..ns {
                let a = w.get(t, s);
                if a == 0.0 {
                    continue;
                }
                for (o, vv) in orow.iter_mut().zip(&v.row(s)[off..off + dk]) {
                    *o += a * vv;
                }
            }
        }
        weights.push(w);
    }
    Ok((out, AttentionSaved { heads, weights, mask }))
}

pub(crate) fn attention_backward(
    q: &Tensor2D,
    k: &Tensor2D,
    v: &Tensor2D,
    saved: &AttentionSaved,
    g: &Tensor2D,
) -> Result<AttentionGrads> {
    let heads = saved.heads;
    let d = q.cols();
    let dk_w = d / heads;
    let (nt, ns) = (q.rows(), k.rows());
    let scale = 1.0 / (dk_w as f64).sqrt();
    let mut dq = Tensor2D::zeros(nt, d);
    let mut dk = Tensor2D::zeros(ns, d);
    let mut dv = Tensor2D::zeros(ns, d);
    let mut dbias = Tensor2D::zeros(heads, ns);
    let mut ds = vec![0.0; ns];
    for h in 0..heads {
        let off = h * dk_w;
        let w = &saved.weights[h];
        for t in 0..nt {
            let grow = &g.row(t)[off..off + dk_w];
            // dA[t, s] = g_t · v_s, then softmax backward.
            let mut dot_sum = 0.0;
            for (s, slot) in ds.iter_mut().enumerate() {
                let da: f64 = grow.iter().zip(&v.row(s)[off..off + dk_w]).map(|(a, b)| a * b).sum();
                *slot = da;
                dot_sum += da * w.get(t, s);
            }
            for s in 0..ns {
                let a = w.get(t, s);
                let dscore = a * (ds[s] - dot_sum);
                if a != 0.0 {
                    for (dvv, gv) in dv.row_mut(s)[off..off + dk_w].iter_mut().zip(grow) {
                        *dvv += a * gv;
                    }
                }
                if dscore == 0.0 {
                    continue;
                }
                let cur = dbias.get(h, s);
                dbias.set(h, s, cur + dscore);
                let ks = dscore * scale;
                for i in 0..dk_w {
                    let qv = q.get(t, off + i);
                    let kv = k.get(s, off + i);
                    let cq = dq.get(t, off + i);
                    dq.set(t, off + i, cq + ks * kv);
                    let ck = dk.get(s, off + i);
                    dk.set(s, off + i, ck + ks * qv);
                }
            }
        }
    }
    Ok(AttentionGrads { dq, dk, dv, dbias })
}
