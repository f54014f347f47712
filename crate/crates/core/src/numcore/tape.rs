//! Reverse-mode differentiation over [`Tensor2D`] values.
//!
//! A [`GradTape`] records every operation applied to its [`Var`]s in
//! evaluation order. [`GradTape::backward`] walks that record once in reverse
//! and returns the gradient of a scalar root with respect to every registered
//! parameter.
//!
//! Parameters are registered with [`GradTape::param`], which memoizes on the
//! address of the borrowed tensor: registering the same tensor twice yields the
//! same leaf, so gradients from every use accumulate in one place. The
//! resulting [`Gradients`] are looked up by the same tensor reference.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::attention::{attention_backward, attention_forward, AttentionSaved};
use super::tensor::{self, gelu_grad, matmul, matmul_nt, matmul_tn, sigmoid, Mask, Tensor2D};
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Gelu(usize),
    Softplus(usize),
    L2NormRows(usize),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
    },
    BlockDiag {
        x: usize,
        w: usize,
        heads: usize,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        bias: Option<usize>,
        saved: AttentionSaved,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    SumAll(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
    },
    Focal {
        logits: usize,
        labels: Vec<usize>,
        gamma: f64,
    },
}

struct Node {
    value: Rc<Tensor2D>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct GradTape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<usize, usize>>,
}

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t GradTape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value().shape())
    }
}

fn key(t: &Tensor2D) -> usize {
    t as *const Tensor2D as usize
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor2D, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor2D> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Registers `t` as a trainable leaf. Registering the same tensor again
    /// returns the existing leaf.
    pub fn param(&self, t: &Tensor2D) -> Var<'_> {
        if let Some(&id) = self.params.borrow().get(&key(t)) {
            return Var { tape: self, id };
        }
        let v = self.push(t.clone(), Op::Leaf, true);
        self.params.borrow_mut().insert(key(t), v.id);
        v
    }

    /// A value that gradients do not flow into.
    pub fn constant(&self, t: Tensor2D) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    /// Gradients of the scalar `root` with respect to every registered
    /// parameter. Each recorded node is visited at most once, in reverse
    /// evaluation order.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward root must be 1x1, got {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor2D>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor2D::scalar(1.0));
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            for (input, contribution) in vjp(&nodes, node, &g)? {
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        let params = self.params.borrow();
        let mut by_key = HashMap::with_capacity(params.len());
        for (&k, &id) in params.iter() {
            let g = if id <= root.id { grads[id].take() } else { None };
            let g = g.unwrap_or_else(|| {
                let (r, c) = nodes[id].value.shape();
                Tensor2D::zeros(r, c)
            });
            by_key.insert(k, g);
        }
        Ok(Gradients { by_key })
    }
}

/// Gradients of a scalar with respect to the tape's registered parameters.
#[derive(Debug, Default)]
pub struct Gradients {
    by_key: HashMap<usize, Tensor2D>,
}

impl Gradients {
    /// Gradient for a tensor that was registered with [`GradTape::param`].
    pub fn wrt(&self, param: &Tensor2D) -> Option<&Tensor2D> {
        self.by_key.get(&key(param))
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}

fn sum_rows(t: &Tensor2D) -> Tensor2D {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    Tensor2D::from_raw(1, t.cols(), out)
}

fn mul_row(x: &Tensor2D, row: &Tensor2D) -> Tensor2D {
    let mut out = x.clone();
    for r in 0..x.rows() {
        for (o, s) in out.row_mut(r).iter_mut().zip(row.row(0)) {
            *o *= s;
        }
    }
    out
}

fn vjp(nodes: &[Node], node: &Node, g: &Tensor2D) -> Result<Vec<(usize, Tensor2D)>> {
    let val = |i: usize| -> &Tensor2D { &nodes[i].value };
    let rg = |i: usize| nodes[i].requires_grad;
    let mut out = Vec::with_capacity(2);
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if rg(*a) {
                out.push((*a, matmul_nt(g, val(*b))?));
            }
            if rg(*b) {
                out.push((*b, matmul_tn(val(*a), g)?));
            }
        }
        Op::MatMulNt(a, b) => {
            if rg(*a) {
                out.push((*a, matmul(g, val(*b))?));
            }
            if rg(*b) {
                out.push((*b, matmul_tn(g, val(*a))?));
            }
        }
        Op::Transpose(x) => out.push((*x, g.transpose())),
        Op::Add(a, b) => {
            out.push((*a, g.clone()));
            out.push((*b, g.clone()));
        }
        Op::Sub(a, b) => {
            out.push((*a, g.clone()));
            out.push((*b, g.scale(-1.0)));
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                out.push((*a, g.zip_map(val(*b), |x, y| x * y)));
            }
            if rg(*b) {
                out.push((*b, g.zip_map(val(*a), |x, y| x * y)));
            }
        }
        Op::AddRow(x, r) => {
            out.push((*x, g.clone()));
            if rg(*r) {
                out.push((*r, sum_rows(g)));
            }
        }
        Op::MulRow(x, r) => {
            if rg(*x) {
                out.push((*x, mul_row(g, val(*r))));
            }
            if rg(*r) {
                out.push((*r, sum_rows(&g.zip_map(val(*x), |a, b| a * b))));
            }
        }
        Op::Scale(x, s) => out.push((*x, g.scale(*s))),
        Op::AddScalar(x) => out.push((*x, g.clone())),
        Op::Exp(x) => out.push((*x, g.zip_map(&node.value, |a, y| a * y))),
        Op::Gelu(x) => out.push((*x, g.zip_map(val(*x), |a, v| a * gelu_grad(v)))),
        Op::Softplus(x) => out.push((*x, g.zip_map(val(*x), |a, v| a * sigmoid(v)))),
        Op::L2NormRows(x) => {
            let xv = val(*x);
            let y = &node.value;
            let mut dx = Tensor2D::zeros(xv.rows(), xv.cols());
            for r in 0..xv.rows() {
                let n = tensor::norm(xv.row(r));
                let proj = tensor::dot(y.row(r), g.row(r));
                for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                    *d = (gv - yv * proj) / n;
                }
            }
            out.push((*x, dx));
        }
        Op::SoftmaxRows(x) => {
            let y = &node.value;
            let mut dx = Tensor2D::zeros(y.rows(), y.cols());
            for r in 0..y.rows() {
                let s = tensor::dot(y.row(r), g.row(r));
                for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                    *d = yv * (gv - s);
                }
            }
            out.push((*x, dx));
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let xv = val(*x);
            let gam = val(*gamma);
            let (rows, cols) = xv.shape();
            let mut dx = Tensor2D::zeros(rows, cols);
            let mut dgamma = vec![0.0; cols];
            let mut dbeta = vec![0.0; cols];
            let mut xhat = vec![0.0; cols];
            let mut dxhat = vec![0.0; cols];
            for r in 0..rows {
                let (mean, inv_std) = tensor::row_stats(xv.row(r), *eps);
                for c in 0..cols {
                    xhat[c] = (xv.get(r, c) - mean) * inv_std;
                    let gv = g.get(r, c);
                    dgamma[c] += gv * xhat[c];
                    dbeta[c] += gv;
                    dxhat[c] = gv * gam.get(0, c);
                }
                let m1 = dxhat.iter().sum::<f64>() / cols as f64;
                let m2 = tensor::dot(&dxhat, &xhat) / cols as f64;
                for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                    *d = inv_std * (dxhat[c] - m1 - xhat[c] * m2);
                }
            }
            if rg(*x) {
                out.push((*x, dx));
            }
            if rg(*gamma) {
                out.push((*gamma, Tensor2D::from_raw(1, cols, dgamma)));
            }
            if rg(*beta) {
                out.push((*beta, Tensor2D::from_raw(1, cols, dbeta)));
            }
        }
        Op::BlockDiag { x, w, heads } => {
            let (dx, dw) = block_diag_backward(val(*x), val(*w), *heads, g)?;
            if rg(*x) {
                out.push((*x, dx));
            }
            if rg(*w) {
                out.push((*w, dw));
            }
        }
        Op::Attention { q, k, v, bias, saved } => {
            let grads = attention_backward(val(*q), val(*k), val(*v), saved, g)?;
            if rg(*q) {
                out.push((*q, grads.dq));
            }
            if rg(*k) {
                out.push((*k, grads.dk));
            }
            if rg(*v) {
                out.push((*v, grads.dv));
            }
            if let Some(b) = bias {
                if rg(*b) {
                    out.push((*b, grads.dbias));
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut start = 0;
            for &p in parts {
                let n = val(p).rows();
                if rg(p) {
                    out.push((p, g.slice_rows(start, start + n)));
                }
                start += n;
            }
        }
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for &p in parts {
                let n = val(p).cols();
                if rg(p) {
                    out.push((p, Tensor2D::from_fn(g.rows(), n, |r, c| g.get(r, start + c))));
                }
                start += n;
            }
        }
        Op::GatherRows(x, idx) => {
            let xv = val(*x);
            let mut dx = Tensor2D::zeros(xv.rows(), xv.cols());
            for (k, &i) in idx.iter().enumerate() {
                for (d, gv) in dx.row_mut(i).iter_mut().zip(g.row(k)) {
                    *d += gv;
                }
            }
            out.push((*x, dx));
        }
        Op::SumAll(x) => {
            let (r, c) = val(*x).shape();
            out.push((*x, Tensor2D::filled(r, c, g.item())));
        }
        Op::CrossEntropy { logits, labels } => {
            let lv = val(*logits);
            let scale = g.item() / labels.len() as f64;
            let mut dl = tensor::softmax_rows(lv, None)?;
            for (r, &y) in labels.iter().enumerate() {
                dl.set(r, y, dl.get(r, y) - 1.0);
            }
            out.push((*logits, dl.scale(scale)));
        }
        Op::Focal { logits, labels, gamma } => {
            let lv = val(*logits);
            let scale = g.item() / labels.len() as f64;
            let probs = tensor::softmax_rows(lv, None)?;
            let mut dl = Tensor2D::zeros(lv.rows(), lv.cols());
            for (r, &y) in labels.iter().enumerate() {
                let (_, dloss_dlogp) = focal_terms(lv.row(r), y, *gamma);
                for (c, d) in dl.row_mut(r).iter_mut().enumerate() {
                    let onehot = if c == y { 1.0 } else { 0.0 };
                    *d = scale * dloss_dlogp * (onehot - probs.get(r, c));
                }
            }
            out.push((*logits, dl));
        }
    }
    Ok(out)
}

/// Per-row focal loss value and its derivative with respect to `log p_y`.
pub(crate) fn focal_terms(row: &[f64], y: usize, gamma: f64) -> (f64, f64) {
    let logp = row[y] - tensor::log_sum_exp(row);
    let p = logp.exp();
    let q = -logp.exp_m1();
    let qg = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    let loss = -qg * logp;
    let second = if q > 0.0 && gamma != 0.0 {
        gamma * q.powf(gamma - 1.0) * p * logp
    } else {
        0.0
    };
    (loss, -qg + second)
}

fn block_diag_forward(x: &Tensor2D, w: &Tensor2D, heads: usize) -> Result<Tensor2D> {
    let (n, d) = x.shape();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape(format!("{d} columns do not split into {heads} heads")));
    }
    let dk = d / heads;
    if w.shape() != (heads * dk, dk) {
        return Err(Error::Shape(format!(
            "block weights {:?}, expected {:?}",
            w.shape(),
            (heads * dk, dk)
        )));
    }
    let mut out = Tensor2D::zeros(n, d);
    for r in 0..n {
        for h in 0..heads {
            for j in 0..dk {
                let mut acc = 0.0;
                for i in 0..dk {
                    acc += x.get(r, h * dk + i) * w.get(h * dk + i, j);
                }
                out.set(r, h * dk + j, acc);
            }
        }
    }
    Ok(out)
}

fn block_diag_backward(
    x: &Tensor2D,
    w: &Tensor2D,
    heads: usize,
    g: &Tensor2D,
) -> Result<(Tensor2D, Tensor2D)> {
    let (n, d) = x.shape();
    let dk = d / heads;
    let mut dx = Tensor2D::zeros(n, d);
    let mut dw = Tensor2D::zeros(w.rows(), w.cols());
    for r in 0..n {
        for h in 0..heads {
            for i in 0..dk {
                let xv = x.get(r, h * dk + i);
                let mut acc = 0.0;
                for j in 0..dk {
                    let gv = g.get(r, h * dk + j);
                    acc += gv * w.get(h * dk + i, j);
                    let cur = dw.get(h * dk + i, j);
                    dw.set(h * dk + i, j, cur + xv * gv);
                }
                dx.set(r, h * dk + i, acc);
            }
        }
    }
    Ok((dx, dw))
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t GradTape {
        self.tape
    }

    /// Current value.
    pub fn value(&self) -> Rc<Tensor2D> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn binary(&self, other: Var<'t>, value: Tensor2D, op: Op) -> Var<'t> {
        self.same_tape(&other);
        let rg = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    fn unary(&self, value: Tensor2D, op: Op) -> Var<'t> {
        let rg = self.tape.needs(&[self.id]);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = matmul(&self.value(), &other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = matmul_nt(&self.value(), &other.value())?;
        Ok(self.binary(other, v, Op::MatMulNt(self.id, other.id)))
    }

    pub fn transpose(&self) -> Var<'t> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    fn check_same(&self, other: &Var<'t>, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same(&other, "add")?;
        let v = self.value().add(&other.value());
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same(&other, "sub")?;
        let v = self.value().sub(&other.value());
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same(&other, "mul")?;
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// Adds the 1×cols `row` to every row.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let r = row.value();
        if r.shape() != (1, x.cols()) {
            return Err(Error::Shape(format!("add_row: {:?} onto {:?}", r.shape(), x.shape())));
        }
        let mut v = (*x).clone();
        for i in 0..x.rows() {
            for (o, b) in v.row_mut(i).iter_mut().zip(r.row(0)) {
                *o += b;
            }
        }
        Ok(self.binary(row, v, Op::AddRow(self.id, row.id)))
    }

    /// Multiplies every row elementwise by the 1×cols `row`.
    pub fn mul_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let r = row.value();
        if r.shape() != (1, x.cols()) {
            return Err(Error::Shape(format!("mul_row: {:?} onto {:?}", r.shape(), x.shape())));
        }
        let v = mul_row(&x, &r);
        Ok(self.binary(row, v, Op::MulRow(self.id, row.id)))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        let v = self.value().scale(s);
        self.unary(v, Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        let v = self.value().map(|x| x + s);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn gelu(&self) -> Var<'t> {
        let v = self.value().map(tensor::gelu);
        self.unary(v, Op::Gelu(self.id))
    }

    pub fn softplus(&self) -> Var<'t> {
        let v = self.value().map(tensor::softplus);
        self.unary(v, Op::Softplus(self.id))
    }

    /// Scales each row to unit L2 norm.
    pub fn l2_normalize_rows(&self) -> Result<Var<'t>> {
        let v = tensor::l2_normalize_rows(&self.value())?;
        Ok(self.unary(v, Op::L2NormRows(self.id)))
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let v = tensor::softmax_rows(&self.value(), None)?;
        Ok(self.unary(v, Op::SoftmaxRows(self.id)))
    }

    /// Row-wise layer norm with 1×cols affine parameters.
    pub fn layer_norm(&self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let gv = gamma.value();
        let bv = beta.value();
        let v = tensor::layer_norm(&self.value(), gv.data(), bv.data(), eps)?;
        let rg = self.tape.needs(&[self.id, gamma.id, beta.id]);
        Ok(self.tape.push(v, Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, eps }, rg))
    }

    /// Applies a separate `dk×dk` matrix to each of `heads` column blocks.
    /// `w` stacks the blocks vertically, `(heads·dk)×dk`.
    pub fn block_diag_matmul(&self, w: Var<'t>, heads: usize) -> Result<Var<'t>> {
        let v = block_diag_forward(&self.value(), &w.value(), heads)?;
        Ok(self.binary(w, v, Op::BlockDiag { x: self.id, w: w.id, heads }))
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::Shape(format!("row {bad} out of {}", x.rows())));
        }
        let v = x.gather_rows(idx);
        Ok(self.unary(v, Op::GatherRows(self.id, idx.to_vec())))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t>> {
        self.gather_rows(&(start..end).collect::<Vec<_>>())
    }

    pub fn sum(&self) -> Var<'t> {
        let v = Tensor2D::scalar(self.value().sum());
        self.unary(v, Op::SumAll(self.id))
    }

    /// Mean cross-entropy of each logit row against its label.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        check_labels(&x, labels)?;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| tensor::log_sum_exp(x.row(r)) - x.get(r, y))
            .sum();
        let v = Tensor2D::scalar(total / labels.len() as f64);
        Ok(self.unary(v, Op::CrossEntropy { logits: self.id, labels: labels.to_vec() }))
    }

    /// Mean focal loss `-(1-p_y)^gamma · log p_y` over logit rows.
    pub fn focal(&self, labels: &[usize], gamma: f64) -> Result<Var<'t>> {
        if !(gamma >= 0.0) {
            return Err(Error::Config(format!("focal gamma {gamma} must be >= 0")));
        }
        let x = self.value();
        check_labels(&x, labels)?;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| focal_terms(x.row(r), y, gamma).0)
            .sum();
        let v = Tensor2D::scalar(total / labels.len() as f64);
        Ok(self.unary(v, Op::Focal { logits: self.id, labels: labels.to_vec(), gamma }))
    }
}

fn check_labels(x: &Tensor2D, labels: &[usize]) -> Result<()> {
    if labels.len() != x.rows() || labels.is_empty() {
        return Err(Error::Shape(format!("{} labels for {} logit rows", labels.len(), x.rows())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= x.cols()) {
        return Err(Error::Contract(format!("label {y} out of range for {} classes", x.cols())));
    }
    Ok(())
}

/// Stacks vars vertically.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
    let values: Vec<_> = parts.iter().map(Var::value).collect();
    let refs: Vec<&Tensor2D> = values.iter().map(|v| v.as_ref()).collect();
    let v = Tensor2D::concat_rows(&refs)?;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = first.tape.needs(&ids);
    Ok(first.tape.push(v, Op::ConcatRows(ids), rg))
}

/// Stacks vars side by side.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
    let values: Vec<_> = parts.iter().map(Var::value).collect();
    let refs: Vec<&Tensor2D> = values.iter().map(|v| v.as_ref()).collect();
    let v = Tensor2D::concat_cols(&refs)?;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = first.tape.needs(&ids);
    Ok(first.tape.push(v, Op::ConcatCols(ids), rg))
}

/// Multi-head scaled dot-product attention recorded on the tape.
///
/// `q` is `nt×d`, `k` and `v` are `ns×d`; the `d` columns split into `heads`
/// equal blocks. `bias`, when present, is `heads×ns` and is added to every
/// score of the matching head and source column. `mask` hides
/// (target, source) pairs.
pub fn attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    bias: Option<Var<'t>>,
    heads: usize,
    mask: Option<Rc<Mask>>,
) -> Result<Var<'t>> {
    let bias_val = bias.map(|b| b.value());
    let (out, saved) = attention_forward(
        &q.value(),
        &k.value(),
        &v.value(),
        bias_val.as_deref(),
        heads,
        mask,
    )?;
    let mut ids = vec![q.id, k.id, v.id];
    if let Some(b) = bias {
        ids.push(b.id);
    }
    let rg = q.tape.needs(&ids);
    Ok(q.tape.push(
        out,
        Op::Attention { q: q.id, k: k.id, v: v.id, bias: bias.map(|b| b.id), saved },
        rg,
    ))
}
