//! Teacher configuration, parameter containers, and initialization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::rng::{gaussian_vec, uniform_tensor};
use crate::numcore::{l2_normalize, Tensor2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    /// Hidden width `d_h`.
    pub hidden: usize,
    /// Unimodal encoder depth `L` (0 keeps only the input projection).
    pub layers: usize,
    pub heads: usize,
    /// Graph transformer depth `L_G`.
    pub graph_layers: usize,
    pub graph_heads: usize,
    /// Fraction of patch nodes kept by the filter.
    pub keep: f64,
    /// When false the graph transformer is skipped entirely.
    pub use_mgt: bool,
    /// When false the graph has no text nodes and the graph logits compare
    /// against the unimodal text encodings.
    pub use_text_nodes: bool,
    /// Weight kept nodes by `1 + s_i` so the filter direction receives
    /// gradient. Has no effect when every node is kept.
    pub gate_filter: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 3,
            heads: 16,
            graph_layers: 3,
            graph_heads: 16,
            keep: 0.5,
            use_mgt: true,
            use_text_nodes: true,
            gate_filter: true,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden == 0 {
            return bad("teacher hidden width must be positive".into());
        }
        for (name, h) in [("heads", self.heads), ("graph_heads", self.graph_heads)] {
            if h == 0 || self.hidden % h != 0 {
                return bad(format!("{name}={h} must divide hidden width {}", self.hidden));
            }
        }
        if !(self.keep > 0.0 && self.keep <= 1.0) {
            return bad(format!("keep fraction must be in (0, 1], got {}", self.keep));
        }
        Ok(())
    }

    /// Number of nodes kept out of `p`.
    pub fn kept(&self, p: usize) -> usize {
        ((self.keep * p as f64).ceil() as usize).clamp(1, p.max(1))
    }
}

/// One post-norm Transformer block: attention, residual + LN, FFN,
/// residual + LN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
    pub w1: Tensor2D,
    pub b1: Tensor2D,
    pub w2: Tensor2D,
    pub b2: Tensor2D,
    pub ln1_gamma: Tensor2D,
    pub ln1_beta: Tensor2D,
    pub ln2_gamma: Tensor2D,
    pub ln2_beta: Tensor2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnimodalEncoder {
    pub w_in: Tensor2D,
    pub b_in: Tensor2D,
    pub blocks: Vec<EncoderBlock>,
}

/// Per-node-type projections of one graph layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeParams {
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
    pub w1: Tensor2D,
    pub b1: Tensor2D,
    pub w2: Tensor2D,
    pub b2: Tensor2D,
    pub ln_gamma: Tensor2D,
    pub ln_beta: Tensor2D,
}

/// Per-relation adapters (`heads` stacked `dk×dk` blocks), score bias and
/// gate pre-activation, each `1×heads`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationParams {
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub bias: Tensor2D,
    pub rho: Tensor2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgtLayerParams {
    pub patch: TypeParams,
    pub text: TypeParams,
    pub pp: RelationParams,
    pub pt: RelationParams,
    pub tp: RelationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherParams {
    pub config: TeacherConfig,
    pub vis: UnimodalEncoder,
    pub text: UnimodalEncoder,
    pub mgt: Vec<MgtLayerParams>,
    /// Filter direction `p`, `1×d_h`.
    pub direction: Tensor2D,
}

/// `softplus⁻¹(1)`, so untrained gates equal one.
pub fn unit_gate_rho() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

fn linear(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor2D {
    uniform_tensor(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}

fn stacked_identity(heads: usize, dk: usize) -> Tensor2D {
    Tensor2D::from_fn(heads * dk, dk, |r, c| if r % dk == c { 1.0 } else { 0.0 })
}

impl EncoderBlock {
    fn init(rng: &mut impl Rng, d: usize) -> Self {
        Self {
            wq: linear(rng, d, d),
            wk: linear(rng, d, d),
            wv: linear(rng, d, d),
            wo: linear(rng, d, d),
            w1: linear(rng, d, 2 * d),
            b1: Tensor2D::zeros(1, 2 * d),
            w2: linear(rng, 2 * d, d),
            b2: Tensor2D::zeros(1, d),
            ln1_gamma: Tensor2D::filled(1, d, 1.0),
            ln1_beta: Tensor2D::zeros(1, d),
            ln2_gamma: Tensor2D::filled(1, d, 1.0),
            ln2_beta: Tensor2D::zeros(1, d),
        }
    }
}

impl UnimodalEncoder {
    pub fn init(rng: &mut impl Rng, input: usize, hidden: usize, layers: usize) -> Self {
        Self {
            w_in: linear(rng, input, hidden),
            b_in: Tensor2D::zeros(1, hidden),
            blocks: (0..layers).map(|_| EncoderBlock::init(rng, hidden)).collect(),
        }
    }
}

impl TypeParams {
    fn init(rng: &mut impl Rng, d: usize) -> Self {
        Self {
            wq: linear(rng, d, d),
            wk: linear(rng, d, d),
            wv: linear(rng, d, d),
            wo: linear(rng, d, d),
            w1: linear(rng, d, 2 * d),
            b1: Tensor2D::zeros(1, 2 * d),
            w2: linear(rng, 2 * d, d),
            b2: Tensor2D::zeros(1, d),
            ln_gamma: Tensor2D::filled(1, d, 1.0),
            ln_beta: Tensor2D::zeros(1, d),
        }
    }
}

impl RelationParams {
    pub fn init(heads: usize, dk: usize) -> Self {
        Self {
            wk: stacked_identity(heads, dk),
            wv: stacked_identity(heads, dk),
            bias: Tensor2D::zeros(1, heads),
            rho: Tensor2D::filled(1, heads, unit_gate_rho()),
        }
    }
}

impl MgtLayerParams {
    pub fn init(rng: &mut impl Rng, d: usize, heads: usize) -> Self {
        let dk = d / heads;
        Self {
            patch: TypeParams::init(rng, d),
            text: TypeParams::init(rng, d),
            pp: RelationParams::init(heads, dk),
            pt: RelationParams::init(heads, dk),
            tp: RelationParams::init(heads, dk),
        }
    }
}

impl TeacherParams {
    /// Draws fresh parameters for embeddings of width `input`.
    pub fn init(config: &TeacherConfig, input: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let vis = UnimodalEncoder::init(rng, input, d, config.layers);
        let text = UnimodalEncoder::init(rng, input, d, config.layers);
        let mgt = (0..config.graph_layers).map(|_| MgtLayerParams::init(rng, d, config.graph_heads)).collect();
        let direction = Tensor2D::row_vector(&l2_normalize(&gaussian_vec(rng, d))?);
        Ok(Self { config: config.clone(), vis, text, mgt, direction })
    }

    pub fn input_dim(&self) -> usize {
        self.vis.w_in.rows()
    }

    /// Every trainable tensor with a stable dotted name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor2D)> {
        let mut out = Vec::new();
        for (tag, enc) in [("vis", &self.vis), ("text", &self.text)] {
            out.push((format!("{tag}.w_in"), &enc.w_in));
            out.push((format!("{tag}.b_in"), &enc.b_in));
            for (l, b) in enc.blocks.iter().enumerate() {
                for (name, t) in block_fields(b) {
                    out.push((format!("{tag}.block{l}.{name}"), t));
                }
            }
        }
        for (l, layer) in self.mgt.iter().enumerate() {
            for (tag, ty) in [("patch", &layer.patch), ("text", &layer.text)] {
                for (name, t) in type_fields(ty) {
                    out.push((format!("mgt{l}.{tag}.{name}"), t));
                }
            }
            for (tag, rel) in [("pp", &layer.pp), ("pt", &layer.pt), ("tp", &layer.tp)] {
                for (name, t) in [("wk", &rel.wk), ("wv", &rel.wv), ("bias", &rel.bias), ("rho", &rel.rho)] {
                    out.push((format!("mgt{l}.{tag}.{name}"), t));
                }
            }
        }
        out.push(("direction".into(), &self.direction));
        out
    }

    /// Mutable counterpart of [`named_tensors`](Self::named_tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2D> {
        let mut out: Vec<&mut Tensor2D> = Vec::new();
        for enc in [&mut self.vis, &mut self.text] {
            out.push(&mut enc.w_in);
            out.push(&mut enc.b_in);
            for b in &mut enc.blocks {
                out.extend([
                    &mut b.wq,
                    &mut b.wk,
                    &mut b.wv,
                    &mut b.wo,
                    &mut b.w1,
                    &mut b.b1,
                    &mut b.w2,
                    &mut b.b2,
                    &mut b.ln1_gamma,
                    &mut b.ln1_beta,
                    &mut b.ln2_gamma,
                    &mut b.ln2_beta,
                ]);
            }
        }
        for layer in &mut self.mgt {
            for ty in [&mut layer.patch, &mut layer.text] {
                out.extend([
                    &mut ty.wq,
                    &mut ty.wk,
                    &mut ty.wv,
                    &mut ty.wo,
                    &mut ty.w1,
                    &mut ty.b1,
                    &mut ty.w2,
                    &mut ty.b2,
                    &mut ty.ln_gamma,
                    &mut ty.ln_beta,
                ]);
            }
            for rel in [&mut layer.pp, &mut layer.pt, &mut layer.tp] {
                out.extend([&mut rel.wk, &mut rel.wv, &mut rel.bias, &mut rel.rho]);
            }
        }
        out.push(&mut self.direction);
        out
    }
}

fn block_fields(b: &EncoderBlock) -> [(&'static str, &Tensor2D); 12] {
    [
        ("wq", &b.wq),
        ("wk", &b.wk),
        ("wv", &b.wv),
        ("wo", &b.wo),
        ("w1", &b.w1),
        ("b1", &b.b1),
        ("w2", &b.w2),
        ("b2", &b.b2),
        ("ln1_gamma", &b.ln1_gamma),
        ("ln1_beta", &b.ln1_beta),
        ("ln2_gamma", &b.ln2_gamma),
        ("ln2_beta", &b.ln2_beta),
    ]
}

fn type_fields(t: &TypeParams) -> [(&'static str, &Tensor2D); 10] {
    [
        ("wq", &t.wq),
        ("wk", &t.wk),
        ("wv", &t.wv),
        ("wo", &t.wo),
        ("w1", &t.w1),
        ("b1", &t.b1),
        ("w2", &t.w2),
        ("b2", &t.b2),
        ("ln_gamma", &t.ln_gamma),
        ("ln_beta", &t.ln_beta),
    ]
}
