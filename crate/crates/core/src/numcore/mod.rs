//! Dense numeric kernels and reverse-mode differentiation.

mod attention;
pub mod gradcheck;
pub mod rng;
mod tape;
mod tensor;

pub use attention::{attention_forward, AttentionSaved};
pub use tape::{attention, concat_cols, concat_rows, GradTape, Gradients, Var};
pub(crate) use tape::focal_terms;
pub use tensor::{
    cosine, dot, gelu, gelu_grad, l2_normalize, l2_normalize_rows, layer_norm, log_sum_exp,
    matmul, matmul_nt, matmul_tn, norm, sigmoid, softmax_rows, softplus, Mask, Tensor2D, LN_EPS,
    MIN_NORM,
};

/// Backward pass of `tape` from the scalar `root`.
pub fn backward<'t>(tape: &'t GradTape, root: Var<'t>) -> crate::Result<Gradients> {
    tape.backward(root)
}
