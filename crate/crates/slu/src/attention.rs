//! Multi-dimensional (per-feature) attention primitives shared by the
//! intent head and the bi-block encoder.
//!
//! Scores come from a one-hidden-layer tanh network producing one score per
//! feature per token; weights are softmax-normalized over tokens separately
//! for every feature, so the pooled vector is a per-feature convex
//! combination of the token representations.

use crate::error::{Result, SluError};
use crate::numerics::{Graph, Init, ParamStore, Var};

/// Register pooling parameters under `prefix` for width-d inputs.
pub fn init_pool_params(store: &mut ParamStore, prefix: &str, d: usize) {
    store.define(&format!("{prefix}.w1"), d, d, Init::Glorot);
    store.define(&format!("{prefix}.b1"), 1, d, Init::Zeros);
    store.define(&format!("{prefix}.w2"), d, d, Init::Glorot);
    store.define(&format!("{prefix}.b2"), 1, d, Init::Zeros);
}

/// Pool T x d token representations into a single 1 x d vector with
/// per-feature attention weights.
pub fn multidim_pool<'g>(
    g: &'g Graph,
    store: &ParamStore,
    prefix: &str,
    reps: Var<'g>,
) -> Result<Var<'g>> {
    if reps.rows() == 0 {
        return Err(SluError::InvalidArgument(
            "multidim_pool: no unmasked positions".into(),
        ));
    }
    let scores = reps
        .matmul(g.param(store, &format!("{prefix}.w1")))
        .add_row(g.param(store, &format!("{prefix}.b1")))
        .tanh()
        .matmul(g.param(store, &format!("{prefix}.w2")))
        .add_row(g.param(store, &format!("{prefix}.b2")));
    // Normalize over tokens per feature: softmax along rows of the transpose.
    let weights = scores.transpose().softmax_rows().transpose();
    Ok(weights.mul(reps).sum_axis0())
}
