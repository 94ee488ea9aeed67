//! Multi-head self-attention encoder: input projection, sinusoidal
//! positional encodings, then depth blocks of (self-attention + residual +
//! layer norm, position-wise FFN + residual + layer norm).

use crate::config::EncoderConfig;
use crate::numerics::{concat_cols, dropout, Graph, Init, Mat, Mode, ParamStore, Var};

pub fn init_params(store: &mut ParamStore, cfg: &EncoderConfig, input_dim: usize) {
    let d = cfg.d_model;
    store.define("encoder.proj.w", input_dim, d, Init::Glorot);
    store.define("encoder.proj.b", 1, d, Init::Zeros);
    for layer in 0..cfg.depth {
        let p = format!("encoder.l{layer}");
        for m in ["wq", "wk", "wv", "wo"] {
            store.define(&format!("{p}.att.{m}"), d, d, Init::Glorot);
        }
        store.define(&format!("{p}.ln1.gamma"), 1, d, Init::Const(1.0));
        store.define(&format!("{p}.ln1.beta"), 1, d, Init::Zeros);
        store.define(&format!("{p}.ffn.w1"), d, d, Init::Glorot);
        store.define(&format!("{p}.ffn.b1"), 1, d, Init::Zeros);
        store.define(&format!("{p}.ffn.w2"), d, d, Init::Glorot);
        store.define(&format!("{p}.ffn.b2"), 1, d, Init::Zeros);
        store.define(&format!("{p}.ln2.gamma"), 1, d, Init::Const(1.0));
        store.define(&format!("{p}.ln2.beta"), 1, d, Init::Zeros);
    }
}

/// Standard sinusoidal positional encoding table, T x d.
pub fn positional_encodings(t_len: usize, d: usize) -> Mat {
    Mat::from_shape_fn((t_len, d), |(t, j)| {
        let rate = (t as f64) / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        if j % 2 == 0 {
            rate.sin()
        } else {
            rate.cos()
        }
    })
}

/// Encode a T x d input into T x d_model representations.
pub fn encode<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    inputs: Var<'g>,
    mode: &Mode,
) -> Var<'g> {
    let d = cfg.d_model;
    let dk = d / cfg.heads;
    let t_len = inputs.rows();
    let mut x = inputs
        .matmul(g.param(store, "encoder.proj.w"))
        .add_row(g.param(store, "encoder.proj.b"));
    if cfg.positional {
        x = x.add_const(&positional_encodings(t_len, d));
    }
    let scale = 1.0 / (dk as f64).sqrt();
    for layer in 0..cfg.depth {
        let p = format!("encoder.l{layer}");
        let q = x.matmul(g.param(store, &format!("{p}.att.wq")));
        let k = x.matmul(g.param(store, &format!("{p}.att.wk")));
        let v = x.matmul(g.param(store, &format!("{p}.att.wv")));
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (c0, c1) = (h * dk, (h + 1) * dk);
            let qh = q.slice_cols(c0, c1);
            let kh = k.slice_cols(c0, c1);
            let vh = v.slice_cols(c0, c1);
            let probs = qh.matmul(kh.transpose()).scale(scale).softmax_rows();
            mode.record_attention(&probs.value());
            heads.push(probs.matmul(vh));
        }
        let att = concat_cols(&heads).matmul(g.param(store, &format!("{p}.att.wo")));
        x = x.add(dropout(att, cfg.residual_dropout_keep, mode)).layer_norm(
            g.param(store, &format!("{p}.ln1.gamma")),
            g.param(store, &format!("{p}.ln1.beta")),
            1e-6,
        );
        let f = x
            .matmul(g.param(store, &format!("{p}.ffn.w1")))
            .add_row(g.param(store, &format!("{p}.ffn.b1")))
            .relu()
            .matmul(g.param(store, &format!("{p}.ffn.w2")))
            .add_row(g.param(store, &format!("{p}.ffn.b2")));
        x = x.add(dropout(f, cfg.residual_dropout_keep, mode)).layer_norm(
            g.param(store, &format!("{p}.ln2.gamma")),
            g.param(store, &format!("{p}.ln2.beta")),
            1e-6,
        );
    }
    x
}
