//! Bi-block multidimensional attention encoder: two parallel directionally
//! masked sub-networks. Each sub-network partitions the sequence into
//! contiguous blocks, applies per-feature token-to-token attention inside
//! each block (position t attends to positions at or before t in the
//! forward direction, at or after t in the backward direction),
//! summarizes each block by multidimensional pooling, pools the
//! strictly-preceding (resp. following) block summaries into a global
//! context, and fuses local and global context with a learned gate.
//! Outputs of the two directions are concatenated.

use crate::attention::{init_pool_params, multidim_pool};
use crate::config::EncoderConfig;
use crate::error::Result;
use crate::numerics::{concat_cols, concat_rows, Graph, Init, Mat, Mode, ParamStore, Var};

const DIRS: [&str; 2] = ["fwd", "bwd"];

pub fn init_params(store: &mut ParamStore, cfg: &EncoderConfig, input_dim: usize) {
    let d = cfg.d_model;
    for dir in DIRS {
        store.define(&format!("encoder.{dir}.proj.w"), input_dim, d, Init::Glorot);
        store.define(&format!("encoder.{dir}.proj.b"), 1, d, Init::Zeros);
        for layer in 0..cfg.depth {
            let p = format!("encoder.{dir}.l{layer}");
            store.define(&format!("{p}.intra.w1a"), d, d, Init::Glorot);
            store.define(&format!("{p}.intra.w1b"), d, d, Init::Glorot);
            store.define(&format!("{p}.intra.b1"), 1, d, Init::Zeros);
            store.define(&format!("{p}.intra.w2"), d, d, Init::Glorot);
            store.define(&format!("{p}.intra.b2"), 1, d, Init::Zeros);
            init_pool_params(store, &format!("{p}.pool"), d);
            init_pool_params(store, &format!("{p}.inter"), d);
            store.define(&format!("{p}.fuse.w"), 3 * d, d, Init::Glorot);
            store.define(&format!("{p}.fuse.b"), 1, d, Init::Zeros);
        }
    }
}

/// Split T positions into `n` contiguous blocks as equal as possible,
/// remainder going to the leading blocks. Returns [start, end) pairs.
pub fn block_bounds(t_len: usize, n: usize) -> Vec<(usize, usize)> {
    let n = n.min(t_len).max(1);
    let base = t_len / n;
    let rem = t_len % n;
    let mut bounds = Vec::with_capacity(n);
    let mut start = 0;
    for b in 0..n {
        let len = base + usize::from(b < rem);
        bounds.push((start, start + len));
        start += len;
    }
    bounds
}

/// Per-feature attention of query row `t` over block rows [s, e) with a
/// directional mask (forward: keys <= t; backward: keys >= t).
fn intra_attend<'g>(
    a_rows: Var<'g>,  // T x d, query transform (already includes b1)
    b_rows: Var<'g>,  // T x d, key transform
    x: Var<'g>,       // T x d, values
    w2: Var<'g>,
    b2: Var<'g>,
    t: usize,
    s: usize,
    e: usize,
    forward: bool,
    mode: &Mode,
) -> Var<'g> {
    let d = x.cols();
    let len = e - s;
    let keys = b_rows.slice_rows(s, e);
    let query = a_rows.row(t);
    // logits[k, j]: score of key s+k for feature j
    let logits = keys.add_row(query).tanh().matmul(w2).add_row(b2);
    let mut mask = Mat::zeros((len, d));
    for k in 0..len {
        let pos = s + k;
        let blocked = if forward { pos > t } else { pos < t };
        if blocked {
            mask.row_mut(k).fill(-1e30);
        }
    }
    let masked = logits.add_const(&mask);
    let probs = masked.transpose().softmax_rows().transpose();
    mode.record_attention(&probs.value());
    probs.mul(x.slice_rows(s, e)).sum_axis0()
}

fn encode_direction<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    inputs: Var<'g>,
    dir: &str,
    mode: &Mode,
) -> Result<Var<'g>> {
    let d = cfg.d_model;
    let forward = dir == "fwd";
    let t_len = inputs.rows();
    let bounds = block_bounds(t_len, cfg.blocks);
    let mut x = inputs
        .matmul(g.param(store, &format!("encoder.{dir}.proj.w")))
        .add_row(g.param(store, &format!("encoder.{dir}.proj.b")));
    for layer in 0..cfg.depth {
        let p = format!("encoder.{dir}.l{layer}");
        let a_rows = x
            .matmul(g.param(store, &format!("{p}.intra.w1a")))
            .add_row(g.param(store, &format!("{p}.intra.b1")));
        let b_rows = x.matmul(g.param(store, &format!("{p}.intra.w1b")));
        let w2 = g.param(store, &format!("{p}.intra.w2"));
        let b2 = g.param(store, &format!("{p}.intra.b2"));

        // Local context per token, within its block.
        let mut local: Vec<Var<'g>> = Vec::with_capacity(t_len);
        for &(s, e) in &bounds {
            for t in s..e {
                local.push(intra_attend(
                    a_rows, b_rows, x, w2, b2, t, s, e, forward, mode,
                ));
            }
        }

        // Block summaries; block b's summary may only feed blocks it
        // strictly precedes (forward) or follows (backward).
        let summaries: Vec<Var<'g>> = bounds
            .iter()
            .map(|&(s, e)| multidim_pool(g, store, &format!("{p}.pool"), concat_rows(&local[s..e])))
            .collect::<Result<_>>()?;

        let global: Vec<Var<'g>> = (0..bounds.len())
            .map(|b| {
                let visible: &[Var<'g>] = if forward {
                    &summaries[..b]
                } else {
                    &summaries[b + 1..]
                };
                if visible.is_empty() {
                    Ok(g.constant(Mat::zeros((1, d))))
                } else {
                    multidim_pool(g, store, &format!("{p}.inter"), concat_rows(visible))
                }
            })
            .collect::<Result<_>>()?;

        // Gate fusion of local and global context.
        let fw = g.param(store, &format!("{p}.fuse.w"));
        let fb = g.param(store, &format!("{p}.fuse.b"));
        let mut out_rows: Vec<Var<'g>> = Vec::with_capacity(t_len);
        for (b, &(s, e)) in bounds.iter().enumerate() {
            for t in s..e {
                let xt = x.row(t);
                let ht = local[t];
                let gb = global[b];
                let gate = concat_cols(&[xt, ht, gb]).matmul(fw).add_row(fb).sigmoid();
                let one = g.constant(Mat::from_elem((1, d), 1.0));
                out_rows.push(gate.mul(ht).add(one.sub(gate).mul(gb)));
            }
        }
        x = concat_rows(&out_rows);
    }
    Ok(x)
}

/// Encode a T x d input into T x (2 * d_model) representations.
pub fn encode<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    inputs: Var<'g>,
    mode: &Mode,
) -> Result<Var<'g>> {
    let fwd = encode_direction(g, store, cfg, inputs, "fwd", mode)?;
    let bwd = encode_direction(g, store, cfg, inputs, "bwd", mode)?;
    Ok(concat_cols(&[fwd, bwd]))
}
