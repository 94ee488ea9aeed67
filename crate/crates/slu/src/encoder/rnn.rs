//! Bi-directional RNN encoder: stacked GRU or highway LSTM layers with
//! recurrent dropout (one mask per sequence, reused at every timestep).

use crate::config::{EncoderConfig, EncoderKind};
use crate::numerics::{concat_cols, concat_rows, Graph, Init, Mat, Mode, ParamStore, Var};

const DIRS: [&str; 2] = ["fwd", "bwd"];

pub fn init_params(store: &mut ParamStore, cfg: &EncoderConfig, input_dim: usize) {
    let h = cfg.hidden;
    for layer in 0..cfg.depth {
        let d_in = if layer == 0 { input_dim } else { 2 * h };
        for dir in DIRS {
            let p = format!("encoder.l{layer}.{dir}");
            match cfg.kind {
                EncoderKind::BiRnnGru => {
                    store.define(&format!("{p}.gru.wx"), d_in, 3 * h, Init::Glorot);
                    store.define(&format!("{p}.gru.wh"), h, 3 * h, Init::Glorot);
                    store.define(&format!("{p}.gru.b"), 1, 3 * h, Init::Zeros);
                }
                EncoderKind::BiRnnHighwayLstm => {
                    store.define(&format!("{p}.lstm.wx"), d_in, 4 * h, Init::Glorot);
                    store.define(&format!("{p}.lstm.wh"), h, 4 * h, Init::Glorot);
                    store.define(&format!("{p}.lstm.b"), 1, 4 * h, Init::Zeros);
                    // Transform gate and input projection for the highway bypass.
                    store.define(&format!("{p}.gate.w"), d_in, h, Init::Glorot);
                    store.define(&format!("{p}.gate.b"), 1, h, Init::Zeros);
                    store.define(&format!("{p}.proj.w"), d_in, h, Init::Glorot);
                }
                _ => unreachable!("rnn init with non-rnn kind"),
            }
        }
    }
}

/// Run one direction of one layer over the sequence; returns per-timestep
/// hidden states in input order.
fn run_direction<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    prefix: &str,
    inputs: &[Var<'g>],
    reverse: bool,
    mode: &Mode,
) -> Vec<Var<'g>> {
    let h = cfg.hidden;
    let t_len = inputs.len();
    // One recurrent mask per sequence, applied to h_{t-1} at every step.
    let rec_mask = mode.dropout_mask(1, h, cfg.recurrent_dropout_keep);

    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };

    let mut h_prev = g.constant(Mat::zeros((1, h)));
    let mut c_prev = g.constant(Mat::zeros((1, h)));
    let mut states: Vec<Option<Var<'g>>> = vec![None; t_len];

    for &t in &order {
        let x = inputs[t];
        let h_in = match &rec_mask {
            Some(m) => {
                mode.record_recurrent_mask(m);
                h_prev.mul_const(m.clone())
            }
            None => h_prev,
        };
        let out = match cfg.kind {
            EncoderKind::BiRnnGru => {
                let wx = g.param(store, &format!("{prefix}.gru.wx"));
                let wh = g.param(store, &format!("{prefix}.gru.wh"));
                let b = g.param(store, &format!("{prefix}.gru.b"));
                let zx = x.matmul(wx).add_row(b);
                let zh = h_in.matmul(wh);
                let r = zx.slice_cols(0, h).add(zh.slice_cols(0, h)).sigmoid();
                let z = zx.slice_cols(h, 2 * h).add(zh.slice_cols(h, 2 * h)).sigmoid();
                let n = zx
                    .slice_cols(2 * h, 3 * h)
                    .add(r.mul(zh.slice_cols(2 * h, 3 * h)))
                    .tanh();
                // h = (1-z) * n + z * h_prev
                let one = g.constant(Mat::from_elem((1, h), 1.0));
                h_prev = one.sub(z).mul(n).add(z.mul(h_prev));
                h_prev
            }
            EncoderKind::BiRnnHighwayLstm => {
                let wx = g.param(store, &format!("{prefix}.lstm.wx"));
                let wh = g.param(store, &format!("{prefix}.lstm.wh"));
                let b = g.param(store, &format!("{prefix}.lstm.b"));
                let zs = x.matmul(wx).add(h_in.matmul(wh)).add_row(b);
                let i = zs.slice_cols(0, h).sigmoid();
                let f = zs.slice_cols(h, 2 * h).sigmoid();
                let o = zs.slice_cols(2 * h, 3 * h).sigmoid();
                let cand = zs.slice_cols(3 * h, 4 * h).tanh();
                c_prev = f.mul(c_prev).add(i.mul(cand));
                let h_lstm = o.mul(c_prev.tanh());
                h_prev = h_lstm;
                // Highway: gate from the layer input mixes the LSTM output
                // with a projection of the input.
                let gw = g.param(store, &format!("{prefix}.gate.w"));
                let gb = g.param(store, &format!("{prefix}.gate.b"));
                let pw = g.param(store, &format!("{prefix}.proj.w"));
                let gate = x.matmul(gw).add_row(gb).sigmoid();
                let one = g.constant(Mat::from_elem((1, h), 1.0));
                gate.mul(h_lstm).add(one.sub(gate).mul(x.matmul(pw)))
            }
            _ => unreachable!(),
        };
        states[t] = Some(out);
    }
    states.into_iter().map(|s| s.expect("state filled")).collect()
}

/// Encode a T x d input into T x 2*hidden contextual representations.
pub fn encode<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    inputs: Var<'g>,
    mode: &Mode,
) -> Var<'g> {
    let t_len = inputs.rows();
    let mut layer_rows: Vec<Var<'g>> = (0..t_len).map(|t| inputs.row(t)).collect();
    for layer in 0..cfg.depth {
        let fwd = run_direction(
            g,
            store,
            cfg,
            &format!("encoder.l{layer}.fwd"),
            &layer_rows,
            false,
            mode,
        );
        let bwd = run_direction(
            g,
            store,
            cfg,
            &format!("encoder.l{layer}.bwd"),
            &layer_rows,
            true,
            mode,
        );
        layer_rows = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| concat_cols(&[f, b]))
            .collect();
    }
    concat_rows(&layer_rows)
}
