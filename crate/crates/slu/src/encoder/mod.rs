//! Sequential token modeling: contextualize per-token vectors via one of
//! three interchangeable depth-2 architectures.

mod biblock;
mod multihead;
mod rnn;

pub use biblock::block_bounds;
pub use multihead::positional_encodings;

use crate::config::{EncoderConfig, EncoderKind};
use crate::error::Result;
use crate::numerics::{Graph, Mode, ParamStore, Var};

/// Register all encoder parameters for the configured kind.
pub fn init_params(store: &mut ParamStore, cfg: &EncoderConfig, input_dim: usize) {
    match cfg.kind {
        EncoderKind::BiRnnGru | EncoderKind::BiRnnHighwayLstm => {
            rnn::init_params(store, cfg, input_dim)
        }
        EncoderKind::MultiHeadAttention => multihead::init_params(store, cfg, input_dim),
        EncoderKind::BiBlockAttention => biblock::init_params(store, cfg, input_dim),
    }
}

/// Encode a T x d utterance into T x output_dim contextual representations.
pub fn encode<'g>(
    g: &'g Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    inputs: Var<'g>,
    mode: &Mode,
) -> Result<Var<'g>> {
    match cfg.kind {
        EncoderKind::BiRnnGru | EncoderKind::BiRnnHighwayLstm => {
            Ok(rnn::encode(g, store, cfg, inputs, mode))
        }
        EncoderKind::MultiHeadAttention => Ok(multihead::encode(g, store, cfg, inputs, mode)),
        EncoderKind::BiBlockAttention => biblock::encode(g, store, cfg, inputs, mode),
    }
}
