//! Declarative model and training configuration.
//!
//! Defaults mirror the training recipe used for the benchmark tables, so
//! an empty override section reproduces it.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SluError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub use_word: bool,
    pub use_char: bool,
    pub use_gazetteer: bool,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_windows: Vec<usize>,
    pub char_filters: usize,
    pub gaz_dim: usize,
    /// Token character sequences are truncated to this many characters.
    pub max_token_chars: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            use_word: true,
            use_char: true,
            use_gazetteer: false,
            word_dim: 100,
            char_dim: 8,
            char_windows: vec![3, 4, 5],
            char_filters: 50,
            gaz_dim: 50,
            max_token_chars: 30,
        }
    }
}

impl EmbedderConfig {
    pub fn char_out_dim(&self) -> usize {
        self.char_windows.len() * self.char_filters
    }

    pub fn output_dim(&self) -> usize {
        let mut d = 0;
        if self.use_word {
            d += self.word_dim;
        }
        if self.use_char {
            d += self.char_out_dim();
        }
        if self.use_gazetteer {
            d += self.gaz_dim;
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_word || self.use_char || self.use_gazetteer) {
            return Err(SluError::InvalidArgument(
                "embedder: at least one component must be enabled".into(),
            ));
        }
        if self.use_char && (self.char_windows.is_empty() || self.char_filters == 0) {
            return Err(SluError::InvalidArgument(
                "embedder: char component enabled with no windows or filters".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    #[serde(rename = "birnn-gru")]
    BiRnnGru,
    #[serde(rename = "birnn-highway-lstm")]
    BiRnnHighwayLstm,
    #[serde(rename = "multi-head-attention")]
    MultiHeadAttention,
    #[serde(rename = "bi-block-attention")]
    BiBlockAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub depth: usize,
    /// RNN hidden size per direction.
    pub hidden: usize,
    /// Attention-encoder model width.
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub recurrent_dropout_keep: f64,
    pub residual_dropout_keep: f64,
    /// Sinusoidal positional encodings for the multi-head encoder
    /// (test hook: disable to check permutation equivariance).
    pub positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::BiRnnHighwayLstm,
            depth: 2,
            hidden: 300,
            d_model: 300,
            heads: 2,
            blocks: 3,
            recurrent_dropout_keep: 0.9,
            residual_dropout_keep: 0.8,
            positional: true,
        }
    }
}

impl EncoderConfig {
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::BiRnnGru | EncoderKind::BiRnnHighwayLstm => 2 * self.hidden,
            EncoderKind::MultiHeadAttention => self.d_model,
            EncoderKind::BiBlockAttention => 2 * self.d_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(SluError::InvalidArgument("encoder: depth must be >= 1".into()));
        }
        match self.kind {
            EncoderKind::BiRnnGru | EncoderKind::BiRnnHighwayLstm => {
                if self.hidden == 0 {
                    return Err(SluError::InvalidArgument("encoder: hidden must be > 0".into()));
                }
            }
            EncoderKind::MultiHeadAttention => {
                if self.heads == 0 || self.d_model % self.heads != 0 {
                    return Err(SluError::InvalidArgument(format!(
                        "encoder: d_model {} must be divisible by heads {}",
                        self.d_model, self.heads
                    )));
                }
            }
            EncoderKind::BiBlockAttention => {
                if self.blocks == 0 {
                    return Err(SluError::InvalidArgument("encoder: blocks must be > 0".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotHeadKind {
    #[serde(rename = "softmax")]
    Softmax,
    #[serde(rename = "softmax+smoothing")]
    SoftmaxSmoothing,
    #[serde(rename = "crf")]
    Crf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub ffn_hidden: usize,
    pub ffn_layers: usize,
    pub slot_head: SlotHeadKind,
    pub label_smoothing: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            ffn_hidden: 300,
            ffn_layers: 2,
            slot_head: SlotHeadKind::SoftmaxSmoothing,
            label_smoothing: 0.1,
        }
    }
}

impl HeadConfig {
    /// Smoothing rate the slot head trains with (zero unless enabled).
    pub fn slot_smoothing(&self) -> f64 {
        match self.slot_head {
            SlotHeadKind::SoftmaxSmoothing => self.label_smoothing,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(SluError::InvalidArgument(format!(
                "heads: label_smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        if self.ffn_layers == 0 {
            return Err(SluError::InvalidArgument("heads: ffn_layers must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embedder: EmbedderConfig,
    pub encoder: EncoderConfig,
    pub heads: HeadConfig,
    /// Keep probability for feed-forward dropout (embedder output and
    /// head FFN hidden layers).
    pub dropout_keep: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedder: EmbedderConfig::default(),
            encoder: EncoderConfig::default(),
            heads: HeadConfig::default(),
            dropout_keep: 0.9,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        self.encoder.validate()?;
        self.heads.validate()?;
        if !(0.0..=1.0).contains(&self.dropout_keep) {
            return Err(SluError::InvalidArgument(format!(
                "dropout_keep {} outside [0, 1]",
                self.dropout_keep
            )));
        }
        Ok(())
    }

    /// Stable hash of the canonical JSON form, recorded in checkpoints.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// Parse a benchmark-table variant name like `Highway:W+CNN` or
    /// `Block-Dim.Att:W+CNN+G` into a configuration.
    pub fn from_variant(name: &str) -> Result<Self> {
        let (enc, comps) = name.split_once(':').ok_or_else(|| {
            SluError::InvalidArgument(format!(
                "variant {name:?} must look like <Encoder>:<W|CNN|G components>"
            ))
        })?;
        let mut cfg = ModelConfig::default();
        cfg.encoder.kind = match enc {
            "Highway" => EncoderKind::BiRnnHighwayLstm,
            "GRU" => EncoderKind::BiRnnGru,
            "MulHeadAtt" => EncoderKind::MultiHeadAttention,
            "Block-Dim.Att" => EncoderKind::BiBlockAttention,
            other => {
                return Err(SluError::InvalidArgument(format!(
                    "unknown encoder {other:?}; expected Highway, GRU, MulHeadAtt or Block-Dim.Att"
                )))
            }
        };
        cfg.embedder.use_word = false;
        cfg.embedder.use_char = false;
        cfg.embedder.use_gazetteer = false;
        for comp in comps.split('+') {
            match comp {
                "W" => cfg.embedder.use_word = true,
                "CNN" => cfg.embedder.use_char = true,
                "G" => cfg.embedder.use_gazetteer = true,
                other => {
                    return Err(SluError::InvalidArgument(format!(
                        "unknown embedder component {other:?}; expected W, CNN or G"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "joint")]
    Joint,
    #[serde(rename = "intent-only")]
    IntentOnly,
    #[serde(rename = "slot-only")]
    SlotOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha_intent: f64,
    pub alpha_slot: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub mode: TrainMode,
    pub clip_norm: f64,
    /// Parameter-name prefixes excluded from updates (e.g. "embed.word"
    /// for fixed pretrained embeddings).
    pub freeze: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha_intent: 0.2,
            alpha_slot: 0.8,
            lr: 0.001,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seeds: vec![1, 2, 3, 4, 5],
            mode: TrainMode::Joint,
            clip_norm: 5.0,
            freeze: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_intent < 0.0 || self.alpha_slot < 0.0 {
            return Err(SluError::InvalidArgument("alpha weights must be >= 0".into()));
        }
        if self.mode == TrainMode::Joint && (self.alpha_intent == 0.0 || self.alpha_slot == 0.0) {
            return Err(SluError::InvalidArgument(
                "joint mode requires both alpha weights > 0".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.seeds.is_empty() {
            return Err(SluError::InvalidArgument(
                "batch_size, max_epochs and seeds must be non-empty/non-zero".into(),
            ));
        }
        Ok(())
    }
}
