//! Modular multi-task spoken language understanding.
//!
//! Joint intent classification and slot filling over token sequences,
//! with interchangeable sequence encoders, softmax or CRF slot decoding,
//! and cross-lingual bootstrapping by checkpoint weight transfer.

pub mod error;
pub mod attention;
pub mod config;
pub mod corpus;
pub mod embedder;
pub mod encoder;
pub mod gazetteer;
pub mod heads;
pub mod eval;
pub mod model;
pub mod trainer;
pub mod synth;
pub mod transfer;
pub mod numerics;

pub use error::{Result, SluError};
