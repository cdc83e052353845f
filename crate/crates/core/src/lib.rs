//! Confidence calibration and confidence-guided decoding for audio
//! captioning outputs.
//!
//! The engine works on exported model artifacts (token log-probabilities,
//! decoder hidden states, caption embeddings) described by a JSONL manifest.

pub mod calibration;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod head;
pub mod matrix;
pub mod semantic;
pub mod synthetic;
pub mod tensor_io;
pub mod text_metrics;

pub use error::{Error, ErrorKind, Result};
pub use matrix::Matrix;
