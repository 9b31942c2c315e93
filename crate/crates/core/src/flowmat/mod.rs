//! Masked-token transformer for CSI feedback and channel estimation.
//!
//! Frequency units become tokens; an encoder ends in a mask-attention
//! block, a query vector picks the kept tokens, and a decoder fills the
//! dropped positions from a shared mask token.

pub mod checkpoint;
pub mod config;
mod layers;
pub mod mask;
pub mod model;
pub mod tokens;

#[cfg(test)]
mod model_tests;

pub use checkpoint::Checkpoint;
pub use config::{MaskMode, MaskTokenInit, ModelConfig, QuantMode, TokenReduction};
pub use mask::{build_inverse_bias, build_mask_bias, insert_mask_tokens, select_active, top_k_indices, MaskPlan};
pub use model::{EstimationForward, EstimationModel, FeedbackForward, FeedbackModel};
pub use tokens::{detokenize_channel, detokenize_eigen, stack, tokenize_channel, tokenize_eigen, unstack, TokenOrigin, TokenSequence};
