//! Scalar and vector quantization of the feedback latent, with exact bit
//! accounting and a portable payload encoding.

pub mod payload;
pub mod uniform;
pub mod vq;

pub use payload::{payload_bits, BitPayload, Scheme};
pub use uniform::{uniform_dequantize, uniform_quantize, uniform_round_trip, UniformQuantizerSpec};
pub use vq::{vq_assign, vq_losses, vq_lookup, vq_nearest, VqCodebook};
