//! Masked-token transformer for joint pilot-based channel estimation and
//! eigenvector CSI feedback in FDD massive MIMO.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: dense tensors, a reverse-mode autodiff tape, Adam and a
//!   Hermitian power-iteration eigensolver.
//! - [`channel`]: synthetic multipath channels, pilot observation, LS
//!   estimation with interpolation, subband eigen-precoders, dataset files.
//! - [`flowmat`]: tokenization, attention blocks, active query masking, mask
//!   tokens, the decoder, the MLP-Mixer denoiser and both pipelines.
//! - [`quantizer`]: uniform and vector quantization with bit-exact payloads.
//! - [`training`]: losses and the progressive / joint / end-to-end / split
//!   training regimes.
//! - [`evalharness`]: metrics, baselines, correlation analysis and the
//!   experiment runner behind the `flowmat` binary.

pub mod channel;
pub mod error;
pub mod evalharness;
pub mod flowmat;
pub mod numerics;
pub mod quantizer;
pub mod training;

pub use error::{Error, Result};
