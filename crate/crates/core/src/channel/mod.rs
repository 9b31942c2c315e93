//! FDD MIMO channel simulation, pilot observation, LS estimation with
//! frequency interpolation, subband eigen-precoders and dataset files.

pub mod dataset;
pub mod generate;
pub mod geometry;
pub mod pilots;
pub mod precoder;
pub mod types;

pub use dataset::{Dataset, RecordKind};
pub use generate::{generate_batch, generate_channel, steering_vector};
pub use geometry::{MultipathProfile, PilotKind, PilotPattern, SystemGeometry};
pub use pilots::{interpolate_frequency, ls_estimate, noise_variance, observe_pilots};
pub use precoder::{compute_precoders, subband_eigenpairs};
pub use types::{ChannelTensor, EigenMatrix, PilotObservation};
