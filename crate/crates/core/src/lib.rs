//! Gaussian mixture categorical diffusion: sphere-packed latent codes for
//! categorical sequences, a factorized mixture denoiser, and the tools to
//! train, sample and evaluate it.

pub mod checkpoint;
pub mod codec;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod predictor;
pub mod rng;
pub mod sampling;
pub mod synthdata;
pub mod training;

pub use codec::{Alphabet, CategorySequence, LatentSequence};
pub use diffusion::{linear_schedule, NoiseSchedule, Omega};
pub use error::{GmcdError, Result};
pub use geometry::{pack_sphere, PackingConfig, PackingResult};
pub use predictor::{Arch, Predictor, PredictorConfig};
