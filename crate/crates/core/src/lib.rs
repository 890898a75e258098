pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod simulate;
pub mod spectral;
pub mod spectrogram;

pub use error::{Error, ErrorCategory, Result};
pub use spectrogram::ComplexSpectrogram;
