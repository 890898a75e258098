//! Waveform-level enhancement: STFT, compression, noise sampling, subtraction
//! and resynthesis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, TrainingPair};
use crate::sampler::{enhance, sample, SamplerConfig, SamplerDiagnostics};
use crate::schedule::ScheduleParams;
use crate::spectral::{analyze, synthesize, StftConfig};
use crate::{ComplexSpectrogram, Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceSetup {
    pub schedule: ScheduleParams,
    pub stft: StftConfig,
    pub sampler: SamplerConfig,
}

impl EnhanceSetup {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.stft.validate()?;
        self.sampler.validate()
    }
}

/// Transformed mixture `Y` and environmental noise `N₀ = Y − X`, where `X` is
/// the transformed target.
pub fn noise_pair(mixture: &[f64], target: &[f64], cfg: &StftConfig) -> Result<TrainingPair> {
    if mixture.len() != target.len() {
        return Err(Error::dims(mixture.len(), target.len()));
    }
    let y = analyze(mixture, cfg)?;
    let x = analyze(target, cfg)?;
    Ok(TrainingPair { n0: y.sub(&x)?, y })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub waveform: Vec<f64>,
    pub noise_estimate: ComplexSpectrogram,
    pub diagnostics: SamplerDiagnostics,
}

/// Samples the environmental noise conditioned on `mixture`, subtracts it in the
/// transformed domain and resynthesizes a waveform of the input length.
pub fn enhance_waveform<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    mixture: &[f64],
    setup: &EnhanceSetup,
    rng: &mut R,
) -> Result<Enhanced> {
    let y = analyze(mixture, &setup.stft)?;
    enhance_spectrogram(denoiser, &y, mixture.len(), setup, rng)
}

pub fn enhance_spectrogram<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    y: &ComplexSpectrogram,
    out_len: usize,
    setup: &EnhanceSetup,
    rng: &mut R,
) -> Result<Enhanced> {
    let out = sample(denoiser, y, &setup.sampler, &setup.schedule, rng)?;
    let x = enhance(y, &out.n0)?;
    Ok(Enhanced {
        waveform: synthesize(&x, &setup.stft, out_len)?,
        noise_estimate: out.n0,
        diagnostics: out.diagnostics,
    })
}
