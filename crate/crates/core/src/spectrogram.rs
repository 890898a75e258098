//! Complex time-frequency grid shared by the diffusion core and the STFT front-end.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `bins × frames` grid of complex coefficients stored bin-major
/// (`coeffs[bin * frames + frame]`).
///
/// The diffusion treats it as a flat vector of dimension `d = bins * frames`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSpectrogram {
    bins: usize,
    frames: usize,
    coeffs: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn zeros(bins: usize, frames: usize) -> Self {
        Self {
            bins,
            frames,
            coeffs: vec![Complex64::new(0.0, 0.0); bins * frames],
        }
    }

    pub fn from_vec(bins: usize, frames: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != bins * frames {
            return Err(Error::dims(
                format!("{} coefficients ({bins}x{frames})", bins * frames),
                coeffs.len(),
            ));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Domain("spectrogram coefficients must be finite".into()));
        }
        Ok(Self { bins, frames, coeffs })
    }

    /// Single-row grid, convenient for flat test vectors.
    pub fn from_flat(coeffs: Vec<Complex64>) -> Self {
        Self {
            bins: 1,
            frames: coeffs.len(),
            coeffs,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    /// Flattened dimension `d`.
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.coeffs[bin * self.frames + frame]
    }

    pub fn set(&mut self, bin: usize, frame: usize, value: Complex64) {
        self.coeffs[bin * self.frames + frame] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                format!("{}x{}", self.bins, self.frames),
                format!("{}x{}", other.bins, other.frames),
            ));
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(Complex64) -> Complex64) -> Self {
        Self {
            bins: self.bins,
            frames: self.frames,
            coeffs: self.coeffs.iter().map(|&c| f(c)).collect(),
        }
    }

    /// Elementwise `f(self[i], other[i])`.
    pub fn zip_map(
        &self,
        other: &Self,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            bins: self.bins,
            frames: self.frames,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|c| c * k)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: f64, other: &Self) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, &b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * k;
        }
        Ok(())
    }

    /// Squared Euclidean norm of the flattened vector.
    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `‖self − other‖²`
    pub fn dist_sqr(&self, other: &Self) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum())
    }

    /// Hermitian inner product `Σ conj(self[i]) · other[i]`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Copy of the first `frames` columns, zero-padded when the grid is shorter.
    pub fn resized_frames(&self, frames: usize) -> Self {
        let mut out = Self::zeros(self.bins, frames);
        let keep = frames.min(self.frames);
        for b in 0..self.bins {
            let src = &self.coeffs[b * self.frames..b * self.frames + keep];
            out.coeffs[b * frames..b * frames + keep].copy_from_slice(src);
        }
        out
    }
}
