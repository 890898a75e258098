//! Forward kernel and reverse-SDE quantities for the environmental-noise process.
//!
//! The state is `n_t = x_t − y`, which obeys `dn = f(t)·n dt + g(t) dW`. Its kernel is
//! `p(n_t | n_0) = CN(s·n_0, s²σ²I)`. The conditioning `y` never enters the kernel,
//! only the denoiser.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::standard_complex;
use crate::schedule::SchedulePoint;
use crate::spectrogram::ComplexSpectrogram;

/// Current iterate of the reverse process.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub n_t: ComplexSpectrogram,
    pub t: f64,
}

/// Draws a `bins × frames` grid of i.i.d. circular complex Gaussians with
/// per-component complex variance `variance` (each part gets `variance/2`).
pub fn sample_complex_gaussian<R: Rng + ?Sized>(
    bins: usize,
    frames: usize,
    variance: f64,
    rng: &mut R,
) -> Result<ComplexSpectrogram> {
    if variance.is_nan() || variance < 0.0 {
        return Err(Error::Domain(format!("variance must be non-negative, got {variance}")));
    }
    let std = variance.sqrt();
    let coeffs = (0..bins * frames)
        .map(|_| standard_complex(rng) * std)
        .collect();
    Ok(ComplexSpectrogram::from_vec(bins, frames, coeffs).expect("shape by construction"))
}

/// `n_t = s·n_0 + s·σ·ε`, one draw from the forward kernel.
pub fn forward_perturb<R: Rng + ?Sized>(
    n0: &ComplexSpectrogram,
    point: &SchedulePoint,
    rng: &mut R,
) -> ComplexSpectrogram {
    let s = point.scale;
    let std = point.kernel_std();
    if std == 0.0 {
        return n0.scale(s);
    }
    n0.map(|c| c * s + standard_complex(rng) * std)
}

/// Score estimate from a denoiser output: `(D − n_t/s) / (s·σ²)`.
pub fn score_from_denoised(
    denoised: &ComplexSpectrogram,
    n_t: &ComplexSpectrogram,
    point: &SchedulePoint,
) -> Result<ComplexSpectrogram> {
    if point.sigma <= 0.0 {
        return Err(Error::SingularTime);
    }
    let s = point.scale;
    let inv_scale = 1.0 / s;
    let denom = s * point.sigma * point.sigma;
    denoised.zip_map(n_t, |d, n| (d - n * inv_scale) / denom)
}

/// Deterministic part of the reverse SDE per unit time: `f·n_t − g²·score`.
pub fn reverse_drift(
    n_t: &ComplexSpectrogram,
    point: &SchedulePoint,
    score: &ComplexSpectrogram,
) -> Result<ComplexSpectrogram> {
    let f = point.drift_coeff;
    let g2 = point.beta;
    n_t.zip_map(score, |n, sc| n * f - sc * g2)
}

/// Probability-flow counterpart `f·n_t − g²/2·score`.
pub(crate) fn probability_flow_drift(
    n_t: &ComplexSpectrogram,
    point: &SchedulePoint,
    score: &ComplexSpectrogram,
) -> Result<ComplexSpectrogram> {
    let f = point.drift_coeff;
    let half_g2 = 0.5 * point.beta;
    n_t.zip_map(score, |n, sc| n * f - sc * half_g2)
}

/// Exact score of `CN(s·μ, s²σ²I)`, i.e. a point-mass prior at `μ`.
pub fn point_mass_score(
    mean: &ComplexSpectrogram,
    n_t: &ComplexSpectrogram,
    point: &SchedulePoint,
) -> Result<ComplexSpectrogram> {
    if point.sigma <= 0.0 {
        return Err(Error::SingularTime);
    }
    let s = point.scale;
    let var = s * s * point.sigma * point.sigma;
    n_t.zip_map(mean, |n, m| -(n - m * s) / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use num_complex::Complex64;
    use crate::schedule::ScheduleParams;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar(v: Complex64) -> ComplexSpectrogram {
        ComplexSpectrogram::from_flat(vec![v])
    }

    #[test]
    fn zero_variance_gives_zeros() {
        let z = sample_complex_gaussian(3, 4, 0.0, &mut stream(1)).unwrap();
        assert_eq!(z, ComplexSpectrogram::zeros(3, 4));
        assert!(matches!(
            sample_complex_gaussian(1, 1, -1.0, &mut stream(1)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unit_variance_moments() {
        let z = sample_complex_gaussian(1, 100_000, 1.0, &mut stream(11)).unwrap();
        let n = z.dim() as f64;
        let var = z.norm_sqr() / n;
        let pseudo: Complex64 = z.as_slice().iter().map(|v| v * v).sum::<Complex64>() / n;
        assert!((0.98..=1.02).contains(&var), "var={var}");
        assert!(pseudo.norm() < 0.02, "pseudo={pseudo}");
    }

    #[test]
    fn per_part_variance_is_half() {
        let z = sample_complex_gaussian(1, 100_000, 4.0, &mut stream(12)).unwrap();
        let n = z.dim() as f64;
        let re = z.as_slice().iter().map(|v| v.re * v.re).sum::<f64>() / n;
        let im = z.as_slice().iter().map(|v| v.im * v.im).sum::<f64>() / n;
        assert!((re - 2.0).abs() < 0.04, "re={re}");
        assert!((im - 2.0).abs() < 0.04, "im={im}");
    }

    #[test]
    fn perturb_at_origin_is_identity() {
        let s = ScheduleParams::default();
        let n0 = scalar(c(0.3, -0.2));
        let p = s.eval_point(0.0).unwrap();
        assert_eq!(forward_perturb(&n0, &p, &mut stream(0)), n0);
    }

    #[test]
    fn score_fixed_point_and_singular_time() {
        let s = ScheduleParams::default();
        let p = s.eval_point(0.3).unwrap();
        let n_t = scalar(c(0.7, 0.1));
        let denoised = n_t.scale(1.0 / p.scale);
        let score = score_from_denoised(&denoised, &n_t, &p).unwrap();
        assert!(score.norm() < 1e-14);
        let p0 = s.eval_point(0.0).unwrap();
        assert!(matches!(
            score_from_denoised(&denoised, &n_t, &p0),
            Err(Error::SingularTime)
        ));
    }

    #[test]
    fn score_of_single_atom_matches_gaussian_score() {
        let s = ScheduleParams::default();
        let a = scalar(c(0.2, -0.4));
        let n_t = scalar(c(-0.1, 0.3));
        for t in [0.05, 0.3, 0.5, 0.9, 1.0] {
            let p = s.eval_point(t).unwrap();
            let via_denoiser = score_from_denoised(&a, &n_t, &p).unwrap();
            let exact = point_mass_score(&a, &n_t, &p).unwrap();
            let err = via_denoiser.dist_sqr(&exact).unwrap().sqrt();
            assert!(err <= 1e-12 * exact.norm(), "t={t}");
        }
    }

    #[test]
    fn score_scales_linearly_with_residual() {
        let s = ScheduleParams::default();
        let p = s.eval_point(0.4).unwrap();
        let n_t = scalar(c(0.5, 0.5));
        let base = n_t.scale(1.0 / p.scale);
        let resid = scalar(c(0.01, -0.03));
        let one = score_from_denoised(&base.add(&resid).unwrap(), &n_t, &p).unwrap();
        let two = score_from_denoised(&base.add(&resid.scale(2.0)).unwrap(), &n_t, &p).unwrap();
        let diff = two.sub(&one.scale(2.0)).unwrap().norm();
        assert!(diff <= 1e-12 * two.norm());
    }

    #[test]
    fn drift_examples() {
        let s = ScheduleParams::default();
        let p0 = s.eval_point(0.0).unwrap();
        let n = scalar(c(1.0, 0.0));
        assert_eq!(reverse_drift(&n, &p0, &scalar(c(3.0, 1.0))).unwrap(), scalar(c(0.0, 0.0)));

        let p = s.eval_point(0.5).unwrap();
        let shrink = reverse_drift(&n, &p, &scalar(c(0.0, 0.0))).unwrap();
        assert_eq!(shrink.as_slice()[0], c(-p.beta / 2.0, 0.0));

        let drift = reverse_drift(&n, &p, &scalar(c(-2.0, 0.0))).unwrap();
        // −β/2 + 2β with β(0.5) = 0.297985549529450
        assert!((drift.as_slice()[0].re - 0.446_978_324_294_175).abs() < 1e-12);
        assert!((drift.as_slice()[0].re - 0.446980).abs() < 1e-5);
    }
}
