//! Denoisers `D(x, y, σ)` that estimate `n₀` from the scale-normalised state
//! `x = n_t/s(t) = n₀ + σ·ε`, plus the weighted L2 training objective.
//!
//! Denoisers consume the noise level σ rather than the time t, so they are
//! independent of the schedule; callers convert through [`ScheduleParams`].

mod linear;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::forward_perturb;
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;
use crate::spectrogram::ComplexSpectrogram;

pub use linear::{fit_linear_denoiser, FitDiagnostics, FitOptions, LinearDenoiser};

pub trait Denoiser: Send + Sync {
    /// Estimate of `n₀` given `x_scaled = n_t/s`, the conditioning mixture `y` and the noise level.
    fn denoise(
        &self,
        x_scaled: &ComplexSpectrogram,
        y: &ComplexSpectrogram,
        sigma: f64,
    ) -> Result<ComplexSpectrogram>;

    fn id(&self) -> String;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(
        &self,
        x_scaled: &ComplexSpectrogram,
        y: &ComplexSpectrogram,
        sigma: f64,
    ) -> Result<ComplexSpectrogram> {
        (**self).denoise(x_scaled, y, sigma)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn denoise(
        &self,
        x_scaled: &ComplexSpectrogram,
        y: &ComplexSpectrogram,
        sigma: f64,
    ) -> Result<ComplexSpectrogram> {
        (**self).denoise(x_scaled, y, sigma)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

/// Input/output scalings and loss weight of the EDM parametrisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preconditioning {
    pub sigma_data: f64,
}

impl Default for Preconditioning {
    fn default() -> Self {
        Self { sigma_data: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreconditionCoeffs {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
    /// Loss weight w(σ); `w·c_out² = 1`.
    pub weight: f64,
}

impl Preconditioning {
    pub fn coeffs(&self, sigma: f64) -> Result<PreconditionCoeffs> {
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        let sd = self.sigma_data;
        let total = sigma * sigma + sd * sd;
        Ok(PreconditionCoeffs {
            c_skip: sd * sd / total,
            c_out: sigma * sd / total.sqrt(),
            c_in: 1.0 / total.sqrt(),
            c_noise: sigma.ln() / 4.0,
            weight: total / (sigma * sd).powi(2),
        })
    }

    pub fn weight(&self, sigma: f64) -> Result<f64> {
        Ok(self.coeffs(sigma)?.weight)
    }
}

/// The raw network `F` wrapped by [`Preconditioned`].
pub trait RawNetwork: Send + Sync {
    fn forward(
        &self,
        input: &ComplexSpectrogram,
        y: &ComplexSpectrogram,
        c_noise: f64,
    ) -> Result<ComplexSpectrogram>;

    fn id(&self) -> String;
}

/// `D(x) = c_skip·x + c_out·F(c_in·x, y, c_noise)`.
pub struct Preconditioned<N> {
    pub network: N,
    pub precond: Preconditioning,
}

impl<N: RawNetwork> Denoiser for Preconditioned<N> {
    fn denoise(
        &self,
        x_scaled: &ComplexSpectrogram,
        y: &ComplexSpectrogram,
        sigma: f64,
    ) -> Result<ComplexSpectrogram> {
        let c = self.precond.coeffs(sigma)?;
        let raw = self.network.forward(&x_scaled.scale(c.c_in), y, c.c_noise)?;
        x_scaled.zip_map(&raw, |x, f| x * c.c_skip + f * c.c_out)
    }

    fn id(&self) -> String {
        format!("preconditioned({})", self.network.id())
    }
}

/// Posterior mean under the empirical prior `{a_j}` observed through
/// `x = n₀ + σ·ε` with circular complex `ε`:
/// `Σ_j softmax_j(−‖x − a_j‖²/σ²) · a_j`, evaluated with log-sum-exp.
pub fn oracle_denoise(
    atoms: &[ComplexSpectrogram],
    x_scaled: &ComplexSpectrogram,
    sigma: f64,
) -> Result<ComplexSpectrogram> {
    let first = atoms
        .first()
        .ok_or_else(|| Error::Argument("oracle needs at least one atom".into()))?;
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if atoms.len() == 1 {
        first.ensure_same_shape(x_scaled)?;
        return Ok(first.clone());
    }
    let inv_var = 1.0 / (sigma * sigma);
    let logits = atoms
        .iter()
        .map(|a| Ok(-a.dist_sqr(x_scaled)? * inv_var))
        .collect::<Result<Vec<f64>>>()?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();

    let mut out = vec![Complex64::new(0.0, 0.0); x_scaled.dim()];
    for (a, w) in atoms.iter().zip(&weights) {
        let w = w / total;
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(a.as_slice()) {
            *o += v * w;
        }
    }
    ComplexSpectrogram::from_vec(x_scaled.bins(), x_scaled.frames(), out)
}

/// Exact posterior-mean denoiser for an empirical prior (ignores `y`).
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    atoms: Vec<ComplexSpectrogram>,
}

impl OracleDenoiser {
    pub fn new(atoms: Vec<ComplexSpectrogram>) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::Argument("oracle needs at least one atom".into()))?;
        for a in &atoms {
            first.ensure_same_shape(a)?;
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[ComplexSpectrogram] {
        &self.atoms
    }
}

impl Denoiser for OracleDenoiser {
    fn denoise(
        &self,
        x_scaled: &ComplexSpectrogram,
        _y: &ComplexSpectrogram,
        sigma: f64,
    ) -> Result<ComplexSpectrogram> {
        oracle_denoise(&self.atoms, x_scaled, sigma)
    }

    fn id(&self) -> String {
        format!("oracle[{} atoms]", self.atoms.len())
    }
}

/// Linear shrinkage `x·σ_p²/(σ_p² + σ²)`, the posterior mean for a `CN(0, σ_p²I)` prior.
pub fn gaussian_denoise(
    sigma_prior: f64,
    x_scaled: &ComplexSpectrogram,
    sigma: f64,
) -> Result<ComplexSpectrogram> {
    if sigma_prior.is_nan() || sigma_prior <= 0.0 {
        return Err(Error::Domain(format!("prior std must be positive, got {sigma_prior}")));
    }
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::Domain(format!("sigma must be non-negative, got {sigma}")));
    }
    let vp = sigma_prior * sigma_prior;
    Ok(x_scaled.scale(vp / (vp + sigma * sigma)))
}

#[derive(Debug, Clone, Copy)]
pub struct GaussianDenoiser {
    pub sigma_prior: f64,
}

impl Denoiser for GaussianDenoiser {
    fn denoise(
        &self,
        x_scaled: &ComplexSpectrogram,
        y: &ComplexSpectrogram,
        sigma: f64,
    ) -> Result<ComplexSpectrogram> {
        x_scaled.ensure_same_shape(y)?;
        gaussian_denoise(self.sigma_prior, x_scaled, sigma)
    }

    fn id(&self) -> String {
        format!("gaussian[sigma_prior={}]", self.sigma_prior)
    }
}

/// One clean/conditioning pair of the training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub n0: ComplexSpectrogram,
    pub y: ComplexSpectrogram,
}

/// How diffusion times are drawn when estimating the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeSampling {
    /// `t ~ U(t_eps, t_end)`
    Uniform,
    Fixed(f64),
}

/// One Monte-Carlo term of the objective.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub t: f64,
    pub sigma: f64,
    pub weight: f64,
    /// `D(n_t/s, y, σ) − n₀`
    pub residual: ComplexSpectrogram,
}

impl LossTerm {
    pub fn value(&self) -> f64 {
        self.weight * self.residual.norm_sqr()
    }
}

/// Draws the Monte-Carlo terms of `E[w·‖D(n_t/s, y, σ) − n₀‖²]`.
///
/// Draw order is `n_time_samples` rounds over the dataset; each term consumes
/// one time draw (for [`TimeSampling::Uniform`]) then the kernel noise.
pub fn loss_terms<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &D,
    dataset: &[TrainingPair],
    schedule: &ScheduleParams,
    precond: &Preconditioning,
    sampling: TimeSampling,
    n_time_samples: usize,
    rng: &mut R,
) -> Result<Vec<LossTerm>> {
    if dataset.is_empty() {
        return Err(Error::Argument("loss needs a non-empty dataset".into()));
    }
    if n_time_samples == 0 {
        return Err(Error::Argument("loss needs at least one time sample".into()));
    }
    let mut terms = Vec::with_capacity(dataset.len() * n_time_samples);
    for _ in 0..n_time_samples {
        for pair in dataset {
            let t = match sampling {
                TimeSampling::Uniform => rng.random_range(schedule.t_eps..schedule.t_end),
                TimeSampling::Fixed(t) => t,
            };
            let point = schedule.eval_point(t)?;
            if point.sigma <= 0.0 {
                return Err(Error::SingularTime);
            }
            let n_t = forward_perturb(&pair.n0, &point, rng);
            let denoised = model.denoise(&n_t.scale(1.0 / point.scale), &pair.y, point.sigma)?;
            terms.push(LossTerm {
                t,
                sigma: point.sigma,
                weight: precond.weight(point.sigma)?,
                residual: denoised.sub(&pair.n0)?,
            });
        }
    }
    Ok(terms)
}

/// Monte-Carlo estimate of the weighted denoising loss with `t ~ U(t_eps, t_end)`.
pub fn empirical_loss<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &D,
    dataset: &[TrainingPair],
    schedule: &ScheduleParams,
    precond: &Preconditioning,
    n_time_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    empirical_loss_with(
        model,
        dataset,
        schedule,
        precond,
        TimeSampling::Uniform,
        n_time_samples,
        rng,
    )
}

pub fn empirical_loss_with<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &D,
    dataset: &[TrainingPair],
    schedule: &ScheduleParams,
    precond: &Preconditioning,
    sampling: TimeSampling,
    n_time_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let terms = loss_terms(model, dataset, schedule, precond, sampling, n_time_samples, rng)?;
    Ok(terms.iter().map(LossTerm::value).sum::<f64>() / terms.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::sample_complex_gaussian;
    use crate::rng::stream;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar(re: f64) -> ComplexSpectrogram {
        ComplexSpectrogram::from_flat(vec![c(re, 0.0)])
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn coefficients_at_sigma_data() {
        let p = Preconditioning::default().coeffs(0.1).unwrap();
        assert!((p.c_skip - 0.5).abs() < 1e-15);
        assert!(rel(p.c_out, 0.070_710_678_118_654_75) < 1e-14);
        assert!(rel(p.c_in, 7.071_067_811_865_475) < 1e-14);
        assert!(rel(p.weight, 200.0) < 1e-14);
        assert!((p.c_noise - 0.1f64.ln() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn coefficients_at_unit_sigma() {
        let p = Preconditioning::default().coeffs(1.0).unwrap();
        assert!(rel(p.c_skip, 0.009_900_990_099_009_9) < 1e-12);
        assert!(rel(p.c_out, 0.099_503_719_020_998_92) < 1e-12);
        assert!(rel(p.weight, 101.0) < 1e-12);
        assert!(rel(p.weight * p.c_out * p.c_out, 1.0) < 1e-14);
    }

    #[test]
    fn coefficients_small_sigma_limit_and_domain() {
        let p = Preconditioning::default().coeffs(1e-9).unwrap();
        assert!((p.c_skip - 1.0).abs() < 1e-15);
        assert!((p.c_out - 1e-9).abs() < 1e-20);
        assert!(matches!(Preconditioning::default().coeffs(0.0), Err(Error::Domain(_))));
        assert!(matches!(Preconditioning::default().coeffs(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn weight_normalises_output_scale_on_log_grid() {
        let pre = Preconditioning::default();
        for i in 0..=600 {
            let sigma = 10f64.powf(-3.0 + i as f64 / 100.0);
            let p = pre.coeffs(sigma).unwrap();
            assert!(rel(p.weight * p.c_out * p.c_out, 1.0) < 1e-12, "sigma={sigma}");
        }
    }

    struct ZeroNet;
    impl RawNetwork for ZeroNet {
        fn forward(
            &self,
            input: &ComplexSpectrogram,
            _y: &ComplexSpectrogram,
            _c_noise: f64,
        ) -> Result<ComplexSpectrogram> {
            Ok(ComplexSpectrogram::zeros(input.bins(), input.frames()))
        }
        fn id(&self) -> String {
            "zero".into()
        }
    }

    #[test]
    fn zero_network_reduces_to_gaussian_shrinkage() {
        let d = Preconditioned {
            network: ZeroNet,
            precond: Preconditioning::default(),
        };
        let x = ComplexSpectrogram::from_flat(vec![c(0.3, -0.1), c(1.0, 2.0)]);
        for sigma in [0.01, 0.1, 1.0, 50.0] {
            let a = d.denoise(&x, &x, sigma).unwrap();
            let b = gaussian_denoise(0.1, &x, sigma).unwrap();
            assert!(a.dist_sqr(&b).unwrap().sqrt() < 1e-15);
        }
    }

    #[test]
    fn oracle_single_atom_returns_atom() {
        let a = ComplexSpectrogram::from_flat(vec![c(0.2, 0.1), c(-0.3, 0.0)]);
        let x = ComplexSpectrogram::from_flat(vec![c(5.0, 0.0), c(1.0, 1.0)]);
        assert_eq!(oracle_denoise(std::slice::from_ref(&a), &x, 0.7).unwrap(), a);
    }

    #[test]
    fn oracle_symmetric_midpoint() {
        let out = oracle_denoise(&[scalar(1.0), scalar(-1.0)], &scalar(0.0), 0.3).unwrap();
        assert_eq!(out.as_slice()[0], c(0.0, 0.0));
    }

    #[test]
    fn oracle_two_atom_closed_form() {
        // Complex noise with E|ε|² = σ²: posterior mean for ±a is tanh(2·x·a/σ²)·a.
        let x = 0.5;
        let sigma = 1.0;
        let out = oracle_denoise(&[scalar(1.0), scalar(-1.0)], &scalar(x), sigma).unwrap();
        let closed = (2.0 * x / (sigma * sigma)).tanh();
        // direct softmax over the two logits −(x∓1)²/σ²
        let (l1, l2) = (-(x - 1.0f64).powi(2), -(x + 1.0f64).powi(2));
        let direct = (l1.exp() - l2.exp()) / (l1.exp() + l2.exp());
        assert!((out.as_slice()[0].re - closed).abs() < 1e-15);
        assert!((closed - direct).abs() < 1e-15);
        assert!((closed - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn oracle_is_stable_for_tiny_sigma() {
        let atoms = vec![scalar(1.0), scalar(-1.0)];
        let out = oracle_denoise(&atoms, &scalar(0.9), 1e-8).unwrap();
        assert_eq!(out.as_slice()[0], c(1.0, 0.0));
    }

    #[test]
    fn oracle_shape_and_empty_errors() {
        let a = ComplexSpectrogram::zeros(1, 2);
        let x = ComplexSpectrogram::zeros(1, 3);
        assert!(matches!(
            oracle_denoise(&[a.clone(), a.clone()], &x, 1.0),
            Err(Error::Dimension { .. })
        ));
        assert!(oracle_denoise(&[], &x, 1.0).is_err());
        assert!(OracleDenoiser::new(vec![a, x]).is_err());
    }

    #[test]
    fn gaussian_examples() {
        let x = scalar(1.0);
        assert_eq!(gaussian_denoise(0.1, &x, 0.0).unwrap(), x);
        assert!((gaussian_denoise(0.1, &x, 0.1).unwrap().as_slice()[0].re - 0.5).abs() < 1e-15);
        assert!((gaussian_denoise(0.1, &x, 0.2).unwrap().as_slice()[0].re - 0.2).abs() < 1e-15);
        assert!(gaussian_denoise(0.0, &x, 0.2).is_err());
    }

    #[test]
    fn gaussian_score_consistency() {
        // score_from_denoised ∘ gaussian_denoise == −n_t/(s²(σ_d² + σ²))
        use crate::diffusion::score_from_denoised;
        let sched = ScheduleParams::default();
        let n_t = sample_complex_gaussian(2, 8, 0.3, &mut stream(5)).unwrap();
        for t in [0.02, 0.2, 0.5, 0.8, 1.0] {
            let p = sched.eval_point(t).unwrap();
            let d = gaussian_denoise(0.1, &n_t.scale(1.0 / p.scale), p.sigma).unwrap();
            let score = score_from_denoised(&d, &n_t, &p).unwrap();
            let exact = n_t.scale(-1.0 / (p.scale * p.scale * (0.01 + p.sigma * p.sigma)));
            let err = score.dist_sqr(&exact).unwrap().sqrt();
            assert!(err <= 1e-10 * exact.norm(), "t={t} err={err}");
        }
    }

    #[test]
    fn loss_of_exact_oracle_on_one_atom_is_zero() {
        let a = sample_complex_gaussian(1, 16, 0.01, &mut stream(3)).unwrap();
        let model = OracleDenoiser::new(vec![a.clone()]).unwrap();
        let data = vec![TrainingPair { n0: a.clone(), y: a }];
        let loss = empirical_loss(
            &model,
            &data,
            &ScheduleParams::default(),
            &Preconditioning::default(),
            50,
            &mut stream(4),
        )
        .unwrap();
        assert!(loss <= 1e-20, "loss={loss}");
    }

    struct Passthrough;
    impl Denoiser for Passthrough {
        fn denoise(
            &self,
            x: &ComplexSpectrogram,
            _y: &ComplexSpectrogram,
            _sigma: f64,
        ) -> Result<ComplexSpectrogram> {
            Ok(x.clone())
        }
        fn id(&self) -> String {
            "passthrough".into()
        }
    }

    #[test]
    fn passthrough_loss_matches_analytic_expectation() {
        let d = 16;
        let a = sample_complex_gaussian(1, d, 0.01, &mut stream(6)).unwrap();
        let data = vec![TrainingPair { n0: a.clone(), y: a }];
        let sched = ScheduleParams::default();
        let pre = Preconditioning::default();
        let t = 0.4;
        let sigma = sched.sigma(t).unwrap();
        let expected = pre.weight(sigma).unwrap() * sigma * sigma * d as f64;

        let terms = loss_terms(
            &Passthrough,
            &data,
            &sched,
            &pre,
            TimeSampling::Fixed(t),
            4000,
            &mut stream(7),
        )
        .unwrap();
        let vals: Vec<f64> = terms.iter().map(LossTerm::value).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "mean={mean} expected={expected} se={se}");
    }

    #[test]
    fn loss_argument_errors() {
        let sched = ScheduleParams::default();
        let pre = Preconditioning::default();
        assert!(matches!(
            empirical_loss(&Passthrough, &[], &sched, &pre, 1, &mut stream(0)),
            Err(Error::Argument(_))
        ));
        let a = scalar(1.0);
        let data = vec![TrainingPair { n0: a.clone(), y: a }];
        assert!(empirical_loss(&Passthrough, &data, &sched, &pre, 0, &mut stream(0)).is_err());
    }

    #[test]
    fn loss_is_deterministic_given_seed() {
        let a = sample_complex_gaussian(1, 8, 0.01, &mut stream(8)).unwrap();
        let b = sample_complex_gaussian(1, 8, 0.01, &mut stream(9)).unwrap();
        let model = OracleDenoiser::new(vec![a.clone(), b.clone()]).unwrap();
        let data = vec![
            TrainingPair { n0: a.clone(), y: a },
            TrainingPair { n0: b.clone(), y: b },
        ];
        let sched = ScheduleParams::default();
        let pre = Preconditioning::default();
        let l1 = empirical_loss(&model, &data, &sched, &pre, 20, &mut stream(10)).unwrap();
        let l2 = empirical_loss(&model, &data, &sched, &pre, 20, &mut stream(10)).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
    }
}
