//! Reverse-time samplers: predictor-corrector (Euler–Maruyama + annealed Langevin)
//! and the stochastic Heun sampler with churn, plus the final subtraction `x̂ = y − n̂₀`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::diffusion::{
    probability_flow_drift, reverse_drift, sample_complex_gaussian, score_from_denoised,
};
use crate::error::{Error, Result};
use crate::rng::standard_complex;
use crate::schedule::{SchedulePoint, ScheduleParams};
use crate::spectrogram::ComplexSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Pc,
    Edm,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Pc => "pc",
            SamplerKind::Edm => "edm",
        })
    }
}

/// Predictor variant of the PC sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorMode {
    /// Euler–Maruyama on the reverse SDE.
    #[default]
    Sde,
    /// Noise-free Euler on the probability-flow ODE; the corrector is disabled.
    EulerOde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub n_steps: usize,
    /// Corrector signal-to-noise ratio.
    pub r: f64,
    pub n_corrector: usize,
    pub predictor: PredictorMode,
    #[serde(with = "extended_f64")]
    pub s_churn: f64,
    pub s_min: f64,
    #[serde(with = "extended_f64")]
    pub s_max: f64,
    pub s_noise: f64,
    pub seed: u64,
    /// Last grid time; 0 integrates to the clean end point.
    pub t_floor: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Edm,
            n_steps: 16,
            r: 0.5,
            n_corrector: 1,
            predictor: PredictorMode::Sde,
            s_churn: f64::INFINITY,
            s_min: 0.0,
            s_max: f64::INFINITY,
            s_noise: 1.0,
            seed: 0,
            t_floor: 0.0,
        }
    }
}

impl SamplerConfig {
    pub fn pc(n_steps: usize) -> Self {
        Self {
            kind: SamplerKind::Pc,
            n_steps,
            ..Self::default()
        }
    }

    pub fn edm(n_steps: usize) -> Self {
        Self {
            kind: SamplerKind::Edm,
            n_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Argument("n_steps must be at least 1".into()));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("r must be positive, got {}", self.r)));
        }
        if !(self.s_noise > 0.0 && self.s_noise.is_finite()) {
            return Err(Error::Config(format!("s_noise must be positive, got {}", self.s_noise)));
        }
        if self.s_churn.is_nan() || self.s_churn < 0.0 {
            return Err(Error::Config(format!("s_churn must be non-negative, got {}", self.s_churn)));
        }
        if !(self.s_min >= 0.0 && self.s_min <= self.s_max) {
            return Err(Error::Config(format!(
                "need 0 <= s_min <= s_max, got s_min={} s_max={}",
                self.s_min, self.s_max
            )));
        }
        if !(0.0..1.0).contains(&self.t_floor) {
            return Err(Error::Config(format!("t_floor must be in [0, 1), got {}", self.t_floor)));
        }
        Ok(())
    }

    /// Denoiser evaluations one run performs.
    pub fn expected_evaluations(&self) -> usize {
        let n = self.n_steps;
        let last_noisy = self.t_floor > 0.0;
        match self.kind {
            SamplerKind::Pc if self.predictor == PredictorMode::EulerOde => n,
            SamplerKind::Pc => {
                let corrected = if last_noisy { n } else { n - 1 };
                n + corrected * self.n_corrector
            }
            SamplerKind::Edm => {
                if last_noisy {
                    2 * n
                } else {
                    2 * n - 1
                }
            }
        }
    }
}

/// f64 fields that may be infinite; infinities travel as the strings `"inf"`/`"-inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                other => other
                    .parse()
                    .map_err(|_| serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub evaluations: usize,
    /// Corrector steps skipped because the score vanished.
    pub skipped_correctors: usize,
    /// Churned noise levels clipped to the schedule maximum.
    pub sigma_hat_clips: usize,
}

impl SamplerDiagnostics {
    pub fn merge(&mut self, other: &Self) {
        self.evaluations += other.evaluations;
        self.skipped_correctors += other.skipped_correctors;
        self.sigma_hat_clips += other.sigma_hat_clips;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// Estimate of the environmental noise `n₀`.
    pub n0: ComplexSpectrogram,
    pub diagnostics: SamplerDiagnostics,
}

/// Evenly spaced times from `t_end` down to `t_floor` (0 by default), `n_steps + 1` points.
pub fn time_grid(schedule: &ScheduleParams, n_steps: usize) -> Result<Vec<f64>> {
    time_grid_to(schedule, n_steps, 0.0)
}

pub fn time_grid_to(schedule: &ScheduleParams, n_steps: usize, t_floor: f64) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::Argument("n_steps must be at least 1".into()));
    }
    if !(0.0..schedule.t_end).contains(&t_floor) {
        return Err(Error::Argument(format!("t_floor must be in [0, t_end), got {t_floor}")));
    }
    let span = schedule.t_end - t_floor;
    let mut grid: Vec<f64> = (0..=n_steps)
        .map(|i| t_floor + span * (1.0 - i as f64 / n_steps as f64))
        .collect();
    grid[0] = schedule.t_end;
    grid[n_steps] = t_floor;
    Ok(grid)
}

/// Terminal state `n_T ~ CN(0, s(T)²σ(T)² I)`.
pub fn init_prior<R: Rng + ?Sized>(
    schedule: &ScheduleParams,
    bins: usize,
    frames: usize,
    rng: &mut R,
) -> Result<ComplexSpectrogram> {
    let point = schedule.eval_point(schedule.t_end)?;
    let std = point.kernel_std();
    sample_complex_gaussian(bins, frames, std * std, rng)
}

/// Runs the sampler selected by `cfg.kind`.
pub fn sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    y: &ComplexSpectrogram,
    cfg: &SamplerConfig,
    schedule: &ScheduleParams,
    rng: &mut R,
) -> Result<SampleOutput> {
    match cfg.kind {
        SamplerKind::Pc => pc_sample(denoiser, y, cfg, schedule, rng),
        SamplerKind::Edm => edm_sample(denoiser, y, cfg, schedule, rng),
    }
}

struct Counted<'a, D: ?Sized> {
    inner: &'a D,
    calls: usize,
}

impl<D: Denoiser + ?Sized> Counted<'_, D> {
    fn denoise(&mut self, x: &ComplexSpectrogram, y: &ComplexSpectrogram, sigma: f64) -> Result<ComplexSpectrogram> {
        self.calls += 1;
        let out = self.inner.denoise(x, y, sigma)?;
        x.ensure_same_shape(&out)?;
        if !out.is_finite() {
            return Err(Error::Domain(format!("denoiser produced non-finite output at sigma={sigma}")));
        }
        Ok(out)
    }

    fn score(&mut self, n: &ComplexSpectrogram, y: &ComplexSpectrogram, p: &SchedulePoint) -> Result<ComplexSpectrogram> {
        let denoised = self.denoise(&n.scale(1.0 / p.scale), y, p.sigma)?;
        score_from_denoised(&denoised, n, p)
    }
}

fn check_kind(cfg: &SamplerConfig, kind: SamplerKind) -> Result<()> {
    cfg.validate()?;
    if cfg.kind != kind {
        return Err(Error::Argument(format!("sampler kind is {}, expected {kind}", cfg.kind)));
    }
    Ok(())
}

fn noise_like<R: Rng + ?Sized>(x: &ComplexSpectrogram, rng: &mut R) -> ComplexSpectrogram {
    x.map(|_| standard_complex(rng))
}

pub fn pc_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    y: &ComplexSpectrogram,
    cfg: &SamplerConfig,
    schedule: &ScheduleParams,
    rng: &mut R,
) -> Result<SampleOutput> {
    check_kind(cfg, SamplerKind::Pc)?;
    let grid = time_grid_to(schedule, cfg.n_steps, cfg.t_floor)?;
    let ode = cfg.predictor == PredictorMode::EulerOde;
    let mut model = Counted { inner: denoiser, calls: 0 };
    let mut diag = SamplerDiagnostics::default();

    let mut n = init_prior(schedule, y.bins(), y.frames(), rng)?;
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let h = t - t_next;
        let p = schedule.eval_point(t)?;
        let score = model.score(&n, y, &p)?;
        if ode {
            let drift = probability_flow_drift(&n, &p, &score)?;
            n.axpy(-h, &drift)?;
            continue;
        }
        let drift = reverse_drift(&n, &p, &score)?;
        n.axpy(-h, &drift)?;
        n.axpy(p.diffusion_coeff * h.sqrt(), &noise_like(&n, rng))?;

        if t_next <= 0.0 {
            continue;
        }
        let pc = schedule.eval_point(t_next)?;
        for _ in 0..cfg.n_corrector {
            let score = model.score(&n, y, &pc)?;
            let eps = noise_like(&n, rng);
            let score_norm = score.norm();
            if score_norm == 0.0 {
                diag.skipped_correctors += 1;
                continue;
            }
            let ratio = cfg.r * eps.norm() / score_norm;
            let delta = 2.0 * ratio * ratio;
            n.axpy(delta, &score)?;
            n.axpy((2.0 * delta).sqrt(), &eps)?;
        }
    }

    let last = schedule.eval_point(*grid.last().expect("grid non-empty"))?;
    diag.evaluations = model.calls;
    Ok(SampleOutput {
        n0: n.scale(1.0 / last.scale),
        diagnostics: diag,
    })
}

/// Stochastic Heun sampler in the scale-free variable `z = n/s = n₀ + σ·ε`.
pub fn edm_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    y: &ComplexSpectrogram,
    cfg: &SamplerConfig,
    schedule: &ScheduleParams,
    rng: &mut R,
) -> Result<SampleOutput> {
    check_kind(cfg, SamplerKind::Edm)?;
    let grid = time_grid_to(schedule, cfg.n_steps, cfg.t_floor)?;
    let sigmas = grid
        .iter()
        .map(|&t| schedule.sigma(t))
        .collect::<Result<Vec<f64>>>()?;
    let sigma_max = schedule.sigma_max()?;
    let gamma = (cfg.s_churn / cfg.n_steps as f64).min(std::f64::consts::SQRT_2 - 1.0);
    let mut model = Counted { inner: denoiser, calls: 0 };
    let mut diag = SamplerDiagnostics::default();

    let start = schedule.eval_point(schedule.t_end)?;
    let mut z = init_prior(schedule, y.bins(), y.frames(), rng)?.scale(1.0 / start.scale);
    for w in sigmas.windows(2) {
        let (sigma, sigma_next) = (w[0], w[1]);
        let mut sigma_hat = sigma;
        if gamma > 0.0 && sigma >= cfg.s_min && sigma <= cfg.s_max {
            sigma_hat = (1.0 + gamma) * sigma;
            if sigma_hat > sigma_max {
                sigma_hat = sigma_max;
                diag.sigma_hat_clips += 1;
            }
            let extra = (sigma_hat * sigma_hat - sigma * sigma).max(0.0).sqrt();
            if extra > 0.0 {
                z.axpy(cfg.s_noise * extra, &noise_like(&z, rng))?;
            }
        }

        let d = slope(&mut model, &z, y, sigma_hat)?;
        let mut z_next = z.clone();
        z_next.axpy(sigma_next - sigma_hat, &d)?;
        if sigma_next > 0.0 {
            let d_next = slope(&mut model, &z_next, y, sigma_next)?;
            let avg = d.add(&d_next)?.scale(0.5);
            z_next = z;
            z_next.axpy(sigma_next - sigma_hat, &avg)?;
        }
        z = z_next;
    }

    diag.evaluations = model.calls;
    Ok(SampleOutput { n0: z, diagnostics: diag })
}

/// `(z − D(z, y, σ))/σ`
fn slope<D: Denoiser + ?Sized>(
    model: &mut Counted<'_, D>,
    z: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    sigma: f64,
) -> Result<ComplexSpectrogram> {
    let denoised = model.denoise(z, y, sigma)?;
    Ok(z.sub(&denoised)?.scale(1.0 / sigma))
}

/// `x̂ = y − n̂₀`
pub fn enhance(y: &ComplexSpectrogram, n0_estimate: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    y.sub(n0_estimate)
}
