//! Shifted-cosine noise schedule under the variance-preserving assumption.
//!
//! The log-SNR is `λ(t) = −2 ln tan(πt/2) + 2ν`, so `σ(t) = e^(−ν) tan(πt/2)`,
//! `s(t) = 1/√(1 + σ²)` and the VP rate `β(t)` follows in closed form. Two clamps
//! keep the endpoint `t = 1` finite: `λ ≥ λ_min` and `β ≤ β_max`. They are applied
//! independently; `σ` and `s` are always derived from the clamped `λ`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    /// Log-SNR shift ν.
    pub nu: f64,
    /// Lower clamp on the log-SNR. `-inf` disables the clamp.
    pub lambda_min: f64,
    /// Upper clamp on β(t). `inf` disables the clamp.
    pub beta_max: f64,
    /// Diffusion horizon.
    pub t_end: f64,
    /// Smallest time drawn during training.
    pub t_eps: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            nu: 1.5,
            lambda_min: -12.0,
            beta_max: 10.0,
            t_end: 1.0,
            t_eps: 0.01,
        }
    }
}

/// Log-SNR value; `t = 0` carries no noise and has no finite log-SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogSnr {
    Finite(f64),
    NoNoise,
}

impl LogSnr {
    pub fn finite(self) -> Option<f64> {
        match self {
            LogSnr::Finite(v) => Some(v),
            LogSnr::NoNoise => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClampFlags {
    pub lambda: bool,
    pub beta: bool,
}

/// The schedule evaluated at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePoint {
    pub t: f64,
    pub lambda: LogSnr,
    pub sigma: f64,
    /// Signal scale s(t).
    pub scale: f64,
    pub beta: f64,
    /// f(t) = −β/2
    pub drift_coeff: f64,
    /// g(t) = √β
    pub diffusion_coeff: f64,
    pub clamped: ClampFlags,
}

impl SchedulePoint {
    /// Standard deviation of the forward kernel, `s·σ`.
    pub fn kernel_std(&self) -> f64 {
        self.scale * self.sigma
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.nu, self.t_end, self.t_eps];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("schedule: nu, t_end and t_eps must be finite".into()));
        }
        if !(self.t_eps > 0.0 && self.t_eps < self.t_end) {
            return Err(Error::Config(format!(
                "schedule: need 0 < t_eps < t_end, got t_eps={} t_end={}",
                self.t_eps, self.t_end
            )));
        }
        if self.t_end > 1.0 {
            return Err(Error::Config(format!(
                "schedule: t_end must not exceed 1 (tan(pi t/2) diverges), got {}",
                self.t_end
            )));
        }
        if self.lambda_min.is_nan() || self.lambda_min >= 2.0 * self.nu {
            return Err(Error::Config(format!(
                "schedule: lambda_min ({}) must be below 2*nu ({})",
                self.lambda_min,
                2.0 * self.nu
            )));
        }
        if self.beta_max.is_nan() || self.beta_max <= 0.0 {
            return Err(Error::Config(format!(
                "schedule: beta_max must be positive, got {}",
                self.beta_max
            )));
        }
        Ok(())
    }

    /// Same ν and horizon with both clamps lifted.
    pub fn unclamped(&self) -> Self {
        Self {
            lambda_min: f64::NEG_INFINITY,
            beta_max: f64::INFINITY,
            ..*self
        }
    }

    /// Log-SNR before clamping; `+inf` at `t = 0`, `-inf` at `t = 1`.
    pub fn lambda_raw(&self, t: f64) -> f64 {
        if t <= 0.0 {
            f64::INFINITY
        } else if t >= 1.0 {
            f64::NEG_INFINITY
        } else {
            -2.0 * (FRAC_PI_2 * t).tan().ln() + 2.0 * self.nu
        }
    }

    fn sigma_raw(&self, t: f64) -> f64 {
        if t >= 1.0 {
            f64::INFINITY
        } else {
            (-self.nu).exp() * (FRAC_PI_2 * t).tan()
        }
    }

    /// Largest noise level the clamped log-SNR allows, `e^(−λ_min/2)`.
    pub fn sigma_cap(&self) -> f64 {
        (-0.5 * self.lambda_min).exp()
    }

    /// β(t) before clamping, choosing the better-conditioned algebraic form.
    pub fn beta_raw(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else if t >= 1.0 {
            f64::INFINITY
        } else if t > 0.25 && t < 0.75 {
            beta_csc_form(self.nu, t)
        } else {
            beta_tan_form(self.nu, t)
        }
    }

    pub fn eval_point(&self, t: f64) -> Result<SchedulePoint> {
        if !(0.0..=self.t_end).contains(&t) {
            return Err(Error::Domain(format!(
                "time {t} outside [0, {}]",
                self.t_end
            )));
        }
        if t == 0.0 {
            return Ok(SchedulePoint {
                t,
                lambda: LogSnr::NoNoise,
                sigma: 0.0,
                scale: 1.0,
                beta: 0.0,
                drift_coeff: 0.0,
                diffusion_coeff: 0.0,
                clamped: ClampFlags::default(),
            });
        }

        let mut clamped = ClampFlags::default();
        let raw = self.sigma_raw(t);
        let cap = self.sigma_cap();
        let (sigma, lambda) = if raw > cap {
            clamped.lambda = true;
            (cap, self.lambda_min)
        } else {
            (raw, -2.0 * raw.ln())
        };

        let beta_raw = self.beta_raw(t);
        let beta = if beta_raw > self.beta_max {
            clamped.beta = true;
            self.beta_max
        } else {
            beta_raw
        };

        if !sigma.is_finite() || !beta.is_finite() {
            return Err(Error::Domain(format!(
                "schedule is singular at t = {t} without clamps"
            )));
        }

        Ok(SchedulePoint {
            t,
            lambda: LogSnr::Finite(lambda),
            sigma,
            scale: 1.0 / (1.0 + sigma * sigma).sqrt(),
            beta,
            drift_coeff: -0.5 * beta,
            diffusion_coeff: beta.sqrt(),
            clamped,
        })
    }

    /// σ(t) only.
    pub fn sigma(&self, t: f64) -> Result<f64> {
        Ok(self.eval_point(t)?.sigma)
    }

    /// σ at the horizon, the largest noise level the samplers see.
    pub fn sigma_max(&self) -> Result<f64> {
        self.sigma(self.t_end)
    }

    /// Time at which the unclamped schedule reaches `sigma`: `t = (2/π)·atan(σ·e^ν)`.
    pub fn sigma_inverse(&self, sigma: f64) -> Result<f64> {
        if sigma.is_nan() || sigma < 0.0 {
            return Err(Error::Domain(format!("sigma must be non-negative, got {sigma}")));
        }
        let max = self.sigma_max()?;
        if sigma > max {
            return Err(Error::Domain(format!(
                "sigma {sigma} exceeds the schedule maximum {max}"
            )));
        }
        Ok((sigma * self.nu.exp()).atan() / FRAC_PI_2)
    }
}

/// `β = π/cos²(πt/2) · tan(πt/2)/(e^(2ν) + tan²(πt/2))`
pub fn beta_tan_form(nu: f64, t: f64) -> f64 {
    let u = FRAC_PI_2 * t;
    let (tan, cos) = (u.tan(), u.cos());
    PI / (cos * cos) * tan / ((2.0 * nu).exp() + tan * tan)
}

/// `β = 2π·csc(πt) / (1 + e^(2ν)·tan⁻²(πt/2))`
pub fn beta_csc_form(nu: f64, t: f64) -> f64 {
    let tan = (FRAC_PI_2 * t).tan();
    2.0 * PI / (PI * t).sin() / (1.0 + (2.0 * nu).exp() / (tan * tan))
}
