//! Per-noise-level linear denoiser `D = a(σ)·x + b(σ)·y`, fitted by weighted
//! complex least squares on the denoising objective.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Denoiser, Preconditioning, TrainingPair};
use crate::diffusion::forward_perturb;
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;
use crate::spectrogram::ComplexSpectrogram;

const FORMAT: &str = "envdiff-linear-denoiser";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub n_sigma_bins: usize,
    /// Noisy draws per training pair.
    pub draws_per_pair: usize,
    /// Fit separate coefficients for every frequency row instead of one pair per σ bin.
    pub per_frequency: bool,
    /// Cycle each pair's draws through the σ bins, drawing `t` uniformly within
    /// the bin's time interval. Otherwise `t ~ U(t_eps, t_end)`, which leaves
    /// the high-σ bins (a short stretch of time near `t_end`) with few draws.
    pub stratified: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_sigma_bins: 32,
            draws_per_pair: 64,
            per_frequency: false,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub samples_per_bin: Vec<usize>,
    /// Bins whose normal equations were singular (fell back to `b = 0`, Wiener `a`).
    pub singular_bins: Vec<usize>,
    /// Empty bins that copied the nearest populated bin.
    pub inherited_bins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDenoiser {
    format: String,
    version: u32,
    id: String,
    sigma_data: f64,
    /// `n_sigma_bins + 1` log-spaced edges.
    edges: Vec<f64>,
    /// Number of frequency rows with their own coefficients, or `None` for shared scalars.
    frequency_rows: Option<usize>,
    /// `[a.re, a.im, b.re, b.im]`, bin-major then row.
    coeffs: Vec<[f64; 4]>,
}

#[derive(Clone, Copy, Default)]
struct NormalEquations {
    sxx: f64,
    syy: f64,
    sxy: Complex64,
    sxn: Complex64,
    syn: Complex64,
    count: usize,
}

impl NormalEquations {
    fn accumulate(&mut self, w: f64, x: Complex64, y: Complex64, n0: Complex64) {
        self.sxx += w * x.norm_sqr();
        self.syy += w * y.norm_sqr();
        self.sxy += x.conj() * y * w;
        self.sxn += x.conj() * n0 * w;
        self.syn += y.conj() * n0 * w;
    }

    /// Returns `(a, b, singular)`.
    fn solve(&self) -> (Complex64, Complex64, bool) {
        let det = self.sxx * self.syy - self.sxy.norm_sqr();
        if self.sxx <= 0.0 {
            return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), true);
        }
        if self.syy <= 0.0 || det <= 1e-12 * self.sxx * self.syy {
            return (self.sxn / self.sxx, Complex64::new(0.0, 0.0), true);
        }
        // [sxx  sxy; conj(sxy)  syy] [a; b] = [sxn; syn]
        let a = (self.sxn * self.syy - self.sxy * self.syn) / det;
        let b = (self.syn * self.sxx - self.sxy.conj() * self.sxn) / det;
        (a, b, false)
    }
}

impl LinearDenoiser {
    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Coefficients `(a, b)` for a σ bin and frequency row.
    pub fn coefficients(&self, bin: usize, row: usize) -> (Complex64, Complex64) {
        let rows = self.frequency_rows.unwrap_or(1);
        let row = if self.frequency_rows.is_some() { row } else { 0 };
        let [ar, ai, br, bi] = self.coeffs[bin * rows + row];
        (Complex64::new(ar, ai), Complex64::new(br, bi))
    }

    fn bin_of(&self, sigma: f64) -> usize {
        bin_index(&self.edges, sigma)
    }

    /// Coefficients at `sigma`. Below the first edge they blend toward the identity
    /// `(a, b) = (1, 0)` quadratically in σ, so `D(x, y, σ) → x` as σ → 0.
    fn coefficients_at(&self, sigma: f64, row: usize) -> (Complex64, Complex64) {
        let (a, b) = self.coefficients(self.bin_of(sigma), row);
        let lo = self.edges[0];
        if sigma < lo {
            let r = (sigma / lo).powi(2);
            let one = Complex64::new(1.0, 0.0);
            (one - (one - a) * r, b * r)
        } else {
            (a, b)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        model.check().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        if self.edges.len() < 2 || self.edges.windows(2).any(|w| !(w[0] > 0.0 && w[1] > w[0])) {
            return Err(Error::Config("model sigma-bin edges must be positive and increasing".into()));
        }
        let rows = self.frequency_rows.unwrap_or(1);
        if self.coeffs.len() != self.n_bins() * rows {
            return Err(Error::Config(format!(
                "model has {} coefficient pairs, expected {}",
                self.coeffs.len(),
                self.n_bins() * rows
            )));
        }
        if self.coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("model coefficients must be finite".into()));
        }
        Ok(())
    }
}

impl Denoiser for LinearDenoiser {
    fn denoise(
        &self,
        x_scaled: &ComplexSpectrogram,
        y: &ComplexSpectrogram,
        sigma: f64,
    ) -> Result<ComplexSpectrogram> {
        x_scaled.ensure_same_shape(y)?;
        if sigma.is_nan() || sigma < 0.0 {
            return Err(Error::Domain(format!("sigma must be non-negative, got {sigma}")));
        }
        if let Some(rows) = self.frequency_rows {
            if rows != x_scaled.bins() {
                return Err(Error::dims(format!("{rows} frequency rows"), x_scaled.bins()));
            }
        }
        let frames = x_scaled.frames();
        let mut out = ComplexSpectrogram::zeros(x_scaled.bins(), frames);
        let shared = self.coefficients_at(sigma, 0);
        for (i, ((o, x), yv)) in out
            .as_mut_slice()
            .iter_mut()
            .zip(x_scaled.as_slice())
            .zip(y.as_slice())
            .enumerate()
        {
            let (a, b) = if self.frequency_rows.is_some() {
                self.coefficients_at(sigma, i / frames)
            } else {
                shared
            };
            *o = a * x + b * yv;
        }
        Ok(out)
    }

    fn id(&self) -> String {
        self.id.clone()
    }
}

fn bin_index(edges: &[f64], sigma: f64) -> usize {
    let n = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[n]);
    if sigma <= lo {
        return 0;
    }
    let pos = (sigma / lo).ln() / (hi / lo).ln() * n as f64;
    (pos.floor() as usize).min(n - 1)
}

fn log_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    (0..=n)
        .map(|i| {
            if i == n {
                hi
            } else {
                lo * (ratio * i as f64 / n as f64).exp()
            }
        })
        .collect()
}

/// Fits `(a, b)` per σ bin by minimising `Σ w(σ)·|a·x + b·y − n₀|²` over noisy
/// draws `x = n₀ + σ·ε` with `t` uniform (within each bin when stratified).
/// Bins are log-spaced over `[σ(t_eps), σ(t_end)]`.
pub fn fit_linear_denoiser<R: Rng + ?Sized>(
    dataset: &[TrainingPair],
    schedule: &ScheduleParams,
    precond: &Preconditioning,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<(LinearDenoiser, FitDiagnostics)> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Argument("cannot fit on an empty dataset".into()))?;
    if opts.n_sigma_bins == 0 || opts.draws_per_pair == 0 {
        return Err(Error::Argument("need at least one sigma bin and one draw per pair".into()));
    }
    let rows = first.n0.bins();
    for pair in dataset {
        pair.n0.ensure_same_shape(&pair.y)?;
        if opts.per_frequency && pair.n0.bins() != rows {
            return Err(Error::dims(format!("{rows} frequency rows"), pair.n0.bins()));
        }
    }

    let edges = log_edges(
        schedule.sigma(schedule.t_eps)?,
        schedule.sigma_max()?,
        opts.n_sigma_bins,
    );
    let n_rows = if opts.per_frequency { rows } else { 1 };
    let mut acc = vec![NormalEquations::default(); opts.n_sigma_bins * n_rows];
    let mut counts = vec![0usize; opts.n_sigma_bins];
    let bin_times = (0..opts.n_sigma_bins)
        .map(|b| {
            let lo = schedule.sigma_inverse(edges[b])?.max(schedule.t_eps);
            let hi = if b + 1 == opts.n_sigma_bins {
                schedule.t_end
            } else {
                schedule.sigma_inverse(edges[b + 1])?.min(schedule.t_end)
            };
            Ok((lo, hi.max(lo)))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;

    for k in 0..opts.draws_per_pair {
        for (p, pair) in dataset.iter().enumerate() {
            let t = if opts.stratified {
                let (lo, hi) = bin_times[(k + p) % opts.n_sigma_bins];
                if hi > lo { rng.random_range(lo..hi) } else { lo }
            } else {
                rng.random_range(schedule.t_eps..schedule.t_end)
            };
            let point = schedule.eval_point(t)?;
            let x = forward_perturb(&pair.n0, &point, rng).scale(1.0 / point.scale);
            let w = precond.weight(point.sigma)?;
            let bin = bin_index(&edges, point.sigma);
            counts[bin] += 1;
            let frames = x.frames();
            for (i, ((xv, yv), nv)) in x
                .as_slice()
                .iter()
                .zip(pair.y.as_slice())
                .zip(pair.n0.as_slice())
                .enumerate()
            {
                let row = if opts.per_frequency { i / frames } else { 0 };
                acc[bin * n_rows + row].accumulate(w, *xv, *yv, *nv);
            }
            for row in 0..n_rows {
                acc[bin * n_rows + row].count += 1;
            }
        }
    }

    let mut diag = FitDiagnostics {
        samples_per_bin: counts.clone(),
        ..Default::default()
    };
    let mut solved: Vec<Option<[f64; 4]>> = vec![None; opts.n_sigma_bins * n_rows];
    for bin in 0..opts.n_sigma_bins {
        if counts[bin] == 0 {
            continue;
        }
        let mut any_singular = false;
        for row in 0..n_rows {
            let (a, b, singular) = acc[bin * n_rows + row].solve();
            any_singular |= singular;
            solved[bin * n_rows + row] = Some([a.re, a.im, b.re, b.im]);
        }
        if any_singular {
            diag.singular_bins.push(bin);
        }
    }

    let populated: Vec<usize> = (0..opts.n_sigma_bins).filter(|&b| counts[b] > 0).collect();
    let mut coeffs = Vec::with_capacity(solved.len());
    for bin in 0..opts.n_sigma_bins {
        let source = if counts[bin] > 0 {
            bin
        } else {
            diag.inherited_bins.push(bin);
            // nearest populated bin; ties go to the lower noise level
            *populated
                .iter()
                .min_by_key(|&&p| (p as isize - bin as isize).unsigned_abs())
                .expect("dataset non-empty so some bin is populated")
        };
        for row in 0..n_rows {
            coeffs.push(solved[source * n_rows + row].expect("populated bin solved"));
        }
    }

    let model = LinearDenoiser {
        format: FORMAT.into(),
        version: VERSION,
        id: format!(
            "linear[{} bins{}]",
            opts.n_sigma_bins,
            if opts.per_frequency { ", per-frequency" } else { "" }
        ),
        sigma_data: precond.sigma_data,
        edges,
        frequency_rows: opts.per_frequency.then_some(rows),
        coeffs,
    };
    Ok((model, diag))
}
