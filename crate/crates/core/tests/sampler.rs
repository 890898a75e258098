mod common;

use envdiff_core::denoiser::{Denoiser, GaussianDenoiser, OracleDenoiser};
use envdiff_core::rng::{stream, substream};
use envdiff_core::sampler::{
    edm_sample, init_prior, pc_sample, PredictorMode, SamplerConfig,
};
use envdiff_core::schedule::ScheduleParams;
use envdiff_core::{ComplexSpectrogram, Result};
use num_complex::Complex64;

const SIGMA_D: f64 = 0.1;
const STEPS: [usize; 4] = [8, 16, 32, 64];

fn edm_order_errors(schedule: &ScheduleParams) -> Vec<f64> {
    let g = GaussianDenoiser { sigma_prior: SIGMA_D };
    let y = ComplexSpectrogram::zeros(1, 8);
    let sigma_max = schedule.sigma_max().unwrap();
    let start = schedule.eval_point(schedule.t_end).unwrap();
    STEPS
        .iter()
        .map(|&n| {
            let cfg = SamplerConfig { s_churn: 0.0, ..SamplerConfig::edm(n) };
            let out = edm_sample(&g, &y, &cfg, schedule, &mut stream(77)).unwrap();
            let z_t = init_prior(schedule, 1, 8, &mut stream(77))
                .unwrap()
                .scale(1.0 / start.scale);
            let exact = z_t.scale(SIGMA_D / (SIGMA_D * SIGMA_D + sigma_max * sigma_max).sqrt());
            out.n0.dist_sqr(&exact).unwrap().sqrt() / exact.norm()
        })
        .collect()
}

#[test]
fn edm_heun_is_second_order() {
    let s = ScheduleParams::default();
    let err = edm_order_errors(&s);
    let h: Vec<f64> = STEPS.iter().map(|&n| 1.0 / n as f64).collect();
    let slope = common::loglog_slope(&h, &err);
    assert!(slope >= 1.8, "slope={slope} errors={err:?}");
}

/// Growth rate `a(t)` of the probability-flow ODE `dn/dt = a(t)·n` under a
/// Gaussian prior, evaluated from the closed-form shrinkage score.
fn pf_rate(s: &ScheduleParams, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let p = s.eval_point(t).unwrap();
    let var = p.scale * p.scale * (SIGMA_D * SIGMA_D + p.sigma * p.sigma);
    -0.5 * p.beta + 0.5 * p.beta / var
}

#[test]
fn euler_ode_predictor_is_first_order() {
    let s = ScheduleParams::default();
    let g = GaussianDenoiser { sigma_prior: SIGMA_D };
    let y = ComplexSpectrogram::zeros(1, 8);
    let beta_kink = bisect(|t| s.beta_raw(t) - s.beta_max, 0.5, 0.99);
    let integral = common::integrate_pieces(&|t| pf_rate(&s, t), 0.0, 1.0, &[beta_kink], 1e-13);
    let n_t = init_prior(&s, 1, 8, &mut stream(78)).unwrap();
    let exact = n_t.scale((-integral).exp());
    let err: Vec<f64> = STEPS
        .iter()
        .map(|&n| {
            let cfg = SamplerConfig { predictor: PredictorMode::EulerOde, ..SamplerConfig::pc(n) };
            let out = pc_sample(&g, &y, &cfg, &s, &mut stream(78)).unwrap();
            assert_eq!(out.diagnostics.evaluations, n);
            out.n0.dist_sqr(&exact).unwrap().sqrt() / exact.norm()
        })
        .collect();
    let h: Vec<f64> = STEPS.iter().map(|&n| 1.0 / n as f64).collect();
    let slope = common::loglog_slope(&h, &err);
    assert!((0.7..=1.3).contains(&slope), "slope={slope} errors={err:?}");
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(lo) < 0.0) == (f(mid) < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn pc_variance_ratio(cfg: SamplerConfig, d: usize, runs: u64) -> f64 {
    let s = ScheduleParams::default();
    let g = GaussianDenoiser { sigma_prior: SIGMA_D };
    let y = ComplexSpectrogram::zeros(1, d);
    let total: f64 = (0..runs)
        .map(|i| {
            let out = pc_sample(&g, &y, &cfg, &s, &mut substream(3, "pc-var", i)).unwrap();
            out.n0.norm_sqr() / d as f64
        })
        .sum();
    total / runs as f64 / (SIGMA_D * SIGMA_D)
}

#[test]
fn pc_predictor_reproduces_gaussian_prior_variance() {
    let ratio = pc_variance_ratio(SamplerConfig { n_corrector: 0, ..SamplerConfig::pc(32) }, 1, 2000);
    assert!((ratio - 1.0).abs() <= 0.10, "ratio={ratio}");
}

#[test]
fn pc_small_snr_corrector_keeps_prior_variance() {
    let ratio = pc_variance_ratio(SamplerConfig { r: 0.1, ..SamplerConfig::pc(32) }, 64, 2000);
    assert!((ratio - 1.0).abs() <= 0.10, "ratio={ratio}");
}

#[test]
fn pc_default_corrector_overshoots_prior_variance() {
    // r = 0.5 gives a Langevin step δ ≈ V/2 per corrector call, which is too
    // coarse to leave the Gaussian invariant: one step maps v to v/4 + V.
    let ratio = pc_variance_ratio(SamplerConfig::pc(32), 64, 2000);
    assert!((1.15..=1.40).contains(&ratio), "ratio={ratio}");
}

#[test]
fn edm_recovers_two_atom_balance() {
    let s = ScheduleParams::default();
    let a = ComplexSpectrogram::from_flat(vec![Complex64::new(0.1, 0.05); 4]);
    let oracle = OracleDenoiser::new(vec![a.clone(), a.scale(-1.0)]).unwrap();
    let y = ComplexSpectrogram::zeros(1, 4);
    let runs = 2000;
    let plus = (0..runs)
        .filter(|&i| {
            let out = edm_sample(&oracle, &y, &SamplerConfig::edm(16), &s, &mut substream(4, "atoms", i)).unwrap();
            out.n0.dist_sqr(&a).unwrap() < out.n0.dist_sqr(&a.scale(-1.0)).unwrap()
        })
        .count();
    let frac = plus as f64 / runs as f64;
    assert!((0.45..=0.55).contains(&frac), "frac={frac}");
}

#[test]
fn runs_are_deterministic_and_ignore_unused_conditioning() {
    let s = ScheduleParams::default();
    let g = GaussianDenoiser { sigma_prior: SIGMA_D };
    let y1 = ComplexSpectrogram::zeros(2, 5);
    let y2 = ComplexSpectrogram::from_flat(vec![Complex64::new(3.0, -1.0); 10]);
    let y2 = ComplexSpectrogram::from_vec(2, 5, y2.into_vec()).unwrap();
    for cfg in [SamplerConfig::pc(8), SamplerConfig::edm(8)] {
        let run = |y: &ComplexSpectrogram| -> Result<ComplexSpectrogram> {
            let f = if cfg.kind == envdiff_core::sampler::SamplerKind::Pc { pc_sample } else { edm_sample::<GaussianDenoiser, _> };
            Ok(f(&g, y, &cfg, &s, &mut stream(9))?.n0)
        };
        let a = run(&y1).unwrap();
        assert_eq!(a, run(&y1).unwrap());
        assert_eq!(a, run(&y2).unwrap());
    }
}

#[test]
fn degenerate_single_step_is_finite() {
    let s = ScheduleParams::default();
    let g = GaussianDenoiser { sigma_prior: SIGMA_D };
    let y = ComplexSpectrogram::zeros(3, 3);
    for cfg in [SamplerConfig::pc(1), SamplerConfig::edm(1)] {
        let out = envdiff_core::sampler::sample(&g, &y, &cfg, &s, &mut stream(1)).unwrap();
        assert!(out.n0.is_finite());
        assert_eq!(g.id(), "gaussian[sigma_prior=0.1]");
    }
}
